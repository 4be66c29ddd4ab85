#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagvi/exact.hpp"
#include "dagvi/trainer.hpp"

namespace dagvi {

struct EvalConfig {
  int shd_samples = 1000;
  int marginal_samples = 10000;
};

// One JSON document drives every subcommand; CLI flags override fields.
struct ExperimentConfig {
  int version = 1;
  int nodes = 5;
  int samples = 100;
  std::uint64_t seed = 0;
  int num_seeds = 1;
  std::string family = "autoregressive";  // autoregressive | factorized | both (paired sweep)
  int epochs = 30000;
  int batch = 1000;
  double lr = 1e-2;
  int hidden = 48;
  double baseline_decay = 0.99;
  double expected_edges = 0.0;  // 0 -> nodes
  bool mec_filter = false;
  bool deterministic = false;
  std::string out;  // empty -> $DAGVI_OUT, then ./runs
  PriorConfig prior;
  BgeConfig bge;
  EvalConfig eval;
  std::vector<std::string> metrics = {"shd", "auroc", "hellinger"};

  void validate() const {
    if (version != 1) throw std::invalid_argument("config: unsupported version");
    if (nodes < 2) throw std::invalid_argument("config: nodes < 2");
    if (samples < 1) throw std::invalid_argument("config: samples < 1");
    if (num_seeds < 1) throw std::invalid_argument("config: num_seeds < 1");
    if (family != "autoregressive" && family != "factorized" && family != "both")
      throw std::invalid_argument("config: unknown family " + family);
    TrainConfig tc = train_config(Family::autoregressive, seed);
    tc.validate();
  }

  bool wants(const std::string& metric) const {
    for (const auto& m : metrics)
      if (m == metric) return true;
    return false;
  }

  TrainConfig train_config(Family fam, std::uint64_t run_seed) const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch;
    tc.learning_rate = lr;
    tc.baseline_decay = baseline_decay;
    tc.seed = run_seed;
    tc.prior = prior;
    tc.prior.total_epochs = epochs;
    tc.bge = bge;
    tc.family = fam;
    tc.hidden_size = hidden;
    return tc;
  }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["version"] = c.version;
  j["nodes"] = c.nodes;
  j["samples"] = c.samples;
  j["seed"] = c.seed;
  j["num_seeds"] = c.num_seeds;
  j["family"] = c.family;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["hidden"] = c.hidden;
  j["baseline_decay"] = c.baseline_decay;
  j["expected_edges"] = c.expected_edges;
  j["mec_filter"] = c.mec_filter;
  j["deterministic"] = c.deterministic;
  j["out"] = c.out;
  j["prior"] = {{"lambda_sparse", c.prior.lambda_sparse},
                {"temp_min", c.prior.temp_min},
                {"temp_max", c.prior.temp_max}};
  j["bge"] = {{"alpha_mu", c.bge.alpha_mu},
              {"alpha_w", c.bge.alpha_w},
              {"gamma_scalar", c.bge.gamma_scalar},
              {"t_scale_mode", c.bge.t_scale_mode}};
  j["eval"] = {{"shd_samples", c.eval.shd_samples},
               {"marginal_samples", c.eval.marginal_samples}};
  j["metrics"] = c.metrics;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.version = j.value("version", c.version);
  c.nodes = j.value("nodes", c.nodes);
  c.samples = j.value("samples", c.samples);
  c.seed = j.value("seed", c.seed);
  c.num_seeds = j.value("num_seeds", c.num_seeds);
  c.family = j.value("family", c.family);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.hidden = j.value("hidden", c.hidden);
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.expected_edges = j.value("expected_edges", c.expected_edges);
  c.mec_filter = j.value("mec_filter", c.mec_filter);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.out = j.value("out", c.out);
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    c.prior.lambda_sparse = p.value("lambda_sparse", c.prior.lambda_sparse);
    c.prior.temp_min = p.value("temp_min", c.prior.temp_min);
    c.prior.temp_max = p.value("temp_max", c.prior.temp_max);
  }
  if (j.contains("bge")) {
    const auto& b = j.at("bge");
    c.bge.alpha_mu = b.value("alpha_mu", c.bge.alpha_mu);
    c.bge.alpha_w = b.value("alpha_w", c.bge.alpha_w);
    c.bge.gamma_scalar = b.value("gamma_scalar", c.bge.gamma_scalar);
    c.bge.t_scale_mode = b.value("t_scale_mode", c.bge.t_scale_mode);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval.shd_samples = e.value("shd_samples", c.eval.shd_samples);
    c.eval.marginal_samples = e.value("marginal_samples", c.eval.marginal_samples);
  }
  if (j.contains("metrics")) c.metrics = j.at("metrics").get<std::vector<std::string>>();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return config_from_json(j);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Hash of the experiment content; the output location is excluded so moving a
// run does not change its identity.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("out");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline std::filesystem::path output_root(const ExperimentConfig& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("DAGVI_OUT"); env && *env) return env;
  return "runs";
}

inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("atomic_write_text: cannot open " + tmp.string());
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

inline double elapsed_or_zero(const ExperimentConfig& cfg,
                              std::chrono::steady_clock::time_point start) {
  if (cfg.deterministic) return 0.0;  // keeps result files rerun-identical
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct GeneratedInstance {
  WeightedScm scm;
  Dataset data;
};

inline GeneratedInstance run_generate(const ExperimentConfig& cfg, std::uint64_t seed,
                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const double ee = cfg.expected_edges > 0.0 ? cfg.expected_edges : cfg.nodes;
  Rng graph_rng = make_rng(seed, 10);
  AdjacencyMatrix graph = cfg.mec_filter ? sample_er_dag_filtered(cfg.nodes, ee, graph_rng)
                                         : sample_er_dag(cfg.nodes, ee, graph_rng);
  Rng weight_rng = make_rng(seed, 11);
  WeightedScm scm = sample_weights(graph, weight_rng);
  Rng data_rng = make_rng(seed, 12);
  Dataset data = simulate(scm, cfg.samples, data_rng);

  nlohmann::json sj = scm_to_json(scm);
  sj["seed"] = seed;
  sj["config_hash"] = config_hash(cfg);
  atomic_write_text(dir / "scm.json", sj.dump(2) + "\n");
  const std::filesystem::path tmp = dir / "data.csv.tmp";
  write_csv(data, tmp.string());
  std::filesystem::rename(tmp, dir / "data.csv");
  return {std::move(scm), std::move(data)};
}

struct TrainedRun {
  TrainResult result;
  double wall_seconds = 0.0;
};

inline TrainedRun run_train(const ExperimentConfig& cfg, Family fam, std::uint64_t seed,
                            const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto start = std::chrono::steady_clock::now();
  TrainResult res = train(data, cfg.train_config(fam, seed));
  const double seconds = elapsed_or_zero(cfg, start);

  nlohmann::json mj = model_to_json(res.model);
  mj["seed"] = seed;
  mj["config_hash"] = config_hash(cfg);
  atomic_write_text(dir / "model.json", mj.dump(2) + "\n");

  std::ostringstream hist;
  write_history_csv(res.history, hist);
  atomic_write_text(dir / "history.csv", hist.str());
  return {std::move(res), seconds};
}

struct RunResult {
  std::uint64_t seed = 0;
  std::string family;
  double final_elbo = std::nan("");
  double expected_shd_value = std::nan("");
  double auroc_value = std::nan("");
  double hellinger_value = std::nan("");
  double wall_seconds = 0.0;
  std::string hash;
  std::string error;
};

// Metrics that do not apply (d too large for enumeration, undefined ranking)
// are omitted rather than serialized as null.
inline nlohmann::json result_to_json(const RunResult& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["family"] = r.family;
  if (!std::isnan(r.final_elbo)) j["final_elbo"] = r.final_elbo;
  if (!std::isnan(r.expected_shd_value)) j["expected_shd"] = r.expected_shd_value;
  if (!std::isnan(r.auroc_value)) j["auroc"] = r.auroc_value;
  if (!std::isnan(r.hellinger_value)) j["hellinger"] = r.hellinger_value;
  j["wall_seconds"] = r.wall_seconds;
  j["config_hash"] = r.hash;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline RunResult run_eval(const ExperimentConfig& cfg, const Model& model, const WeightedScm& scm,
                          const Dataset& data, std::uint64_t seed,
                          std::optional<double> final_elbo, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto start = std::chrono::steady_clock::now();
  const int d = model_dim(model);
  if (d != scm.graph.dim() || d != data.dim())
    throw DimensionMismatchError("run_eval: model/ground-truth/data dimensions differ");

  RunResult r;
  r.seed = seed;
  r.family = family_name(model);
  r.hash = config_hash(cfg);

  if (cfg.wants("shd")) {
    Rng shd_rng = make_rng(seed, 20);
    r.expected_shd_value = expected_shd(model, scm.graph, cfg.eval.shd_samples, shd_rng);
  }
  if (cfg.wants("auroc")) {
    Rng marg_rng = make_rng(seed, 21);
    const Eigen::MatrixXd marg = edge_marginals(model, cfg.eval.marginal_samples, marg_rng);
    try {
      r.auroc_value = auroc(marg, scm.graph);
    } catch (const UndefinedMetricError&) {
      // all-empty/all-full ground truth: the field stays absent
    }
  }
  if (cfg.wants("hellinger") && d <= 4) {
    const SufficientStats stats = sufficient_stats(data);
    const BgeHyperparams hyper = cfg.bge.materialize(d);
    PriorConfig prior = cfg.prior;
    prior.total_epochs = cfg.epochs;
    ScoreCache cache;
    const EnumeratedPosterior post =
        enumerate_posterior(stats, hyper, prior.temp_max, prior, cache);
    r.hellinger_value = hellinger(model_distribution(model, d), post.dist);
  }

  if (final_elbo) {
    r.final_elbo = *final_elbo;
  } else {
    const SufficientStats stats = sufficient_stats(data);
    const BgeHyperparams hyper = cfg.bge.materialize(d);
    PriorConfig prior = cfg.prior;
    prior.total_epochs = cfg.epochs;
    ScoreCache cache;
    Rng elbo_rng = make_rng(seed, 22);
    r.final_elbo = elbo_estimate(model, stats, hyper, prior.temp_max, prior, cfg.batch,
                                 elbo_rng, cache);
  }

  r.wall_seconds = elapsed_or_zero(cfg, start);
  atomic_write_text(dir / "result.json", result_to_json(r).dump(2) + "\n");
  return r;
}

// generate -> train -> eval for one family on an already generated instance
inline RunResult run_one_family(const ExperimentConfig& cfg, Family fam, std::uint64_t seed,
                                const GeneratedInstance& inst, const std::filesystem::path& dir) {
  TrainedRun trained = run_train(cfg, fam, seed, inst.data, dir);
  const double final_elbo =
      trained.result.history.records.empty() ? std::nan("")
                                             : trained.result.history.records.back().elbo;
  RunResult r = run_eval(cfg, trained.result.model, inst.scm, inst.data, seed, final_elbo, dir);
  r.wall_seconds += trained.wall_seconds;
  atomic_write_text(dir / "result.json", result_to_json(r).dump(2) + "\n");
  return r;
}

inline nlohmann::json run_exact(const ExperimentConfig& cfg, const Dataset& data,
                                const Model* model, const AdjacencyMatrix* ground_truth,
                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int d = data.dim();
  if (d > 4) throw std::invalid_argument("run_exact: enumeration requires d <= 4");
  const SufficientStats stats = sufficient_stats(data);
  const BgeHyperparams hyper = cfg.bge.materialize(d);
  PriorConfig prior = cfg.prior;
  prior.total_epochs = cfg.epochs;
  ScoreCache cache;
  const EnumeratedPosterior post = enumerate_posterior(stats, hyper, prior.temp_max, prior, cache);

  std::ostringstream csv;
  write_distribution_csv(post.dist, ground_truth, csv);
  atomic_write_text(dir / "posterior.csv", csv.str());

  nlohmann::json j;
  j["config_hash"] = config_hash(cfg);
  j["lambda_t"] = prior.temp_max;
  j["log_evidence"] = post.log_evidence;
  j["log_evidence_note"] = "shifted by the prior's uncomputed log normalizer";
  std::uint64_t map_code = 0;
  for (std::uint64_t code = 0; code < post.dist.probs.size(); ++code)
    if (post.dist.probs[code] > post.dist.probs[map_code]) map_code = code;
  j["map_graph_index"] = map_code;
  j["map_probability"] = post.dist.probs[map_code];
  if (model) {
    j["model_hellinger"] = hellinger(model_distribution(*model, d), post.dist);
    std::ostringstream mcsv;
    write_distribution_csv(model_distribution(*model, d), ground_truth, mcsv);
    atomic_write_text(dir / "model_distribution.csv", mcsv.str());
  }
  atomic_write_text(dir / "exact.json", j.dump(2) + "\n");
  return j;
}

namespace detail {

inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

inline std::string cell(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

struct SweepOutcome {
  std::filesystem::path csv_path;
  int failures = 0;
};

// Runs generate -> train -> eval per seed (both families when family=="both",
// sharing the seed's data), then appends median/q25/q75 summary rows. A
// failing seed is recorded in its row's error column and the sweep continues.
inline SweepOutcome run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path root = output_root(cfg) / std::filesystem::path("sweep");
  std::filesystem::create_directories(root);
  const bool paired = cfg.family == "both";

  struct Row {
    std::uint64_t seed = 0;
    RunResult first;   // configured family (autoregressive when paired)
    RunResult second;  // factorized half of a paired run
    std::string error;
  };
  std::vector<Row> rows;
  int failures = 0;

  for (int s = 0; s < cfg.num_seeds; ++s) {
    Row row;
    row.seed = cfg.seed + static_cast<std::uint64_t>(s);
    const std::filesystem::path seed_dir = root / ("seed_" + std::to_string(row.seed));
    try {
      const GeneratedInstance inst = run_generate(cfg, row.seed, seed_dir);
      if (paired) {
        row.first = run_one_family(cfg, Family::autoregressive, row.seed, inst,
                                   seed_dir / "autoregressive");
        row.second =
            run_one_family(cfg, Family::factorized, row.seed, inst, seed_dir / "factorized");
      } else {
        row.first = run_one_family(cfg, family_from_string(cfg.family), row.seed, inst, seed_dir);
      }
    } catch (const std::exception& e) {
      row.error = e.what();
      ++failures;
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream os;
  const char* base_cols = "elbo,expected_shd,auroc,hellinger,wall_seconds";
  if (paired) {
    os << "seed,family_a,family_b,elbo_a,elbo_b,expected_shd_a,expected_shd_b,auroc_a,auroc_b,"
          "hellinger_a,hellinger_b,delta_hellinger,delta_shd,wall_seconds_a,wall_seconds_b,"
          "config_hash,error\n";
  } else {
    os << "seed,family," << base_cols << ",config_hash,error\n";
  }

  auto emit = [&](const std::string& label, const RunResult& a, const RunResult& b,
                  double delta_hellinger, double delta_shd, const std::string& error,
                  bool summary) {
    using detail::cell;
    if (paired) {
      os << label << ',' << (summary ? "" : "autoregressive") << ','
         << (summary ? "" : "factorized") << ',' << cell(a.final_elbo) << ','
         << cell(b.final_elbo) << ',' << cell(a.expected_shd_value) << ','
         << cell(b.expected_shd_value) << ',' << cell(a.auroc_value) << ','
         << cell(b.auroc_value) << ',' << cell(a.hellinger_value) << ','
         << cell(b.hellinger_value) << ',' << cell(delta_hellinger) << ','
         << cell(delta_shd) << ',' << cell(a.wall_seconds) << ',' << cell(b.wall_seconds)
         << ',' << (summary ? "" : config_hash(cfg)) << ',' << error << '\n';
    } else {
      os << label << ',' << (summary ? "" : a.family) << ',' << cell(a.final_elbo) << ','
         << cell(a.expected_shd_value) << ',' << cell(a.auroc_value) << ','
         << cell(a.hellinger_value) << ',' << cell(a.wall_seconds) << ','
         << (summary ? "" : config_hash(cfg)) << ',' << error << '\n';
    }
  };

  for (const auto& row : rows)
    emit(std::to_string(row.seed), row.first, row.second,
         row.second.hellinger_value - row.first.hellinger_value,
         row.second.expected_shd_value - row.first.expected_shd_value, row.error, false);

  auto summarize = [&](double p, const std::string& label) {
    auto collect = [&](auto field) {
      std::vector<double> vals;
      for (const auto& row : rows) {
        if (!row.error.empty()) continue;
        const double v = field(row);
        if (!std::isnan(v)) vals.push_back(v);
      }
      return detail::quantile(std::move(vals), p);
    };
    RunResult a, b;
    a.final_elbo = collect([](const Row& r) { return r.first.final_elbo; });
    a.expected_shd_value = collect([](const Row& r) { return r.first.expected_shd_value; });
    a.auroc_value = collect([](const Row& r) { return r.first.auroc_value; });
    a.hellinger_value = collect([](const Row& r) { return r.first.hellinger_value; });
    a.wall_seconds = collect([](const Row& r) { return r.first.wall_seconds; });
    double delta_hellinger = std::nan("");
    double delta_shd = std::nan("");
    if (paired) {
      b.final_elbo = collect([](const Row& r) { return r.second.final_elbo; });
      b.expected_shd_value = collect([](const Row& r) { return r.second.expected_shd_value; });
      b.auroc_value = collect([](const Row& r) { return r.second.auroc_value; });
      b.hellinger_value = collect([](const Row& r) { return r.second.hellinger_value; });
      b.wall_seconds = collect([](const Row& r) { return r.second.wall_seconds; });
      delta_hellinger = collect(
          [](const Row& r) { return r.second.hellinger_value - r.first.hellinger_value; });
      delta_shd = collect(
          [](const Row& r) { return r.second.expected_shd_value - r.first.expected_shd_value; });
    }
    emit(label, a, b, delta_hellinger, delta_shd, "", true);
  };
  summarize(0.5, "median");
  summarize(0.25, "q25");
  summarize(0.75, "q75");

  const std::filesystem::path csv_path = root / "sweep.csv";
  atomic_write_text(csv_path, os.str());
  return {csv_path, failures};
}

}  // namespace dagvi
