#pragma once

// Variational inference over DAG structures of linear-Gaussian SCMs:
// graph core, data generation, BGe marginal likelihood, Gibbs structure
// prior, autoregressive/factorized variational families, score-function
// trainer, exact enumeration oracle, and experiment orchestration.

#include "dagvi/adam.hpp"
#include "dagvi/bge.hpp"
#include "dagvi/exact.hpp"
#include "dagvi/family.hpp"
#include "dagvi/graph.hpp"
#include "dagvi/prior.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/runner.hpp"
#include "dagvi/scm.hpp"
#include "dagvi/trainer.hpp"
