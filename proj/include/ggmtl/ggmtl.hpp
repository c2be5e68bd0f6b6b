#pragma once

// Graph-guided multi-task regression: bilevel edge learning over
// Laplacian-smoothed linear models.

#include "ggmtl/data_io.hpp"
#include "ggmtl/driver.hpp"
#include "ggmtl/error.hpp"
#include "ggmtl/experiment.hpp"
#include "ggmtl/hypergradient.hpp"
#include "ggmtl/linalg.hpp"
#include "ggmtl/metrics.hpp"
#include "ggmtl/model.hpp"
#include "ggmtl/mtl_solver.hpp"
#include "ggmtl/synth.hpp"
#include "ggmtl/task_graph.hpp"
