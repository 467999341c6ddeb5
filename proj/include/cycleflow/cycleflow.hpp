#pragma once

#include "cycleflow/admm.hpp"
#include "cycleflow/cycle_basis.hpp"
#include "cycleflow/errors.hpp"
#include "cycleflow/exact.hpp"
#include "cycleflow/flow_reduction.hpp"
#include "cycleflow/graph.hpp"
#include "cycleflow/io.hpp"
#include "cycleflow/opf.hpp"
#include "cycleflow/solver.hpp"
