#pragma once

#include "rakekit/csv.hpp"
#include "rakekit/error.hpp"
#include "rakekit/experiments.hpp"
#include "rakekit/krylov.hpp"
#include "rakekit/linop.hpp"
#include "rakekit/loss.hpp"
#include "rakekit/solver.hpp"
#include "rakekit/table.hpp"
#include "rakekit/uq.hpp"
