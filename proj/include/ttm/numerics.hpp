#pragma once

#include "ttm/error.hpp"
#include "ttm/numerics/grad_check.hpp"
#include "ttm/numerics/kernels.hpp"
#include "ttm/numerics/ops.hpp"
#include "ttm/numerics/rng.hpp"
#include "ttm/numerics/tape.hpp"
#include "ttm/numerics/tensor.hpp"
#include "ttm/numerics/types.hpp"
