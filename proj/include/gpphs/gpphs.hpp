#pragma once

#include "gpphs/errors.hpp"
#include "gpphs/expr.hpp"
#include "gpphs/parallel.hpp"
#include "gpphs/numerics.hpp"
#include "gpphs/kernels.hpp"
#include "gpphs/dynamics.hpp"
#include "gpphs/learning.hpp"
#include "gpphs/posterior.hpp"
#include "gpphs/maglev.hpp"
#include "gpphs/io.hpp"
