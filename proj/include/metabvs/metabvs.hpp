#pragma once

#include "csv.hpp"
#include "ebayes.hpp"
#include "harness.hpp"
#include "linmodel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "types.hpp"
