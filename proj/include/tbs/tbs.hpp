#pragma once

// Umbrella header.

#include "tbs/any_sampler.hpp"
#include "tbs/batch.hpp"
#include "tbs/bchao.hpp"
#include "tbs/checks.hpp"
#include "tbs/distsim.hpp"
#include "tbs/errors.hpp"
#include "tbs/harness.hpp"
#include "tbs/io.hpp"
#include "tbs/ml.hpp"
#include "tbs/random.hpp"
#include "tbs/rtbs.hpp"
#include "tbs/samplers.hpp"
