#pragma once

#include "npmc/bootstrap_filter.hpp"
#include "npmc/config.hpp"
#include "npmc/experiment.hpp"
#include "npmc/linear_gaussian.hpp"
#include "npmc/nis.hpp"
#include "npmc/numerics.hpp"
#include "npmc/parallel.hpp"
#include "npmc/pmh.hpp"
#include "npmc/prior.hpp"
#include "npmc/rng.hpp"
#include "npmc/ssm.hpp"
#include "npmc/tracking.hpp"
#include "npmc/verify.hpp"
