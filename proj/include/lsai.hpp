#pragma once

// Umbrella header.

#include "lsai/aggregation.hpp"
#include "lsai/comms.hpp"
#include "lsai/config.hpp"
#include "lsai/experiment.hpp"
#include "lsai/fusion.hpp"
#include "lsai/model_core.hpp"
#include "lsai/policy_rl.hpp"
#include "lsai/rng.hpp"
#include "lsai/run_files.hpp"
#include "lsai/splitting.hpp"
#include "lsai/trace.hpp"
#include "lsai/verify.hpp"
#include "lsai/world.hpp"
