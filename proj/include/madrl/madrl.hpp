#pragma once

#include "madrl/signals.hpp"
#include "madrl/param_vector.hpp"
#include "madrl/autodiff.hpp"
#include "madrl/mlp.hpp"
#include "madrl/parallel.hpp"
#include "madrl/plant.hpp"
#include "madrl/stable_ops.hpp"
#include "madrl/policies.hpp"
#include "madrl/corridor_env.hpp"
#include "madrl/ddpg.hpp"
#include "madrl/verify.hpp"
#include "madrl/config.hpp"
#include "madrl/checkpoint.hpp"
#include "madrl/cli.hpp"
