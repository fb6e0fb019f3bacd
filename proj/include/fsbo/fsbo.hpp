#pragma once

// Umbrella header for the whole library.

#include "fsbo/adam.hpp"
#include "fsbo/baselines.hpp"
#include "fsbo/bo.hpp"
#include "fsbo/dkgp.hpp"
#include "fsbo/error.hpp"
#include "fsbo/gp.hpp"
#include "fsbo/harness.hpp"
#include "fsbo/kernels.hpp"
#include "fsbo/meta_train.hpp"
#include "fsbo/metadata.hpp"
#include "fsbo/mlp.hpp"
#include "fsbo/rng.hpp"
#include "fsbo/search_space.hpp"
#include "fsbo/sine_demo.hpp"
#include "fsbo/synthetic.hpp"
#include "fsbo/warmstart.hpp"
