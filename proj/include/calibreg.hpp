#pragma once

#include "calibreg/dist_core.hpp"
#include "calibreg/calib_maps.hpp"
#include "calibreg/conformal.hpp"
#include "calibreg/metrics.hpp"
#include "calibreg/nn.hpp"
#include "calibreg/heads.hpp"
#include "calibreg/regularizers.hpp"
#include "calibreg/train_reg.hpp"
#include "calibreg/stats_harness.hpp"
#include "calibreg/data.hpp"
#include "calibreg/runner.hpp"
