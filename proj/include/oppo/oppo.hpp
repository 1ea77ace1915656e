// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "oppo/analysis.hpp"
#include "oppo/baselines.hpp"
#include "oppo/config.hpp"
#include "oppo/env.hpp"
#include "oppo/error.hpp"
#include "oppo/evidence.hpp"
#include "oppo/exact.hpp"
#include "oppo/experiment.hpp"
#include "oppo/interop.hpp"
#include "oppo/oracle.hpp"
#include "oppo/trainer.hpp"
#include "oppo/verify.hpp"
