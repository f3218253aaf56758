#pragma once

// Umbrella header.

#include "pagg/baselines.hpp"
#include "pagg/cohort_io.hpp"
#include "pagg/embedding.hpp"
#include "pagg/interpret.hpp"
#include "pagg/metrics.hpp"
#include "pagg/mixture.hpp"
#include "pagg/pipeline.hpp"
#include "pagg/predictor.hpp"
#include "pagg/prototypes.hpp"
#include "pagg/set_data.hpp"
#include "pagg/sinkhorn.hpp"
#include "pagg/synthetic.hpp"

namespace pagg {
inline constexpr const char* kVersion = "0.1.0";
}
