#pragma once

// Umbrella header pulling in the whole toolkit.

#include "hazeforge/config.hpp"
#include "hazeforge/core.hpp"
#include "hazeforge/checkpoint.hpp"
#include "hazeforge/io.hpp"
#include "hazeforge/mappers.hpp"
#include "hazeforge/metrics.hpp"
#include "hazeforge/pipeline.hpp"
#include "hazeforge/resampler.hpp"
#include "hazeforge/rng.hpp"
#include "hazeforge/scattering.hpp"
#include "hazeforge/training.hpp"
