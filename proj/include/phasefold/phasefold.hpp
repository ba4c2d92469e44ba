#pragma once

#include "phasefold/baselines.hpp"
#include "phasefold/bench.hpp"
#include "phasefold/dataset.hpp"
#include "phasefold/density/model.hpp"
#include "phasefold/error.hpp"
#include "phasefold/generators.hpp"
#include "phasefold/io.hpp"
#include "phasefold/metrics.hpp"
#include "phasefold/parallel.hpp"
#include "phasefold/report.hpp"
#include "phasefold/rng.hpp"
#include "phasefold/selection.hpp"
