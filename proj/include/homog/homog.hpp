#pragma once

#include "homog/errors.hpp"
#include "homog/spectral_grid.hpp"
#include "homog/spectrum.hpp"
#include "homog/random_field.hpp"
#include "homog/effective_medium.hpp"
#include "homog/evolution.hpp"
#include "homog/duhamel_graphs.hpp"
#include "homog/fluctuation_stats.hpp"
#include "homog/ensemble.hpp"
#include "homog/experiment.hpp"
