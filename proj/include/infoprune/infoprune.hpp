#pragma once

// Umbrella header.
#include "infoprune/applier.hpp"
#include "infoprune/archive.hpp"
#include "infoprune/costs.hpp"
#include "infoprune/diagnostics.hpp"
#include "infoprune/manifest.hpp"
#include "infoprune/planner.hpp"
#include "infoprune/refnet.hpp"
#include "infoprune/scoring.hpp"
#include "infoprune/zoo.hpp"
