#pragma once

#include "balmatch/cohort.hpp"
#include "balmatch/dbsem.hpp"
#include "balmatch/error.hpp"
#include "balmatch/oracle.hpp"
#include "balmatch/propensity.hpp"
#include "balmatch/psm.hpp"
#include "balmatch/rational.hpp"
#include "balmatch/rng.hpp"
#include "balmatch/stats.hpp"
#include "balmatch/synth.hpp"
