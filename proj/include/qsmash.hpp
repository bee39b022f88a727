#pragma once

#include "qsmash/engine.hpp"
#include "qsmash/errors.hpp"
#include "qsmash/learning.hpp"
#include "qsmash/persistence.hpp"
#include "qsmash/planner.hpp"
#include "qsmash/rng.hpp"
#include "qsmash/scenario.hpp"
#include "qsmash/world.hpp"
