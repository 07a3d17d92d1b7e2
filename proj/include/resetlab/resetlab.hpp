#pragma once

#include "errors.hpp"
#include "state_space.hpp"
#include "elements.hpp"
#include "hosidf.hpp"
#include "controller.hpp"
#include "hybrid_sim.hpp"
#include "stability.hpp"
#include "config.hpp"
#include "format.hpp"
#include "parallel.hpp"
