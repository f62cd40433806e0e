#pragma once

#include "gfkpp/error.hpp"
#include "gfkpp/rng.hpp"
#include "gfkpp/metric_graph.hpp"
#include "gfkpp/scaling.hpp"
#include "gfkpp/random_walk.hpp"
#include "gfkpp/trajectory.hpp"
#include "gfkpp/bvm.hpp"
#include "gfkpp/sde.hpp"
#include "gfkpp/duality.hpp"
#include "gfkpp/harness.hpp"
