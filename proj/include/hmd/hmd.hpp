#pragma once

// Everything in one include.

#include "hmd/common.hpp"
#include "hmd/seqio.hpp"
#include "hmd/embed.hpp"
#include "hmd/forest.hpp"
#include "hmd/metrics.hpp"
#include "hmd/cascade.hpp"
#include "hmd/hierarchy.hpp"
#include "hmd/explain.hpp"
#include "hmd/evalharness.hpp"
#include "hmd/store.hpp"
