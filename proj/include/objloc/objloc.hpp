#pragma once

#include "objloc/alignment.hpp"
#include "objloc/association.hpp"
#include "objloc/core.hpp"
#include "objloc/evaluation.hpp"
#include "objloc/io.hpp"
#include "objloc/simulation.hpp"
#include "objloc/submap.hpp"
#include "objloc/triangulation.hpp"
