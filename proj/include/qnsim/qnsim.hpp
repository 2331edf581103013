#pragma once

#include "qnsim/errors.hpp"
#include "qnsim/types.hpp"
#include "qnsim/linalg.hpp"
#include "qnsim/mesh.hpp"
#include "qnsim/generators.hpp"
#include "qnsim/materials.hpp"
#include "qnsim/dynamics.hpp"
#include "qnsim/solvers.hpp"
#include "qnsim/scenario.hpp"
#include "qnsim/harness.hpp"
