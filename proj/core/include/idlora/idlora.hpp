#pragma once

#include "idlora/adapters.hpp"
#include "idlora/clustering.hpp"
#include "idlora/errors.hpp"
#include "idlora/interpolative.hpp"
#include "idlora/linalg.hpp"
#include "idlora/matrix.hpp"
#include "idlora/parallel.hpp"
#include "idlora/registry.hpp"
#include "idlora/serialization.hpp"
#include "idlora/theory.hpp"
#include "idlora/training.hpp"
#include "idlora/version.hpp"
