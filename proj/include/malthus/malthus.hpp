#pragma once

#include "errors.hpp"
#include "types.hpp"
#include "quadrature.hpp"
#include "ode.hpp"
#include "parallel.hpp"
#include "hazard.hpp"
#include "fragmentation.hpp"
#include "model.hpp"
#include "flow.hpp"
#include "io.hpp"
#include "renewal.hpp"
#include "eigen.hpp"
#include "random.hpp"
#include "simulate.hpp"
#include "stationary.hpp"
