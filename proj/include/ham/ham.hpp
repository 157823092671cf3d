#pragma once

#include "ham/linalg.hpp"
#include "ham/model.hpp"
#include "ham/io.hpp"
#include "ham/estimators.hpp"
#include "ham/risk.hpp"
#include "ham/optimize.hpp"
#include "ham/inference.hpp"
#include "ham/selection.hpp"
#include "ham/rng.hpp"
#include "ham/sim.hpp"
#include "ham/checks.hpp"
