#pragma once

// Umbrella header: regression on linked files with mismatch-error
// adjustment — two-component and pairwise-mixture EM fits, sandwich
// inference, reference estimators, simulation scenarios, and CSV I/O.

#include "baselines.hpp"
#include "extended.hpp"
#include "inference.hpp"
#include "io.hpp"
#include "plain.hpp"
#include "simgen.hpp"
