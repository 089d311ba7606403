#pragma once

#include "pdfpm/fdgrad.hpp"
#include "pdfpm/harness.hpp"
#include "pdfpm/model.hpp"
#include "pdfpm/random.hpp"
#include "pdfpm/robust.hpp"
#include "pdfpm/scaling.hpp"
#include "pdfpm/solver.hpp"
#include "pdfpm/subsolve.hpp"
#include "pdfpm/types.hpp"
