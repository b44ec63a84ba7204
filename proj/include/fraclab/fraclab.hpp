#pragma once

#include "fraclab/errors.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/fracop.hpp"
#include "fraclab/fourier_oracle.hpp"
#include "fraclab/nonlinearity.hpp"
#include "fraclab/heat.hpp"
#include "fraclab/wave.hpp"
#include "fraclab/linearize.hpp"
#include "fraclab/runge.hpp"
#include "fraclab/inverse.hpp"
#include "fraclab/io.hpp"
#include "fraclab/verify.hpp"
#include "fraclab/plot.hpp"
#include "fraclab/app.hpp"
