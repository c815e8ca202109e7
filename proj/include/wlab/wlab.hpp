#pragma once

#include "wlab/cylindrical.hpp"
#include "wlab/derivs.hpp"
#include "wlab/doubling.hpp"
#include "wlab/entropy.hpp"
#include "wlab/errors.hpp"
#include "wlab/filter.hpp"
#include "wlab/gauge.hpp"
#include "wlab/hjb.hpp"
#include "wlab/io.hpp"
#include "wlab/measure.hpp"
#include "wlab/model.hpp"
#include "wlab/parallel.hpp"
#include "wlab/quadrature.hpp"
#include "wlab/transport.hpp"
#include "wlab/varcalc.hpp"
