#pragma once

#include "rdsmall/bandwidth.hpp"
#include "rdsmall/core.hpp"
#include "rdsmall/diss.hpp"
#include "rdsmall/error.hpp"
#include "rdsmall/inference.hpp"
#include "rdsmall/kernel_regression.hpp"
#include "rdsmall/local_randomization.hpp"
#include "rdsmall/simulation.hpp"
