#pragma once

#include "tslm/numcore/autodiff.hpp"
#include "tslm/numcore/optim.hpp"
#include "tslm/numcore/tensor.hpp"
