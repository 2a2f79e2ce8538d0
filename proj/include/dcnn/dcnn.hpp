#pragma once

// Umbrella header for the digit-recognition CNN library.

#include "data.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "serialize.hpp"
#include "tensor.hpp"
#include "train.hpp"
