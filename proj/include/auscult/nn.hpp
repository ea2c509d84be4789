#pragma once

#include "nn/conv.hpp"
#include "nn/loss.hpp"
#include "nn/ops.hpp"
#include "nn/rng.hpp"
#include "nn/tape.hpp"
#include "nn/tensor.hpp"
