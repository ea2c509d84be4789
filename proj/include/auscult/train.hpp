#pragma once

#include "train/batch.hpp"
#include "train/dpo.hpp"
#include "train/features.hpp"
#include "train/optim.hpp"
#include "train/sft.hpp"
