#pragma once

#include "model/config.hpp"
#include "model/model.hpp"
#include "model/checkpoint.hpp"
