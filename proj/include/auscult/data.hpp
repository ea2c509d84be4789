#pragma once

#include "data/lexicon.hpp"
#include "data/templates.hpp"
#include "data/tokenizer.hpp"
#include "data/examples.hpp"
#include "data/datagen.hpp"
