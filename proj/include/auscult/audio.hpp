#pragma once

#include "audio/augment.hpp"
#include "audio/fft.hpp"
#include "audio/mel.hpp"
#include "audio/synth.hpp"
#include "audio/wav.hpp"
