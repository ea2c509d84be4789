#pragma once

#include "eval/ablation.hpp"
#include "eval/attention.hpp"
#include "eval/harness.hpp"
#include "eval/judge.hpp"
#include "eval/metrics.hpp"
#include "eval/remote_judge.hpp"
#include "eval/zero_shot.hpp"
