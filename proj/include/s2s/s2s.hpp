#pragma once

#include "s2s/checkpoint.hpp"
#include "s2s/dense.hpp"
#include "s2s/error.hpp"
#include "s2s/experiment.hpp"
#include "s2s/model.hpp"
#include "s2s/ops.hpp"
#include "s2s/rng.hpp"
#include "s2s/tape.hpp"
#include "s2s/tensor.hpp"
#include "s2s/text.hpp"
#include "s2s/train.hpp"
