#pragma once

#include "ttsn/autodiff.hpp"
#include "ttsn/binary_io.hpp"
#include "ttsn/data.hpp"
#include "ttsn/error.hpp"
#include "ttsn/ett.hpp"
#include "ttsn/model.hpp"
#include "ttsn/ops.hpp"
#include "ttsn/pgm.hpp"
#include "ttsn/rng.hpp"
#include "ttsn/tensor.hpp"
#include "ttsn/train.hpp"
#include "ttsn/tss.hpp"
