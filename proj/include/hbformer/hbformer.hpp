#pragma once

// Umbrella header: the whole library.

#include "hbformer/attention.hpp"
#include "hbformer/checkpoint.hpp"
#include "hbformer/decoder.hpp"
#include "hbformer/encoder.hpp"
#include "hbformer/errors.hpp"
#include "hbformer/gradcheck.hpp"
#include "hbformer/image_io.hpp"
#include "hbformer/layers.hpp"
#include "hbformer/model.hpp"
#include "hbformer/nn.hpp"
#include "hbformer/ops.hpp"
#include "hbformer/runconfig.hpp"
#include "hbformer/tensor.hpp"
#include "hbformer/training.hpp"
