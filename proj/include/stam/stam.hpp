#pragma once

#include "stam/autodiff.hpp"
#include "stam/checkpoint.hpp"
#include "stam/dataset.hpp"
#include "stam/error.hpp"
#include "stam/features.hpp"
#include "stam/gradcheck.hpp"
#include "stam/graph.hpp"
#include "stam/layout.hpp"
#include "stam/metrics.hpp"
#include "stam/model.hpp"
#include "stam/nn.hpp"
#include "stam/pose_io.hpp"
#include "stam/preprocess.hpp"
#include "stam/rng.hpp"
#include "stam/synth.hpp"
#include "stam/tensor.hpp"
#include "stam/train.hpp"
