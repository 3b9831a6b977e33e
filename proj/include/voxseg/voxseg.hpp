#pragma once

// Umbrella header for the whole library.

#include "voxseg/common.hpp"
#include "voxseg/config.hpp"
#include "voxseg/distance.hpp"
#include "voxseg/gradient_analysis.hpp"
#include "voxseg/grid.hpp"
#include "voxseg/inference.hpp"
#include "voxseg/io.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/nn/checkpoint.hpp"
#include "voxseg/nn/layers.hpp"
#include "voxseg/nn/network.hpp"
#include "voxseg/nn/ops.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/schedule.hpp"
#include "voxseg/subject.hpp"
#include "voxseg/surface.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/trainer.hpp"
#include "voxseg/weight_map.hpp"
