#pragma once

#include "egonet/common.hpp"
#include "egonet/kitti_io.hpp"
#include "egonet/geometry.hpp"
#include "egonet/crossratio.hpp"
#include "egonet/pose.hpp"
#include "egonet/heatmap.hpp"
#include "egonet/lifter.hpp"
#include "egonet/dataset.hpp"
#include "egonet/dataset_io.hpp"
#include "egonet/training.hpp"
#include "egonet/metrics.hpp"
#include "egonet/bev.hpp"
#include "egonet/config.hpp"
