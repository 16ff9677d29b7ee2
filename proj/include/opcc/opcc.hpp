#pragma once

#include "opcc/attention.hpp"
#include "opcc/coder.hpp"
#include "opcc/common.hpp"
#include "opcc/context.hpp"
#include "opcc/dist.hpp"
#include "opcc/geometry.hpp"
#include "opcc/io.hpp"
#include "opcc/math.hpp"
#include "opcc/metrics.hpp"
#include "opcc/model.hpp"
#include "opcc/octree.hpp"
#include "opcc/pca.hpp"
#include "opcc/rangecoder.hpp"
#include "opcc/synth.hpp"
#include "opcc/train.hpp"
