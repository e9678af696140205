#pragma once

// Umbrella header.

#include "scanshare/accounting.hpp"
#include "scanshare/common.hpp"
#include "scanshare/data.hpp"
#include "scanshare/image.hpp"
#include "scanshare/metrics.hpp"
#include "scanshare/model.hpp"
#include "scanshare/nn.hpp"
#include "scanshare/render.hpp"
#include "scanshare/tensor.hpp"
#include "scanshare/training.hpp"
