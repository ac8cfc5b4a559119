#pragma once

#include "splitquant/cluster.hpp"
#include "splitquant/graph.hpp"
#include "splitquant/metrics.hpp"
#include "splitquant/model_io.hpp"
#include "splitquant/quant.hpp"
#include "splitquant/tensor.hpp"
#include "splitquant/transform.hpp"
