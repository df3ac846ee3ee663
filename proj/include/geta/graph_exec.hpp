#pragma once

#include <map>
#include <string>

#include "geta/qadg.hpp"
#include "geta/tensor.hpp"
#include "geta/trace_graph.hpp"

namespace geta::graph {

/// Forward-only interpreter for merged graphs. Supports linear, conv2d
/// (stride 1, valid/same padding from attrs), batchnorm as a per-channel
/// affine, relu, add, concat (channel axis), flatten and input/output
/// markers. Quantizer annotations are ignored; values flow at full
/// precision.
std::map<std::string, Tensor> execute(const TraceGraph& g,
                                      const ParamStore& params,
                                      const std::map<std::string, Tensor>& inputs);

}  // namespace geta::graph
