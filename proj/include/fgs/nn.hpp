#pragma once

#include <string>
#include <vector>

#include "fgs/adam.hpp"
#include "fgs/ops.hpp"
#include "fgs/rng.hpp"

namespace fgs::nn {

enum class Activation { relu, tanh, none };

/// Plain fully-connected stack. Hidden layers use the given activation; the
/// output layer is linear. `zero_init_output` starts the final layer at zero
/// so networks predict exact zeros before any training step.
struct Mlp {
    std::vector<diff::TensorPtr> weights;  // [in,out] per layer
    std::vector<diff::TensorPtr> biases;   // [out] per layer
    Activation hidden_act = Activation::relu;

    static Mlp create(diff::ParamStore& store, const std::string& prefix,
                      const std::vector<std::int64_t>& dims, Rng& rng, diff::Dtype dtype,
                      Activation hidden_act = Activation::relu, bool zero_init_output = false);

    diff::TensorPtr forward(const diff::TensorPtr& x) const;
    std::vector<std::string> param_names(const std::string& prefix) const;
    std::size_t layer_count() const { return weights.size(); }
};

/// Uniform Glorot-style initialization for a [rows, cols] weight tensor.
void init_linear(diff::TensorPtr& w, Rng& rng);

}  // namespace fgs::nn
