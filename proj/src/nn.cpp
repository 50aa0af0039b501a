#include "fgs/nn.hpp"

#include <cmath>

namespace fgs::nn {

using diff::TensorPtr;

void init_linear(TensorPtr& w, Rng& rng) {
    const double fan_in = static_cast<double>(w->shape[0]);
    const double fan_out = static_cast<double>(w->shape[1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> vals(w->data.size());
    for (auto& v : vals) v = rng.uniform(-bound, bound);
    w->set_data(vals);
}

Mlp Mlp::create(diff::ParamStore& store, const std::string& prefix,
                const std::vector<std::int64_t>& dims, Rng& rng, diff::Dtype dtype,
                Activation hidden_act, bool zero_init_output) {
    if (dims.size() < 2) throw Error(cat("Mlp: need at least input/output dims for '", prefix, "'"));
    Mlp mlp;
    mlp.hidden_act = hidden_act;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        auto w = store.create(prefix + "w" + std::to_string(l), {dims[l], dims[l + 1]}, dtype);
        auto b = store.create(prefix + "b" + std::to_string(l), {dims[l + 1]}, dtype);
        const bool last = l + 2 == dims.size();
        if (!(last && zero_init_output)) init_linear(w, rng);
        mlp.weights.push_back(std::move(w));
        mlp.biases.push_back(std::move(b));
    }
    return mlp;
}

TensorPtr Mlp::forward(const TensorPtr& x) const {
    TensorPtr h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = diff::add_rowvec(diff::matmul(h, weights[l]), biases[l]);
        if (l + 1 < weights.size()) {
            if (hidden_act == Activation::relu) h = diff::relu(h);
            else if (hidden_act == Activation::tanh) h = diff::tanh(h);
        }
    }
    return h;
}

std::vector<std::string> Mlp::param_names(const std::string& prefix) const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        names.push_back(prefix + "w" + std::to_string(l));
        names.push_back(prefix + "b" + std::to_string(l));
    }
    return names;
}

}  // namespace fgs::nn
