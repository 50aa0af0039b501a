#include "fgs/adam.hpp"

#include <cmath>

namespace fgs::diff {

TensorPtr ParamStore::create(const std::string& name, Shape shape, Dtype dtype) {
    auto t = Tensor::leaf(std::move(shape), dtype, /*requires_grad=*/true);
    put(name, t);
    return t;
}

void ParamStore::put(const std::string& name, TensorPtr t) {
    if (by_name_.count(name)) throw Error(cat("ParamStore: duplicate parameter '", name, "'"));
    order_.push_back(name);
    by_name_.emplace(name, std::move(t));
}

TensorPtr ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error(cat("ParamStore: unknown parameter '", name, "'"));
    return it->second;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& n : order_)
        if (n.rfind(prefix, 0) == 0) out.push_back(n);
    return out;
}

void ParamStore::zero_grad() {
    for (const auto& n : order_) by_name_.at(n)->zero_grad();
}

Adam::Adam(ParamStore& store, AdamConfig config) : store_(store), config_(config) {}

int Adam::add_group(std::vector<std::string> names, double lr) {
    for (const auto& n : names) {
        auto t = store_.get(n);  // throws on unknown name
        state_.first_moment.emplace(n, std::vector<double>(t->data.size(), 0.0));
        state_.second_moment.emplace(n, std::vector<double>(t->data.size(), 0.0));
    }
    groups_.push_back({std::move(names), lr});
    return static_cast<int>(groups_.size()) - 1;
}

void Adam::set_group_lr(int group, double lr) {
    groups_.at(static_cast<std::size_t>(group)).lr = lr;
}

double Adam::group_lr(int group) const {
    return groups_.at(static_cast<std::size_t>(group)).lr;
}

void Adam::step() {
    state_.step_count += 1;
    const double t = static_cast<double>(state_.step_count);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (const auto& group : groups_) {
        for (const auto& name : group.names) {
            auto param = store_.get(name);
            if (param->grad.size() != param->data.size())
                throw Error(cat("adam_step: missing grad for parameter '", name, "'"));
            auto& m = state_.first_moment.at(name);
            auto& v = state_.second_moment.at(name);
            for (std::size_t i = 0; i < param->data.size(); ++i) {
                const double g = param->grad[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                param->data[i] -= group.lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
            if (param->dtype == Dtype::F32) round_f32(param->data);
            check_finite("adam_step", param->data);
        }
    }
}

}  // namespace fgs::diff
