#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "fgs/tensor.hpp"

namespace fgs::diff {

/// Named trainable tensors. Iteration order is insertion order so optimizer
/// sweeps and checkpoints are deterministic.
class ParamStore {
public:
    TensorPtr create(const std::string& name, Shape shape, Dtype dtype);
    void put(const std::string& name, TensorPtr t);
    TensorPtr get(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) != 0; }
    const std::vector<std::string>& names() const { return order_; }
    /// Names beginning with `prefix`, in insertion order.
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    void zero_grad();

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, TensorPtr> by_name_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter Adam moments plus the shared step counter.
struct AdamState {
    std::unordered_map<std::string, std::vector<double>> first_moment;
    std::unordered_map<std::string, std::vector<double>> second_moment;
    std::int64_t step_count = 0;
};

/// Adam over an explicit subset of a ParamStore, organized in groups with
/// per-group learning rates. Grads are left untouched; callers reset them.
class Adam {
public:
    Adam(ParamStore& store, AdamConfig config);

    /// Adds a group; returns its id for later lr rescheduling.
    int add_group(std::vector<std::string> names, double lr);
    void set_group_lr(int group, double lr);
    double group_lr(int group) const;

    void step();
    const AdamState& state() const { return state_; }
    std::int64_t step_count() const { return state_.step_count; }

private:
    struct Group {
        std::vector<std::string> names;
        double lr;
    };
    ParamStore& store_;
    AdamConfig config_;
    std::vector<Group> groups_;
    AdamState state_;
};

}  // namespace fgs::diff
