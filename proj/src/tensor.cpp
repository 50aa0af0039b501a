#include "fgs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fgs::diff {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError(cat("negative dim in shape ", shape_str(shape)));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

TensorPtr Tensor::leaf(Shape shape, Dtype dtype, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(numel(t->shape)), 0.0);
    t->dtype = dtype;
    t->requires_grad = requires_grad;
    t->needs_grad = requires_grad;
    return t;
}

TensorPtr Tensor::constant(Shape shape, std::vector<double> values, Dtype dtype) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError(cat("constant: ", values.size(), " values for shape ", shape_str(shape)));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->dtype = dtype;
    if (dtype == Dtype::F32) round_f32(t->data);
    return t;
}

TensorPtr Tensor::scalar(double v, Dtype dtype) {
    return constant({1}, {v}, dtype);
}

std::int64_t Tensor::dim(int i) const {
    const int rank = static_cast<int>(shape.size());
    if (i < 0) i += rank;
    if (i < 0 || i >= rank) throw ShapeError(cat("dim ", i, " out of range for ", shape_str(shape)));
    return shape[static_cast<std::size_t>(i)];
}

double Tensor::value() const {
    if (!is_scalar()) throw ShapeError(cat("value(): tensor is not scalar, shape ", shape_str(shape)));
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::fill(double v) {
    std::fill(data.begin(), data.end(), v);
    if (dtype == Dtype::F32) round_f32(data);
}

void Tensor::set_data(const std::vector<double>& values) {
    if (!parents.empty()) throw Error("set_data on non-leaf tensor");
    if (values.size() != data.size())
        throw ShapeError(cat("set_data: ", values.size(), " values for shape ", shape_str(shape)));
    data = values;
    if (dtype == Dtype::F32) round_f32(data);
}

void round_f32(std::vector<double>& values) {
    for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v))
            throw NumericalError(cat(op, ": non-finite value produced"));
    }
}

TensorPtr make_op(const char* op, Shape out_shape, std::vector<TensorPtr> parents,
                  std::vector<double> out_data, std::function<void(Tensor&)> bw) {
    if (numel(out_shape) != static_cast<std::int64_t>(out_data.size()))
        throw ShapeError(cat(op, ": produced ", out_data.size(), " values for shape ", shape_str(out_shape)));
    check_finite(op, out_data);

    auto t = std::make_shared<Tensor>();
    t->op = op;
    t->shape = std::move(out_shape);
    t->data = std::move(out_data);

    Dtype dt = Dtype::F32;
    bool needs = false;
    for (const auto& p : parents) {
        dt = promote(dt, p->dtype);
        needs = needs || p->needs_grad;
    }
    t->dtype = parents.empty() ? Dtype::F64 : dt;
    if (t->dtype == Dtype::F32) round_f32(t->data);
    t->needs_grad = needs;
    if (needs) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(bw);
    }
    return t;
}

void backward(const TensorPtr& loss) {
    if (!loss->is_scalar())
        throw ShapeError(cat("backward: loss must be scalar, got ", shape_str(loss->shape)));
    if (!loss->needs_grad) return;  // nothing reachable requires grad

    // Iterative post-order DFS over the needs_grad subgraph.
    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Tensor* p = node->parents[child].get();
            ++child;
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Fresh grads for every non-parameter node; parameter grads accumulate.
    for (Tensor* n : topo) {
        if (!n->requires_grad) {
            n->grad.assign(n->data.size(), 0.0);
        } else {
            n->ensure_grad();
        }
    }
    loss->grad[0] += 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace fgs::diff
