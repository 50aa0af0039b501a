#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fgs/common.hpp"

namespace fgs::diff {

/// Payload width. Data is held in doubles either way; F32 tensors have every
/// op result rounded through float so training runs at single precision while
/// gradient tests run in full double.
enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
inline Dtype promote(Dtype a, Dtype b) {
    return (a == Dtype::F64 || b == Dtype::F64) ? Dtype::F64 : Dtype::F32;
}

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// One node of the eagerly-evaluated reverse-mode graph. Leaves are inputs or
/// parameters; interior nodes carry a backward_fn that scatters this node's
/// grad into its parents. Values are immutable once an op has produced them;
/// only the optimizer writes leaf data in place, between graph lifetimes.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward()
    Dtype dtype = Dtype::F64;
    bool requires_grad = false;  // leaf parameter flag (optimizer target)
    bool needs_grad = false;     // gradient must flow through this node
    const char* op = "leaf";
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    static TensorPtr leaf(Shape shape, Dtype dtype = Dtype::F64, bool requires_grad = false);
    static TensorPtr constant(Shape shape, std::vector<double> values, Dtype dtype = Dtype::F64);
    static TensorPtr scalar(double v, Dtype dtype = Dtype::F64);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(int i) const;
    bool is_scalar() const { return size() == 1; }
    double value() const;

    void ensure_grad();
    void zero_grad();
    void fill(double v);
    /// Overwrite leaf data (applies F32 rounding if needed). Throws on non-leaf.
    void set_data(const std::vector<double>& values);
};

/// Register an op node: output values are final (precision rounding and the
/// finite-value check are applied here). `bw` may be empty for dead branches.
TensorPtr make_op(const char* op, Shape out_shape, std::vector<TensorPtr> parents,
                  std::vector<double> out_data, std::function<void(Tensor&)> bw);

/// Reverse-mode pass from a scalar loss. Intermediate node grads are reset per
/// call; leaf parameter (requires_grad) grads accumulate across calls.
void backward(const TensorPtr& loss);

/// Round every value through float. Applied automatically to F32 op outputs.
void round_f32(std::vector<double>& values);

/// Throws NumericalError naming `op` if any value is NaN/Inf.
void check_finite(const char* op, const std::vector<double>& values);

}  // namespace fgs::diff
