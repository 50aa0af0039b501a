#include "fgs/ops.hpp"

#include <algorithm>
#include <cmath>

namespace fgs::diff {

namespace {

using std::int64_t;

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

void require_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw ShapeError(cat(op, ": shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape)));
}

int norm_axis(const char* op, const Shape& shape, int axis) {
    const int rank = static_cast<int>(shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ShapeError(cat(op, ": axis ", axis, " out of range for ", shape_str(shape)));
    return axis;
}

// Splits a shape into (outer, n, inner) around `axis`.
struct AxisView {
    int64_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
    AxisView v;
    for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
    v.n = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

TensorPtr unary_op(const char* name, const TensorPtr& x, double (*f)(double),
                   double (*dfdx_from)(double x, double y)) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x->data[i]);
    return make_op(name, x->shape, {x}, std::move(out), [f = dfdx_from](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (std::size_t i = 0; i < t.data.size(); ++i)
            p.grad[i] += t.grad[i] * f(p.data[i], t.data[i]);
    });
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    return make_op("add", a->shape, {a, b}, std::move(out), [](Tensor& t) {
        for (int k = 0; k < 2; ++k) {
            Tensor& p = *t.parents[static_cast<std::size_t>(k)];
            if (!p.needs_grad) continue;
            for (std::size_t i = 0; i < t.grad.size(); ++i) p.grad[i] += t.grad[i];
        }
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    return make_op("sub", a->shape, {a, b}, std::move(out), [](Tensor& t) {
        Tensor& pa = *t.parents[0];
        Tensor& pb = *t.parents[1];
        if (pa.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) pa.grad[i] += t.grad[i];
        if (pb.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) pb.grad[i] -= t.grad[i];
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    return make_op("mul", a->shape, {a, b}, std::move(out), [](Tensor& t) {
        Tensor& pa = *t.parents[0];
        Tensor& pb = *t.parents[1];
        if (pa.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) pa.grad[i] += t.grad[i] * pb.data[i];
        if (pb.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) pb.grad[i] += t.grad[i] * pa.data[i];
    });
}

TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("div", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] / b->data[i];
    return make_op("div", a->shape, {a, b}, std::move(out), [](Tensor& t) {
        Tensor& pa = *t.parents[0];
        Tensor& pb = *t.parents[1];
        if (pa.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) pa.grad[i] += t.grad[i] / pb.data[i];
        if (pb.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i)
                pb.grad[i] -= t.grad[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
    });
}

TensorPtr affine(const TensorPtr& x, double k, double c) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x->data[i] + c;
    return make_op("affine", x->shape, {x}, std::move(out), [k](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (std::size_t i = 0; i < t.grad.size(); ++i) p.grad[i] += k * t.grad[i];
    });
}

TensorPtr mul_scalar_tensor(const TensorPtr& x, const TensorPtr& s) {
    if (!s->is_scalar())
        throw ShapeError(cat("mul_scalar_tensor: scale must be scalar, got ", shape_str(s->shape)));
    const double sv = s->data[0];
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] * sv;
    return make_op("mul_scalar_tensor", x->shape, {x, s}, std::move(out), [](Tensor& t) {
        Tensor& px = *t.parents[0];
        Tensor& ps = *t.parents[1];
        const double sv = ps.data[0];
        if (px.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) px.grad[i] += t.grad[i] * sv;
        if (ps.needs_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < t.grad.size(); ++i) acc += t.grad[i] * px.data[i];
            ps.grad[0] += acc;
        }
    });
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape.size() == 2 && b->shape.size() == 2,
            cat("matmul: rank-2 operands required, got ", shape_str(a->shape), " and ", shape_str(b->shape)));
    const int64_t m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
    if (k != k2)
        throw ShapeError(cat("matmul: shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape)));
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const double* A = a->data.data();
    const double* B = b->data.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            double* orow = out.data() + i * n;
            const double* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return make_op("matmul", {m, n}, {a, b}, std::move(out), [m, k, n](Tensor& t) {
        Tensor& pa = *t.parents[0];
        Tensor& pb = *t.parents[1];
        const double* G = t.grad.data();
        if (pa.needs_grad) {  // dA = G * B^T
            const double* B = pb.data.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = G + i * n;
                    const double* brow = B + p * n;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    pa.grad[static_cast<std::size_t>(i * k + p)] += acc;
                }
        }
        if (pb.needs_grad) {  // dB = A^T * G
            const double* A = pa.data.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    if (av == 0.0) continue;
                    double* brow = pb.grad.data() + p * n;
                    const double* grow = G + i * n;
                    for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

TensorPtr transpose(const TensorPtr& a) {
    require(a->shape.size() == 2, cat("transpose: rank-2 required, got ", shape_str(a->shape)));
    const int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> out(a->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j * m + i)] = a->data[static_cast<std::size_t>(i * n + j)];
    return make_op("transpose", {n, m}, {a}, std::move(out), [m, n](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                p.grad[static_cast<std::size_t>(i * n + j)] += t.grad[static_cast<std::size_t>(j * m + i)];
    });
}

namespace {
const Tensor& rowvec_check(const char* op, const TensorPtr& x, const TensorPtr& v) {
    require(x->shape.size() == 2, cat(op, ": lhs must be rank-2, got ", shape_str(x->shape)));
    const int64_t n = x->shape[1];
    const bool ok = (v->shape.size() == 1 && v->shape[0] == n) ||
                    (v->shape.size() == 2 && v->shape[0] == 1 && v->shape[1] == n);
    if (!ok) throw ShapeError(cat(op, ": shape mismatch ", shape_str(x->shape), " vs ", shape_str(v->shape)));
    return *v;
}
}  // namespace

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b) {
    rowvec_check("add_rowvec", x, b);
    const int64_t m = x->shape[0], n = x->shape[1];
    std::vector<double> out(x->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i * n + j)] =
                x->data[static_cast<std::size_t>(i * n + j)] + b->data[static_cast<std::size_t>(j)];
    return make_op("add_rowvec", x->shape, {x, b}, std::move(out), [m, n](Tensor& t) {
        Tensor& px = *t.parents[0];
        Tensor& pb = *t.parents[1];
        if (px.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) px.grad[i] += t.grad[i];
        if (pb.needs_grad)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    pb.grad[static_cast<std::size_t>(j)] += t.grad[static_cast<std::size_t>(i * n + j)];
    });
}

TensorPtr mul_rowvec(const TensorPtr& x, const TensorPtr& v) {
    rowvec_check("mul_rowvec", x, v);
    const int64_t m = x->shape[0], n = x->shape[1];
    std::vector<double> out(x->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i * n + j)] =
                x->data[static_cast<std::size_t>(i * n + j)] * v->data[static_cast<std::size_t>(j)];
    return make_op("mul_rowvec", x->shape, {x, v}, std::move(out), [m, n](Tensor& t) {
        Tensor& px = *t.parents[0];
        Tensor& pv = *t.parents[1];
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i * n + j);
                if (px.needs_grad) px.grad[idx] += t.grad[idx] * pv.data[static_cast<std::size_t>(j)];
                if (pv.needs_grad) pv.grad[static_cast<std::size_t>(j)] += t.grad[idx] * px.data[idx];
            }
    });
}

TensorPtr scale_rows(const TensorPtr& x, const TensorPtr& s) {
    require(x->shape.size() == 2, cat("scale_rows: lhs must be rank-2, got ", shape_str(x->shape)));
    const int64_t m = x->shape[0], n = x->shape[1];
    const bool ok = (s->shape.size() == 1 && s->shape[0] == m) ||
                    (s->shape.size() == 2 && s->shape[0] == m && s->shape[1] == 1);
    if (!ok)
        throw ShapeError(cat("scale_rows: shape mismatch ", shape_str(x->shape), " vs ", shape_str(s->shape)));
    std::vector<double> out(x->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i * n + j)] =
                x->data[static_cast<std::size_t>(i * n + j)] * s->data[static_cast<std::size_t>(i)];
    return make_op("scale_rows", x->shape, {x, s}, std::move(out), [m, n](Tensor& t) {
        Tensor& px = *t.parents[0];
        Tensor& ps = *t.parents[1];
        for (int64_t i = 0; i < m; ++i) {
            const double sv = ps.data[static_cast<std::size_t>(i)];
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i * n + j);
                if (px.needs_grad) px.grad[idx] += t.grad[idx] * sv;
                acc += t.grad[idx] * px.data[idx];
            }
            if (ps.needs_grad) ps.grad[static_cast<std::size_t>(i)] += acc;
        }
    });
}

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const int ax = norm_axis("concat", parts[0]->shape, axis);
    Shape out_shape = parts[0]->shape;
    int64_t total = 0;
    for (const auto& p : parts) {
        require(p->shape.size() == out_shape.size(),
                cat("concat: rank mismatch ", shape_str(p->shape), " vs ", shape_str(out_shape)));
        for (std::size_t i = 0; i < out_shape.size(); ++i)
            if (static_cast<int>(i) != ax && p->shape[i] != out_shape[i])
                throw ShapeError(cat("concat: shape mismatch ", shape_str(p->shape), " vs ", shape_str(out_shape)));
        total += p->shape[static_cast<std::size_t>(ax)];
    }
    out_shape[static_cast<std::size_t>(ax)] = total;

    const AxisView ov = axis_view(out_shape, ax);
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    std::vector<int64_t> offsets(parts.size());
    int64_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        offsets[pi] = off;
        const int64_t pn = parts[pi]->shape[static_cast<std::size_t>(ax)];
        for (int64_t o = 0; o < ov.outer; ++o)
            std::copy_n(parts[pi]->data.data() + o * pn * ov.inner, pn * ov.inner,
                        out.data() + (o * ov.n + off) * ov.inner);
        off += pn;
    }
    std::vector<TensorPtr> parents(parts.begin(), parts.end());
    return make_op("concat", out_shape, std::move(parents), std::move(out),
                   [ov, offsets, ax](Tensor& t) {
                       for (std::size_t pi = 0; pi < t.parents.size(); ++pi) {
                           Tensor& p = *t.parents[pi];
                           if (!p.needs_grad) continue;
                           const int64_t pn = p.shape[static_cast<std::size_t>(ax)];
                           for (int64_t o = 0; o < ov.outer; ++o) {
                               const double* src = t.grad.data() + (o * ov.n + offsets[pi]) * ov.inner;
                               double* dst = p.grad.data() + o * pn * ov.inner;
                               for (int64_t i = 0; i < pn * ov.inner; ++i) dst[i] += src[i];
                           }
                       }
                   });
}

TensorPtr slice(const TensorPtr& x, int axis, std::int64_t start, std::int64_t len) {
    const int ax = norm_axis("slice", x->shape, axis);
    const int64_t n = x->shape[static_cast<std::size_t>(ax)];
    if (start < 0 || len < 0 || start + len > n)
        throw ShapeError(cat("slice: range [", start, ",", start + len, ") out of bounds for axis ", ax,
                             " of ", shape_str(x->shape)));
    Shape out_shape = x->shape;
    out_shape[static_cast<std::size_t>(ax)] = len;
    const AxisView v = axis_view(x->shape, ax);
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    for (int64_t o = 0; o < v.outer; ++o)
        std::copy_n(x->data.data() + (o * v.n + start) * v.inner, len * v.inner,
                    out.data() + o * len * v.inner);
    return make_op("slice", out_shape, {x}, std::move(out), [v, start, len](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t o = 0; o < v.outer; ++o) {
            const double* src = t.grad.data() + o * len * v.inner;
            double* dst = p.grad.data() + (o * v.n + start) * v.inner;
            for (int64_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
        }
    });
}

TensorPtr reshape(const TensorPtr& x, Shape shape) {
    if (numel(shape) != x->size())
        throw ShapeError(cat("reshape: cannot view ", shape_str(x->shape), " as ", shape_str(shape)));
    std::vector<double> out = x->data;
    return make_op("reshape", std::move(shape), {x}, std::move(out), [](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (std::size_t i = 0; i < t.grad.size(); ++i) p.grad[i] += t.grad[i];
    });
}

TensorPtr sum(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v;
    return make_op("sum", {1}, {x}, {acc}, [](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        const double g = t.grad[0];
        for (auto& gv : p.grad) gv += g;
    });
}

TensorPtr mean(const TensorPtr& x) {
    require(x->size() > 0, "mean: empty tensor");
    double acc = 0.0;
    for (double v : x->data) acc += v;
    const double inv = 1.0 / static_cast<double>(x->size());
    return make_op("mean", {1}, {x}, {acc * inv}, [inv](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        const double g = t.grad[0] * inv;
        for (auto& gv : p.grad) gv += g;
    });
}

namespace {
TensorPtr reduce_axis(const char* name, const TensorPtr& x, int axis, bool take_mean) {
    const int ax = norm_axis(name, x->shape, axis);
    const AxisView v = axis_view(x->shape, ax);
    require(v.n > 0, cat(name, ": empty axis in ", shape_str(x->shape)));
    Shape out_shape = x->shape;
    out_shape[static_cast<std::size_t>(ax)] = 1;
    const double inv = take_mean ? 1.0 / static_cast<double>(v.n) : 1.0;
    std::vector<double> out(static_cast<std::size_t>(v.outer * v.inner), 0.0);
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t k = 0; k < v.n; ++k)
            for (int64_t i = 0; i < v.inner; ++i)
                out[static_cast<std::size_t>(o * v.inner + i)] +=
                    x->data[static_cast<std::size_t>((o * v.n + k) * v.inner + i)];
    if (take_mean)
        for (auto& val : out) val *= inv;
    return make_op(name, out_shape, {x}, std::move(out), [v, inv](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t k = 0; k < v.n; ++k)
                for (int64_t i = 0; i < v.inner; ++i)
                    p.grad[static_cast<std::size_t>((o * v.n + k) * v.inner + i)] +=
                        t.grad[static_cast<std::size_t>(o * v.inner + i)] * inv;
    });
}
}  // namespace

TensorPtr sum_axis(const TensorPtr& x, int axis) { return reduce_axis("sum_axis", x, axis, false); }
TensorPtr mean_axis(const TensorPtr& x, int axis) { return reduce_axis("mean_axis", x, axis, true); }

TensorPtr exp(const TensorPtr& x) {
    return unary_op(
        "exp", x, +[](double v) { return std::exp(v); },
        +[](double, double y) { return y; });
}

TensorPtr log(const TensorPtr& x) {
    for (double v : x->data)
        if (v <= 0.0) throw DomainError(cat("log: non-positive input ", v));
    return unary_op(
        "log", x, +[](double v) { return std::log(v); },
        +[](double xv, double) { return 1.0 / xv; });
}

TensorPtr sqrt(const TensorPtr& x) {
    for (double v : x->data)
        if (v < 0.0) throw DomainError(cat("sqrt: negative input ", v));
    return unary_op(
        "sqrt", x, +[](double v) { return std::sqrt(v); },
        +[](double, double y) { return 0.5 / std::max(y, 1e-12); });
}

TensorPtr abs(const TensorPtr& x) {
    return unary_op(
        "abs", x, +[](double v) { return std::fabs(v); },
        +[](double xv, double) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
}

TensorPtr sigmoid(const TensorPtr& x) {
    return unary_op(
        "sigmoid", x,
        +[](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        +[](double, double y) { return y * (1.0 - y); });
}

TensorPtr tanh(const TensorPtr& x) {
    return unary_op(
        "tanh", x, +[](double v) { return std::tanh(v); },
        +[](double, double y) { return 1.0 - y * y; });
}

TensorPtr relu(const TensorPtr& x) {
    return unary_op(
        "relu", x, +[](double v) { return v > 0.0 ? v : 0.0; },
        +[](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

TensorPtr clamp(const TensorPtr& x, double lo, double hi) {
    std::vector<double> out(x->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, x->data[i]));
    return make_op("clamp", x->shape, {x}, std::move(out), [lo, hi](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (std::size_t i = 0; i < t.grad.size(); ++i)
            if (p.data[i] > lo && p.data[i] < hi) p.grad[i] += t.grad[i];
    });
}

TensorPtr softmax(const TensorPtr& x, int axis) {
    const int ax = norm_axis("softmax", x->shape, axis);
    const AxisView v = axis_view(x->shape, ax);
    require(v.n > 0, cat("softmax: empty axis in ", shape_str(x->shape)));
    for (double val : x->data)
        if (!std::isfinite(val)) throw DomainError("softmax: non-finite input");
    std::vector<double> out(x->data.size());
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            double mx = -1e300;
            for (int64_t k = 0; k < v.n; ++k)
                mx = std::max(mx, x->data[static_cast<std::size_t>((o * v.n + k) * v.inner + i)]);
            double z = 0.0;
            for (int64_t k = 0; k < v.n; ++k) {
                const std::size_t idx = static_cast<std::size_t>((o * v.n + k) * v.inner + i);
                out[idx] = std::exp(x->data[idx] - mx);
                z += out[idx];
            }
            for (int64_t k = 0; k < v.n; ++k)
                out[static_cast<std::size_t>((o * v.n + k) * v.inner + i)] /= z;
        }
    return make_op("softmax", x->shape, {x}, std::move(out), [v](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                double dot = 0.0;
                for (int64_t k = 0; k < v.n; ++k) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.n + k) * v.inner + i);
                    dot += t.grad[idx] * t.data[idx];
                }
                for (int64_t k = 0; k < v.n; ++k) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.n + k) * v.inner + i);
                    p.grad[idx] += t.data[idx] * (t.grad[idx] - dot);
                }
            }
    });
}

TensorPtr l2_normalize(const TensorPtr& x, int axis) {
    const int ax = norm_axis("l2_normalize", x->shape, axis);
    const AxisView v = axis_view(x->shape, ax);
    std::vector<double> out(x->data.size());
    std::vector<double> norms(static_cast<std::size_t>(v.outer * v.inner));
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            double sq = 0.0;
            for (int64_t k = 0; k < v.n; ++k) {
                const double val = x->data[static_cast<std::size_t>((o * v.n + k) * v.inner + i)];
                sq += val * val;
            }
            const double norm = std::sqrt(sq);
            if (norm < 1e-12) throw DomainError("l2_normalize: zero-norm slice");
            norms[static_cast<std::size_t>(o * v.inner + i)] = norm;
            for (int64_t k = 0; k < v.n; ++k) {
                const std::size_t idx = static_cast<std::size_t>((o * v.n + k) * v.inner + i);
                out[idx] = x->data[idx] / norm;
            }
        }
    return make_op("l2_normalize", x->shape, {x}, std::move(out), [v, norms](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const double norm = norms[static_cast<std::size_t>(o * v.inner + i)];
                double dot = 0.0;
                for (int64_t k = 0; k < v.n; ++k) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.n + k) * v.inner + i);
                    dot += t.grad[idx] * t.data[idx];
                }
                for (int64_t k = 0; k < v.n; ++k) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.n + k) * v.inner + i);
                    p.grad[idx] += (t.grad[idx] - t.data[idx] * dot) / norm;
                }
            }
    });
}

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, int stride) {
    require(input->shape.size() == 4, cat("conv2d: input must be NCHW, got ", shape_str(input->shape)));
    require(weight->shape.size() == 4, cat("conv2d: weight must be OIKK, got ", shape_str(weight->shape)));
    require(stride >= 1, "conv2d: stride must be >= 1");
    const int64_t N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
    const int64_t O = weight->shape[0], CI = weight->shape[1], KH = weight->shape[2], KW = weight->shape[3];
    if (C != CI)
        throw ShapeError(cat("conv2d: shape mismatch ", shape_str(input->shape), " vs ", shape_str(weight->shape)));
    const int64_t HO = (H - KH) / stride + 1;
    const int64_t WO = (W - KW) / stride + 1;
    require(HO >= 1 && WO >= 1, cat("conv2d: kernel ", shape_str(weight->shape), " larger than input ",
                                    shape_str(input->shape)));
    std::vector<double> out(static_cast<std::size_t>(N * O * HO * WO), 0.0);
    const double* in = input->data.data();
    const double* w = weight->data.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t y = 0; y < HO; ++y)
                for (int64_t x = 0; x < WO; ++x) {
                    double acc = 0.0;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t i = 0; i < KH; ++i) {
                            const double* irow = in + ((n * C + c) * H + y * stride + i) * W + x * stride;
                            const double* wrow = w + ((o * C + c) * KH + i) * KW;
                            for (int64_t j = 0; j < KW; ++j) acc += irow[j] * wrow[j];
                        }
                    out[static_cast<std::size_t>(((n * O + o) * HO + y) * WO + x)] = acc;
                }
    return make_op("conv2d", {N, O, HO, WO}, {input, weight}, std::move(out),
                   [N, C, H, W, O, KH, KW, HO, WO, stride](Tensor& t) {
                       Tensor& pi = *t.parents[0];
                       Tensor& pw = *t.parents[1];
                       const double* g = t.grad.data();
                       for (int64_t n = 0; n < N; ++n)
                           for (int64_t o = 0; o < O; ++o)
                               for (int64_t y = 0; y < HO; ++y)
                                   for (int64_t x = 0; x < WO; ++x) {
                                       const double gv =
                                           g[((n * O + o) * HO + y) * WO + x];
                                       if (gv == 0.0) continue;
                                       for (int64_t c = 0; c < C; ++c)
                                           for (int64_t i = 0; i < KH; ++i) {
                                               const int64_t ibase =
                                                   ((n * C + c) * H + y * stride + i) * W + x * stride;
                                               const int64_t wbase = ((o * C + c) * KH + i) * KW;
                                               for (int64_t j = 0; j < KW; ++j) {
                                                   if (pi.needs_grad)
                                                       pi.grad[static_cast<std::size_t>(ibase + j)] +=
                                                           gv * pw.data[static_cast<std::size_t>(wbase + j)];
                                                   if (pw.needs_grad)
                                                       pw.grad[static_cast<std::size_t>(wbase + j)] +=
                                                           gv * pi.data[static_cast<std::size_t>(ibase + j)];
                                               }
                                           }
                                   }
                   });
}

TensorPtr add_chan_bias(const TensorPtr& x, const TensorPtr& bias) {
    require(x->shape.size() == 4, cat("add_chan_bias: input must be NCHW, got ", shape_str(x->shape)));
    const int64_t N = x->shape[0], C = x->shape[1], HW = x->shape[2] * x->shape[3];
    const bool ok = bias->shape.size() == 1 && bias->shape[0] == C;
    if (!ok)
        throw ShapeError(cat("add_chan_bias: shape mismatch ", shape_str(x->shape), " vs ", shape_str(bias->shape)));
    std::vector<double> out(x->data.size());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double b = bias->data[static_cast<std::size_t>(c)];
            const int64_t base = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i)
                out[static_cast<std::size_t>(base + i)] = x->data[static_cast<std::size_t>(base + i)] + b;
        }
    return make_op("add_chan_bias", x->shape, {x, bias}, std::move(out), [N, C, HW](Tensor& t) {
        Tensor& px = *t.parents[0];
        Tensor& pb = *t.parents[1];
        if (px.needs_grad)
            for (std::size_t i = 0; i < t.grad.size(); ++i) px.grad[i] += t.grad[i];
        if (pb.needs_grad)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const int64_t base = (n * C + c) * HW;
                    double acc = 0.0;
                    for (int64_t i = 0; i < HW; ++i) acc += t.grad[static_cast<std::size_t>(base + i)];
                    pb.grad[static_cast<std::size_t>(c)] += acc;
                }
    });
}

TensorPtr avg_pool2d(const TensorPtr& x, int k) {
    require(x->shape.size() == 4, cat("avg_pool2d: input must be NCHW, got ", shape_str(x->shape)));
    require(k >= 1, "avg_pool2d: window must be >= 1");
    const int64_t N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const int64_t HO = H / k, WO = W / k;
    require(HO >= 1 && WO >= 1, cat("avg_pool2d: window ", k, " larger than input ", shape_str(x->shape)));
    const double inv = 1.0 / static_cast<double>(k * k);
    std::vector<double> out(static_cast<std::size_t>(N * C * HO * WO), 0.0);
    for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t y = 0; y < HO; ++y)
            for (int64_t x2 = 0; x2 < WO; ++x2) {
                double acc = 0.0;
                for (int64_t i = 0; i < k; ++i)
                    for (int64_t j = 0; j < k; ++j)
                        acc += x->data[static_cast<std::size_t>((nc * H + y * k + i) * W + x2 * k + j)];
                out[static_cast<std::size_t>((nc * HO + y) * WO + x2)] = acc * inv;
            }
    return make_op("avg_pool2d", {N, C, HO, WO}, {x}, std::move(out), [N, C, H, W, HO, WO, k, inv](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t nc = 0; nc < N * C; ++nc)
            for (int64_t y = 0; y < HO; ++y)
                for (int64_t x2 = 0; x2 < WO; ++x2) {
                    const double g = t.grad[static_cast<std::size_t>((nc * HO + y) * WO + x2)] * inv;
                    for (int64_t i = 0; i < k; ++i)
                        for (int64_t j = 0; j < k; ++j)
                            p.grad[static_cast<std::size_t>((nc * H + y * k + i) * W + x2 * k + j)] += g;
                }
    });
}

TensorPtr avgpool_rows(const TensorPtr& x, int window) {
    require(x->shape.size() == 2, cat("avgpool_rows: rank-2 required, got ", shape_str(x->shape)));
    require(window >= 1, "avgpool_rows: window must be >= 1");
    const int64_t m = x->shape[0], n = x->shape[1];
    if (m % window != 0)
        throw ShapeError(cat("avgpool_rows: ", m, " rows not divisible by window ", window));
    const int64_t mo = m / window;
    const double inv = 1.0 / static_cast<double>(window);
    std::vector<double> out(static_cast<std::size_t>(mo * n), 0.0);
    for (int64_t i = 0; i < mo; ++i)
        for (int64_t w = 0; w < window; ++w)
            for (int64_t j = 0; j < n; ++j)
                out[static_cast<std::size_t>(i * n + j)] +=
                    x->data[static_cast<std::size_t>((i * window + w) * n + j)] * inv;
    return make_op("avgpool_rows", {mo, n}, {x}, std::move(out), [mo, n, window, inv](Tensor& t) {
        Tensor& p = *t.parents[0];
        if (!p.needs_grad) return;
        for (int64_t i = 0; i < mo; ++i)
            for (int64_t w = 0; w < window; ++w)
                for (int64_t j = 0; j < n; ++j)
                    p.grad[static_cast<std::size_t>((i * window + w) * n + j)] +=
                        t.grad[static_cast<std::size_t>(i * n + j)] * inv;
    });
}

}  // namespace fgs::diff
