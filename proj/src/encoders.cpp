#include "fgs/encoders.hpp"

#include <cmath>

#include "fgs/nn.hpp"
#include "fgs/ops.hpp"

namespace fgs::enc {

using diff::Tensor;
using diff::TensorPtr;

namespace {
constexpr std::uint32_t kHashPrimeA = 1u;
constexpr std::uint32_t kHashPrimeB = 2654435761u;

std::int64_t hash_cell(std::int64_t cx, std::int64_t cy, std::int64_t table_size) {
    const std::uint32_t h = static_cast<std::uint32_t>(cx) * kHashPrimeA ^
                            static_cast<std::uint32_t>(cy) * kHashPrimeB;
    return static_cast<std::int64_t>(h & static_cast<std::uint32_t>(table_size - 1));
}
}  // namespace

void TriplaneConfig::validate() const {
    if (table_size < 2 || (table_size & (table_size - 1)) != 0)
        throw Error(cat("triplane: table_size must be a power of two, got ", table_size));
    if (levels < 1 || features < 1) throw Error("triplane: levels and features must be >= 1");
    if (!(growth > 1.0)) throw Error(cat("triplane: growth must exceed 1, got ", growth));
    if (base_resolution < 2) throw Error("triplane: base_resolution must be >= 2");
    for (int i = 0; i < 3; ++i)
        if (!(aabb_max[i] > aabb_min[i])) throw Error("triplane: empty bounding box");
}

int TriplaneConfig::resolution(int level) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth, level)));
}

TensorPtr create_triplane_tables(diff::ParamStore& store, const std::string& name,
                                 const TriplaneConfig& config, Rng& rng, diff::Dtype dtype) {
    config.validate();
    auto t = store.create(name, {config.table_rows(), config.features}, dtype);
    std::vector<double> vals(t->data.size());
    for (auto& v : vals) v = rng.uniform(-1e-4, 1e-4);
    t->set_data(vals);
    return t;
}

TensorPtr triplane_encode(const TensorPtr& positions, const TriplaneConfig& config,
                          const TensorPtr& tables, std::int64_t* oob_count) {
    config.validate();
    if (positions->shape.size() != 2 || positions->shape[1] != 3)
        throw ShapeError(cat("triplane_encode: positions must be [N,3], got ",
                             diff::shape_str(positions->shape)));
    if (tables->shape != diff::Shape{config.table_rows(), config.features})
        throw ShapeError(cat("triplane_encode: tables must be [", config.table_rows(), ",",
                             config.features, "], got ", diff::shape_str(tables->shape)));

    const std::int64_t n = positions->shape[0];
    const int L = config.levels, F = config.features;
    const std::int64_t T = config.table_size;
    const int out_dim = config.out_dim();

    // Normalized coordinates, clamped into the box.
    std::vector<double> u(static_cast<std::size_t>(n) * 3);
    std::int64_t oob = 0;
    for (std::int64_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
            const double raw = (positions->data[static_cast<std::size_t>(i * 3 + a)] - config.aabb_min[a]) /
                               (config.aabb_max[a] - config.aabb_min[a]);
            double c = raw;
            if (c < 0.0) { c = 0.0; ++oob; }
            if (c > 1.0) { c = 1.0; ++oob; }
            u[static_cast<std::size_t>(i * 3 + a)] = c;
        }
    if (oob_count) *oob_count += oob;

    // plane axes: XY, YZ, XZ
    static constexpr int kPlaneAxes[3][2] = {{0, 1}, {1, 2}, {0, 2}};

    // Per-query interpolation record for the backward scatter.
    struct Corner {
        std::int64_t row;
        double weight;
    };
    auto corners = std::make_shared<std::vector<Corner>>();
    corners->resize(static_cast<std::size_t>(n) * 3 * L * 4);

    std::vector<double> out(static_cast<std::size_t>(n) * out_dim, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (int p = 0; p < 3; ++p) {
            const double ua = u[static_cast<std::size_t>(i * 3 + kPlaneAxes[p][0])];
            const double ub = u[static_cast<std::size_t>(i * 3 + kPlaneAxes[p][1])];
            for (int l = 0; l < L; ++l) {
                const int res = config.resolution(l);
                const double ga = ua * (res - 1);
                const double gb = ub * (res - 1);
                std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(ga), res - 2);
                std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(gb), res - 2);
                const double fx = ga - static_cast<double>(x0);
                const double fy = gb - static_cast<double>(y0);
                const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
                const std::int64_t base_row = (static_cast<std::int64_t>(p) * L + l) * T;
                const std::size_t rec = static_cast<std::size_t>(((i * 3 + p) * L + l) * 4);
                for (int c = 0; c < 4; ++c) {
                    const std::int64_t cx = x0 + (c & 1);
                    const std::int64_t cy = y0 + (c >> 1);
                    const std::int64_t row = base_row + hash_cell(cx, cy, T);
                    (*corners)[rec + static_cast<std::size_t>(c)] = {row, w[c]};
                    const double* entry = tables->data.data() + row * F;
                    double* dst = out.data() + i * out_dim + (static_cast<std::int64_t>(p) * L + l) * F;
                    for (int f = 0; f < F; ++f) dst[f] += w[c] * entry[f];
                }
            }
        }

    // Positions enter as data, not as a parent: encoder gradients reach the
    // hash tables only (position gradients arrive via the render path).
    return diff::make_op("triplane_encode", {n, out_dim}, {tables}, std::move(out),
                         [corners, n, L, F](Tensor& t) {
                             Tensor& tab = *t.parents[0];
                             if (!tab.needs_grad) return;
                             const std::int64_t out_dim = 3LL * L * F;
                             for (std::int64_t i = 0; i < n; ++i)
                                 for (int pl = 0; pl < 3 * L; ++pl) {
                                     const std::size_t rec = static_cast<std::size_t>((i * 3 * L + pl) * 4);
                                     const double* g = t.grad.data() + i * out_dim + pl * F;
                                     for (int c = 0; c < 4; ++c) {
                                         const auto& corner = (*corners)[rec + static_cast<std::size_t>(c)];
                                         double* dst = tab.grad.data() + corner.row * F;
                                         for (int f = 0; f < F; ++f) dst[f] += corner.weight * g[f];
                                     }
                                 }
                         });
}

ConditionEncoder ConditionEncoder::create(diff::ParamStore& store, const std::string& prefix,
                                          const ConditionEncoderConfig& config, Rng& rng,
                                          diff::Dtype dtype) {
    if (config.audio_window % config.audio_tokens != 0)
        throw Error("condition encoder: audio_window must be a multiple of audio_tokens");
    ConditionEncoder e;
    e.config = config;
    e.audio_w = store.create(prefix + "audio_w", {config.d_audio_raw, config.d_model}, dtype);
    e.audio_b = store.create(prefix + "audio_b", {config.d_model}, dtype);
    e.expr_w = store.create(prefix + "expr_w", {config.d_expr_raw, config.d_model}, dtype);
    e.expr_b = store.create(prefix + "expr_b", {config.d_model}, dtype);
    nn::init_linear(e.audio_w, rng);
    nn::init_linear(e.expr_w, rng);
    return e;
}

ConditionEncoder ConditionEncoder::from_store(const diff::ParamStore& store,
                                              const std::string& prefix,
                                              const ConditionEncoderConfig& config) {
    ConditionEncoder e;
    e.config = config;
    e.audio_w = store.get(prefix + "audio_w");
    e.audio_b = store.get(prefix + "audio_b");
    e.expr_w = store.get(prefix + "expr_w");
    e.expr_b = store.get(prefix + "expr_b");
    return e;
}

TensorPtr ConditionEncoder::encode_audio(const TensorPtr& window) const {
    if (window->shape != diff::Shape{config.audio_window, config.d_audio_raw})
        throw ShapeError(cat("encode_audio: window must be [", config.audio_window, ",",
                             config.d_audio_raw, "], got ", diff::shape_str(window->shape)));
    auto h = diff::tanh(diff::add_rowvec(diff::matmul(window, audio_w), audio_b));
    return diff::avgpool_rows(h, config.audio_window / config.audio_tokens);
}

TensorPtr ConditionEncoder::encode_expression(const TensorPtr& raw) const {
    if (raw->shape != diff::Shape{1, config.d_expr_raw})
        throw ShapeError(cat("encode_expression: input must be [1,", config.d_expr_raw, "], got ",
                             diff::shape_str(raw->shape)));
    return diff::tanh(diff::add_rowvec(diff::matmul(raw, expr_w), expr_b));
}

std::vector<std::string> ConditionEncoder::param_names(const std::string& prefix) const {
    return {prefix + "audio_w", prefix + "audio_b", prefix + "expr_w", prefix + "expr_b"};
}

}  // namespace fgs::enc
