#pragma once

#include <Eigen/Dense>

#include "fgs/adam.hpp"
#include "fgs/rng.hpp"
#include "fgs/tensor.hpp"

namespace fgs::enc {

/// Triplane multiresolution hash grid over positions in a world-space AABB.
struct TriplaneConfig {
    int levels = 8;
    std::int64_t table_size = 1 << 14;  // entries per (plane, level); power of two
    int features = 2;
    int base_resolution = 16;
    double growth = 1.5;
    Eigen::Vector3d aabb_min = {-1.5, -1.5, -1.5};
    Eigen::Vector3d aabb_max = {1.5, 1.5, 1.5};

    void validate() const;
    int out_dim() const { return 3 * levels * features; }
    std::int64_t table_rows() const { return 3LL * levels * table_size; }
    int resolution(int level) const;
};

/// Creates the hash tables parameter [table_rows, features], uniformly
/// initialized in [-1e-4, 1e-4].
diff::TensorPtr create_triplane_tables(diff::ParamStore& store, const std::string& name,
                                       const TriplaneConfig& config, Rng& rng, diff::Dtype dtype);

/// Encodes positions [N,3] into [N, 3*levels*features]. Positions are mapped
/// into [0,1]^3 by the AABB (clamped; clamps counted into *oob_count when
/// given) and treated as constants: gradients flow to the table entries only,
/// weighted by the bilinear coefficients.
diff::TensorPtr triplane_encode(const diff::TensorPtr& positions, const TriplaneConfig& config,
                                const diff::TensorPtr& tables, std::int64_t* oob_count = nullptr);

/// Learnable condition encoders: a per-time linear+tanh over raw audio tokens
/// followed by stride-2 temporal pooling, and a linear+tanh expression map.
struct ConditionEncoderConfig {
    int audio_window = 16;  // raw tokens per frame window
    int audio_tokens = 8;   // tokens after pooling
    int d_audio_raw = 29;
    int d_expr_raw = 8;
    int d_model = 32;
};

struct ConditionEncoder {
    ConditionEncoderConfig config;
    diff::TensorPtr audio_w, audio_b;  // [29,32], [32]
    diff::TensorPtr expr_w, expr_b;    // [8,32], [32]

    static ConditionEncoder create(diff::ParamStore& store, const std::string& prefix,
                                   const ConditionEncoderConfig& config, Rng& rng,
                                   diff::Dtype dtype);
    static ConditionEncoder from_store(const diff::ParamStore& store, const std::string& prefix,
                                       const ConditionEncoderConfig& config);

    /// [audio_window, d_audio_raw] -> f_a tokens [audio_tokens, d_model].
    diff::TensorPtr encode_audio(const diff::TensorPtr& window) const;
    /// [1, d_expr_raw] -> f_e token [1, d_model].
    diff::TensorPtr encode_expression(const diff::TensorPtr& raw) const;

    std::vector<std::string> param_names(const std::string& prefix) const;
};

}  // namespace fgs::enc
