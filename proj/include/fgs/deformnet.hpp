#pragma once

#include <optional>

#include "fgs/encoders.hpp"
#include "fgs/gaussians.hpp"
#include "fgs/nn.hpp"

namespace fgs::deform {

enum class AblationMode { full, no_fad, no_fam, no_hrpa };
AblationMode ablation_from_string(const std::string& s);
const char* ablation_name(AblationMode m);

/// Jointly audio- and expression-driven branch for the slow-moving face
/// region. Spatial gate MLPs modulate the pooled condition features per
/// Gaussian; a deformation MLP regresses position, scale and rotation offsets.
struct LowFreqNet {
    nn::Mlp gate_audio;  // spatial_dim -> 64 -> 64 -> d_model
    nn::Mlp gate_expr;
    nn::Mlp deform;      // spatial_dim + 2*d_model -> 128^3 -> 10, zero-init head

    static LowFreqNet create(diff::ParamStore& store, const std::string& prefix, int spatial_dim,
                             int d_model, Rng& rng, diff::Dtype dtype);

    /// h: [N, spatial_dim]; f_a: [T, d_model] tokens; f_e: [1, d_model].
    gs::DeformationDelta forward(const diff::TensorPtr& h, const diff::TensorPtr& f_a,
                                 const diff::TensorPtr& f_e) const;

    std::vector<std::string> gate_param_names(const std::string& prefix) const;
    std::vector<std::string> deform_param_names(const std::string& prefix) const;
};

/// Gated cross-modal branch for a fast region (mouth or eyes): queries come
/// from projected hash features of the static Gaussians, keys/values from the
/// condition tokens; a sigmoid gate scales the attended feature; two
/// residual feed-forward blocks refine it; a zero-initialized head predicts
/// position offsets only.
struct HighFreqNet {
    int d_model = 32;
    nn::Mlp gate;                       // d_model -> 16 -> 1 logit
    diff::TensorPtr proj_w, proj_b;     // spatial_dim -> d_model
    diff::TensorPtr wq, wk, wv;         // [d_model, d_model]
    nn::Mlp ff1, ff2;                   // d_model -> 4*d_model -> d_model
    diff::TensorPtr head_w, head_b;     // zero-init [d_model,3], [3]

    static HighFreqNet create(diff::ParamStore& store, const std::string& prefix, int spatial_dim,
                              int d_model, Rng& rng, diff::Dtype dtype);

    /// h: [N, spatial_dim]; tokens: [T, d_model], T >= 1. `gated_out`, when
    /// given, receives the gated cross-modal feature z_r.
    gs::DeformationDelta forward(const diff::TensorPtr& h, const diff::TensorPtr& tokens,
                                 diff::TensorPtr* gated_out = nullptr) const;

    std::vector<std::string> block_param_names(const std::string& prefix) const;  // attention+gate+ffn
    std::vector<std::string> head_param_names(const std::string& prefix) const;
};

/// no_FAM replacement: plain concat of spatial features with the pooled
/// condition followed by an MLP, position offsets only.
struct ConcatDeformer {
    nn::Mlp trunk;                   // spatial_dim + d_model -> 128 -> 128
    diff::TensorPtr head_w, head_b;  // zero-init [128,3], [3]

    static ConcatDeformer create(diff::ParamStore& store, const std::string& prefix,
                                 int spatial_dim, int d_model, Rng& rng, diff::Dtype dtype);
    gs::DeformationDelta forward(const diff::TensorPtr& h, const diff::TensorPtr& tokens) const;
    std::vector<std::string> trunk_param_names(const std::string& prefix) const;
    std::vector<std::string> head_param_names(const std::string& prefix) const;
};

/// Raw per-frame conditions (constants on the tape).
struct ConditionInput {
    diff::TensorPtr audio_window;  // [T_w, d_audio_raw]
    diff::TensorPtr expr;          // [1, d_expr_raw]
};

struct RoutedDeltas {
    gs::DeformationDelta face, mouth, eyes;
};

/// The complete motion predictor: triplane tables + condition encoders +
/// per-region deformation branches, with the ablation variants.
struct MotionModel {
    AblationMode mode = AblationMode::full;
    enc::TriplaneConfig tri;
    diff::TensorPtr tables;
    enc::ConditionEncoder cond;
    LowFreqNet face;                        // unified net over all Gaussians in no_FAD
    std::optional<HighFreqNet> mouth, eyes;          // full / no_hrpa
    std::optional<ConcatDeformer> mouth_cat, eyes_cat;  // no_fam

    static MotionModel create(diff::ParamStore& store, AblationMode mode,
                              const enc::TriplaneConfig& tri, const enc::ConditionEncoderConfig& cc,
                              Rng& rng, diff::Dtype dtype);

    /// Encodes conditions and produces deltas for every region, assembled in
    /// cloud order. The face branch consumes both conditions; the mouth
    /// branch consumes audio tokens; the eye branch the expression token.
    RoutedDeltas route(const gs::GaussianCloud& cloud, const ConditionInput& cond_in) const;

    /// Learning-rate groups: condition-fusion parameters (spatial gates,
    /// cross-modal attention, condition encoders) vs all other MLPs.
    std::vector<std::string> condition_fusion_param_names() const;
    std::vector<std::string> other_mlp_param_names() const;
    /// Parameters tuned during post-rendering alignment (the mouth branch).
    std::vector<std::string> mouth_branch_param_names() const;
};

}  // namespace fgs::deform
