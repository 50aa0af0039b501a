#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>

#include "fgs/adam.hpp"
#include "fgs/archive.hpp"
#include "fgs/tensor.hpp"

namespace fgs::gs {

enum class Region : std::uint8_t { face = 0, mouth = 1, eyes = 2 };
inline const char* region_name(Region r) {
    switch (r) {
        case Region::face: return "face";
        case Region::mouth: return "mouth";
        default: return "eyes";
    }
}
constexpr std::array<Region, 3> kRegions = {Region::face, Region::mouth, Region::eyes};

inline int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }
constexpr double kShC0 = 0.28209479177387814;

/// Real SH basis values for a unit direction, plus d(basis)/d(dir).
/// `basis` and `dbasis` must hold sh_basis_count(degree) entries.
void sh_basis(int degree, const Eigen::Vector3d& dir, double* basis);
void sh_basis_jacobian(int degree, const Eigen::Vector3d& dir, Eigen::Vector3d* dbasis);

// ---- quaternion/covariance kernels (shared with the rasterizer backward) ----

/// Rotation matrix from a unit quaternion (w, x, y, z).
Eigen::Matrix3d rot_from_unit_quat(const Eigen::Vector4d& q);
/// Accumulates dL/dq_unit given dL/dR.
Eigen::Vector4d rot_from_unit_quat_vjp(const Eigen::Vector4d& q, const Eigen::Matrix3d& dR);
/// dL/dq_raw from dL/dq_unit through q_unit = q_raw/|q_raw|.
Eigen::Vector4d quat_normalize_vjp(const Eigen::Vector4d& q_raw, const Eigen::Vector4d& d_unit);

/// Covariance of one primitive: R S S^T R^T with S = diag(exp(s_log)).
/// Throws DomainError when |q_raw| < 1e-8.
Eigen::Matrix3d covariance_matrix(const Eigen::Vector4d& q_raw, const Eigen::Vector3d& s_log);
/// VJP of covariance_matrix: given dL/dSigma (full 3x3), accumulate gradients
/// on the raw quaternion and log-scales.
void covariance_vjp(const Eigen::Vector4d& q_raw, const Eigen::Vector3d& s_log,
                    const Eigen::Matrix3d& d_sigma, Eigen::Vector4d& d_q, Eigen::Vector3d& d_s_log);

// ---- tape-facing attribute bundles ----

/// One region's (possibly deformed) attribute tensors, as seen by the
/// rasterizer. sh_rest is null when degree is 0.
struct CloudTensors {
    diff::TensorPtr mu;           // [N,3]
    diff::TensorPtr rot;          // [N,4] unconstrained; consumed normalized
    diff::TensorPtr s_log;        // [N,3]
    diff::TensorPtr sh_dc;        // [N,3]
    diff::TensorPtr sh_rest;      // [N, 3*(basis-1)] or null
    diff::TensorPtr alpha_logit;  // [N]
    int sh_degree = 0;

    std::int64_t count() const { return mu ? mu->shape[0] : 0; }
    void validate() const;
};

/// Per-primitive offsets applied to a static cloud. Null members mean
/// identically zero (and are required null for high-frequency regions, which
/// predict position offsets only).
struct DeformationDelta {
    diff::TensorPtr d_mu;     // [N,3]
    diff::TensorPtr d_s_log;  // [N,3]
    diff::TensorPtr d_rot;    // [N,4]
    diff::TensorPtr d_sh_dc;  // [N,3]
};

/// mu' = mu + dmu, s' = s + ds (log-space), r' = r + dr (consumed normalized;
/// degenerate norms rejected here), dc' = dc + d_sh_dc. Opacity and higher SH
/// bands pass through. Null deltas pass the original tensors through, so the
/// all-null case is the identity bit-for-bit.
CloudTensors apply_deformation(const CloudTensors& cloud, const DeformationDelta& delta);

// ---- tape ops (gradients flow to all stored parameters) ----

/// Per-primitive covariance matrices, output [N,3,3].
diff::TensorPtr covariance(const diff::TensorPtr& rot, const diff::TensorPtr& s_log);

/// View-dependent RGB in [0,1]: clamp(sum_c coeffs * basis + 0.5, 0, 1).
/// dirs must be unit rows within 1e-6. Output [N,3].
diff::TensorPtr sh_color(const diff::TensorPtr& sh_dc, const diff::TensorPtr& sh_rest,
                         const diff::TensorPtr& dirs, int degree);

// ---- region-labeled cloud ----

/// Region-labeled set of primitives. Attributes are contiguous leaf tensors
/// over all primitives; the three regions occupy contiguous index ranges
/// (face, mouth, eyes) that partition the cloud.
class GaussianCloud {
public:
    diff::TensorPtr mu, rot, s_log, sh_dc, sh_rest, alpha_logit;
    std::array<std::int64_t, 3> counts = {0, 0, 0};  // face, mouth, eyes
    int sh_degree = 0;

    static GaussianCloud create(std::array<std::int64_t, 3> counts, int sh_degree,
                                diff::Dtype dtype, bool requires_grad);

    std::int64_t total() const { return counts[0] + counts[1] + counts[2]; }
    std::int64_t region_start(Region r) const;
    std::int64_t region_count(Region r) const { return counts[static_cast<std::size_t>(r)]; }
    Region region_of(std::int64_t index) const;

    /// Tape slices of one region's attributes (gradients reach the leaves).
    CloudTensors region_view(Region r) const;
    CloudTensors full_view() const;

    void register_params(diff::ParamStore& store, const std::string& prefix) const;

    /// Checkpoint archive: mu, rot, s_log, sh ([N,3,basis] combined),
    /// alpha_logit, region_ids, plus counts and SH degree in the manifest.
    TensorArchive to_archive() const;
    static GaussianCloud from_archive(const TensorArchive& archive, diff::Dtype dtype,
                                      bool requires_grad);
    void save(const std::string& dir) const { to_archive().save(dir); }
    static GaussianCloud load(const std::string& dir, diff::Dtype dtype, bool requires_grad) {
        return from_archive(TensorArchive::load(dir), dtype, requires_grad);
    }
};

}  // namespace fgs::gs
