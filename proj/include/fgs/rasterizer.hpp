#pragma once

#include <vector>

#include "fgs/camera.hpp"
#include "fgs/gaussians.hpp"
#include "fgs/image.hpp"

namespace fgs::raster {

struct RenderOptions {
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    double z_near = 0.01;
    int tile_size = 16;
    int threads = 1;
};

/// One projected primitive. Non-culled splats carry everything the
/// compositor and the backward pass need.
struct Splat {
    bool culled = true;
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Zero();  // EWA + 0.3 I floor
    Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();  // cov2d^{-1}
    double depth = 0.0;                               // view-space z
    double radius = 0.0;                              // 3 sigma screen radius
    Eigen::Vector3d color = Eigen::Vector3d::Zero();  // SH-evaluated, clamped
    double opacity = 0.0;                             // sigmoid(alpha_logit)
    // Cached forward state for the backward pass.
    Eigen::Vector3d view_point = Eigen::Vector3d::Zero();  // t = W mu + p
    Eigen::Vector3d view_dir = Eigen::Vector3d::Zero();    // unit, world frame
    double view_dist = 0.0;                                // |mu - cam position|
};

struct ProjectedCloud {
    std::vector<Splat> splats;            // one per primitive, cloud order
    std::vector<std::int64_t> sorted;     // indices of non-culled splats by (depth, index)
    int skipped_singular = 0;             // det(cov2d) < 1e-12
};

/// EWA projection of raw attribute arrays. Splats behind z_near are culled;
/// singular 2D covariances are skipped with a counter.
ProjectedCloud project(const double* mu, const double* rot, const double* s_log,
                       const double* sh_dc, const double* sh_rest, const double* alpha_logit,
                       std::int64_t count, int sh_degree, const Camera& cam,
                       const RenderOptions& opt);

inline ProjectedCloud project(const gs::CloudTensors& cloud, const Camera& cam,
                              const RenderOptions& opt = {}) {
    cloud.validate();
    return project(cloud.mu->data.data(), cloud.rot->data.data(), cloud.s_log->data.data(),
                   cloud.sh_dc->data.data(), cloud.sh_rest ? cloud.sh_rest->data.data() : nullptr,
                   cloud.alpha_logit->data.data(), cloud.count(), cloud.sh_degree, cam, opt);
}

/// Differentiable render. The returned node has shape [4,H,W] (RGB planes
/// then accumulated alpha); color()/alpha() are tape slices of it. Gradients
/// reach every cloud attribute tensor.
struct RenderResult {
    diff::TensorPtr rgba;   // [4,H,W]
    diff::TensorPtr color;  // [3,H,W]
    diff::TensorPtr alpha;  // [H,W]
    int skipped_singular = 0;
};

RenderResult render(const gs::CloudTensors& cloud, const Camera& cam, const RenderOptions& opt = {});

/// Convenience for non-trained consumers: color image plus alpha mask.
struct ImagePair {
    Image color;  // 3xHxW
    Image alpha;  // 1xHxW
};
ImagePair render_to_images(const gs::CloudTensors& cloud, const Camera& cam,
                           const RenderOptions& opt = {});

}  // namespace fgs::raster
