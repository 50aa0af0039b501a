#include "fgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "fgs/ops.hpp"

namespace fgs::raster {

namespace {

using std::int64_t;

constexpr double kAlphaClamp = 0.99;
constexpr double kAlphaSkip = 1.0 / 255.0;
constexpr double kMaxMahalanobisSq = 9.0;  // 3 sigma contribution gate
constexpr double kCovFloor = 0.3;
constexpr double kDetEps = 1e-12;

struct TileGrid {
    int tiles_x = 0, tiles_y = 0, tile = 16;
    std::vector<std::vector<int64_t>> candidates;  // per tile, in global depth order
};

/// Bins sorted splats into tiles. The one-pixel padding keeps the bbox a
/// strict superset of the 3 sigma ellipse even at floating-point boundaries.
TileGrid bin_tiles(const ProjectedCloud& proj, int width, int height, int tile) {
    TileGrid grid;
    grid.tile = tile;
    grid.tiles_x = (width + tile - 1) / tile;
    grid.tiles_y = (height + tile - 1) / tile;
    grid.candidates.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
    for (int64_t idx : proj.sorted) {
        const Splat& s = proj.splats[static_cast<std::size_t>(idx)];
        const int x0 = std::max(0, static_cast<int>(std::floor(s.mean2d.x() - s.radius)) - 1);
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(s.mean2d.x() + s.radius)) + 1);
        const int y0 = std::max(0, static_cast<int>(std::floor(s.mean2d.y() - s.radius)) - 1);
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(s.mean2d.y() + s.radius)) + 1);
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / tile; ty <= y1 / tile; ++ty)
            for (int tx = x0 / tile; tx <= x1 / tile; ++tx)
                grid.candidates[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(idx);
    }
    return grid;
}

void parallel_tiles(int n_tiles, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n_tiles <= 1) {
        for (int t = 0; t < n_tiles; ++t) fn(t);
        return;
    }
    const int workers = std::min(threads, n_tiles);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int t = w; t < n_tiles; t += workers) fn(t);
        });
    for (auto& th : pool) th.join();
}

/// Front-to-back composite of one tile into rgba [4,H,W] and final
/// transmittance [H*W]. The per-pixel arithmetic here is the render contract;
/// the brute-force oracle in the tests re-derives it over all splats.
void composite_tile(const ProjectedCloud& proj, const TileGrid& grid, int tile_index,
                    const Eigen::Vector3d& bg, int width, int height, double* rgba,
                    double* final_t) {
    const int tx = tile_index % grid.tiles_x;
    const int ty = tile_index / grid.tiles_x;
    const int x0 = tx * grid.tile, x1 = std::min(width, x0 + grid.tile);
    const int y0 = ty * grid.tile, y1 = std::min(height, y0 + grid.tile);
    const auto& cand = grid.candidates[static_cast<std::size_t>(tile_index)];
    const int64_t hw = static_cast<int64_t>(width) * height;

    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double T = 1.0;
            double c0 = 0.0, c1 = 0.0, c2 = 0.0;
            for (int64_t idx : cand) {
                const Splat& s = proj.splats[static_cast<std::size_t>(idx)];
                const double dx = s.mean2d.x() - x;
                const double dy = s.mean2d.y() - y;
                const double m2 = s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy +
                                  s.conic(1, 1) * dy * dy;
                if (m2 > kMaxMahalanobisSq) continue;
                const double alpha = std::min(kAlphaClamp, s.opacity * std::exp(-0.5 * m2));
                if (alpha < kAlphaSkip) continue;
                const double w = alpha * T;
                c0 += s.color.x() * w;
                c1 += s.color.y() * w;
                c2 += s.color.z() * w;
                T *= 1.0 - alpha;
            }
            const int64_t pix = static_cast<int64_t>(y) * width + x;
            rgba[pix] = c0 + bg.x() * T;
            rgba[hw + pix] = c1 + bg.y() * T;
            rgba[2 * hw + pix] = c2 + bg.z() * T;
            rgba[3 * hw + pix] = 1.0 - T;
            final_t[pix] = T;
        }
}

/// Per-splat gradients in image/screen quantities, accumulated over pixels.
struct SplatGrad {
    Eigen::Vector3d d_color = Eigen::Vector3d::Zero();
    double d_opacity = 0.0;
    Eigen::Vector2d d_mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d d_conic = Eigen::Matrix2d::Zero();
};

/// Back-to-front walk of one tile. Transmittance is recomputed by dividing
/// out each contributor from the stored final value, so no per-pixel splat
/// lists are kept.
void backward_tile(const ProjectedCloud& proj, const TileGrid& grid, int tile_index,
                   const Eigen::Vector3d& bg, int width, int height, const double* grad_rgba,
                   const double* final_t, std::vector<SplatGrad>& acc) {
    const int tx = tile_index % grid.tiles_x;
    const int ty = tile_index / grid.tiles_x;
    const int x0 = tx * grid.tile, x1 = std::min(width, x0 + grid.tile);
    const int y0 = ty * grid.tile, y1 = std::min(height, y0 + grid.tile);
    const auto& cand = grid.candidates[static_cast<std::size_t>(tile_index)];
    const int64_t hw = static_cast<int64_t>(width) * height;

    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const int64_t pix = static_cast<int64_t>(y) * width + x;
            const double g0 = grad_rgba[pix];
            const double g1 = grad_rgba[hw + pix];
            const double g2 = grad_rgba[2 * hw + pix];
            const double g_alpha = grad_rgba[3 * hw + pix];
            if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g_alpha == 0.0) continue;

            const double Tn = final_t[pix];
            double T = Tn;                                  // transmittance after current splat
            Eigen::Vector3d suffix = Eigen::Vector3d::Zero();  // sum of c_j alpha_j T_j behind us
            for (auto it = cand.rbegin(); it != cand.rend(); ++it) {
                const int64_t idx = *it;
                const Splat& s = proj.splats[static_cast<std::size_t>(idx)];
                const double dx = s.mean2d.x() - x;
                const double dy = s.mean2d.y() - y;
                const double m2 = s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy +
                                  s.conic(1, 1) * dy * dy;
                if (m2 > kMaxMahalanobisSq) continue;
                const double raw = s.opacity * std::exp(-0.5 * m2);
                const double alpha = std::min(kAlphaClamp, raw);
                if (alpha < kAlphaSkip) continue;

                const double ra = 1.0 / (1.0 - alpha);
                T *= ra;  // transmittance in front of this splat
                const double w = alpha * T;
                SplatGrad& sg = acc[static_cast<std::size_t>(idx)];
                sg.d_color += Eigen::Vector3d(g0, g1, g2) * w;

                double v_alpha = g0 * (s.color.x() * T - suffix.x() * ra) +
                                 g1 * (s.color.y() * T - suffix.y() * ra) +
                                 g2 * (s.color.z() * T - suffix.z() * ra) +
                                 g_alpha * Tn * ra -
                                 (g0 * bg.x() + g1 * bg.y() + g2 * bg.z()) * Tn * ra;
                suffix += s.color * w;

                if (raw >= kAlphaClamp) continue;  // clamped: no grad into alpha
                const double vis = std::exp(-0.5 * m2);
                sg.d_opacity += vis * v_alpha;
                const double v_m2 = -0.5 * s.opacity * vis * v_alpha;
                sg.d_mean.x() += v_m2 * 2.0 * (s.conic(0, 0) * dx + s.conic(0, 1) * dy);
                sg.d_mean.y() += v_m2 * 2.0 * (s.conic(0, 1) * dx + s.conic(1, 1) * dy);
                sg.d_conic(0, 0) += v_m2 * dx * dx;
                sg.d_conic(0, 1) += v_m2 * dx * dy;
                sg.d_conic(1, 0) += v_m2 * dy * dx;
                sg.d_conic(1, 1) += v_m2 * dy * dy;
            }
        }
}

}  // namespace

ProjectedCloud project(const double* mu, const double* rot, const double* s_log,
                       const double* sh_dc, const double* sh_rest, const double* alpha_logit,
                       int64_t count, int sh_degree, const Camera& cam, const RenderOptions& opt) {
    cam.validate();
    const Eigen::Matrix3d W = cam.rotation();
    const Eigen::Vector3d p = cam.translation();
    const Eigen::Vector3d cam_pos = cam.position();
    const int basis = gs::sh_basis_count(sh_degree);

    ProjectedCloud out;
    out.splats.resize(static_cast<std::size_t>(count));
    double bvals[16];
    for (int64_t i = 0; i < count; ++i) {
        Splat& s = out.splats[static_cast<std::size_t>(i)];
        const Eigen::Vector3d mu_i(mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]);
        const Eigen::Vector3d t = W * mu_i + p;
        if (t.z() <= opt.z_near) continue;  // culled

        const Eigen::Vector4d q(rot[i * 4], rot[i * 4 + 1], rot[i * 4 + 2], rot[i * 4 + 3]);
        const Eigen::Vector3d sl(s_log[i * 3], s_log[i * 3 + 1], s_log[i * 3 + 2]);
        const Eigen::Matrix3d cov3d = gs::covariance_matrix(q, sl);

        const double rz = 1.0 / t.z();
        const double rz2 = rz * rz;
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx * rz, 0.0, -cam.fx * t.x() * rz2, 0.0, cam.fy * rz, -cam.fy * t.y() * rz2;
        const Eigen::Matrix<double, 2, 3> Tm = J * W;
        Eigen::Matrix2d cov2d = Tm * cov3d * Tm.transpose();
        cov2d(0, 0) += kCovFloor;
        cov2d(1, 1) += kCovFloor;

        const double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
        if (det < kDetEps) {
            ++out.skipped_singular;
            continue;
        }
        s.conic << cov2d(1, 1) / det, -cov2d(0, 1) / det, -cov2d(1, 0) / det, cov2d(0, 0) / det;
        s.cov2d = cov2d;
        const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
        const double lam_max = mid + std::sqrt(std::max(mid * mid - det, 0.0));
        s.radius = 3.0 * std::sqrt(lam_max);
        s.mean2d = {cam.fx * t.x() * rz + cam.cx, cam.fy * t.y() * rz + cam.cy};
        s.depth = t.z();
        s.view_point = t;

        const Eigen::Vector3d to_cam = mu_i - cam_pos;
        s.view_dist = to_cam.norm();
        s.view_dir = to_cam / s.view_dist;
        gs::sh_basis(sh_degree, s.view_dir, bvals);
        for (int c = 0; c < 3; ++c) {
            double acc = 0.5 + sh_dc[i * 3 + c] * bvals[0];
            for (int b = 1; b < basis; ++b)
                acc += sh_rest[i * (3 * (basis - 1)) + c * (basis - 1) + b - 1] * bvals[b];
            s.color[c] = std::min(1.0, std::max(0.0, acc));
        }
        s.opacity = 1.0 / (1.0 + std::exp(-alpha_logit[i]));
        s.culled = false;
    }

    out.sorted.reserve(static_cast<std::size_t>(count));
    for (int64_t i = 0; i < count; ++i)
        if (!out.splats[static_cast<std::size_t>(i)].culled) out.sorted.push_back(i);
    std::stable_sort(out.sorted.begin(), out.sorted.end(), [&](int64_t a, int64_t b) {
        return out.splats[static_cast<std::size_t>(a)].depth < out.splats[static_cast<std::size_t>(b)].depth;
    });
    return out;
}

RenderResult render(const gs::CloudTensors& cloud, const Camera& cam, const RenderOptions& opt) {
    cloud.validate();
    auto proj = std::make_shared<ProjectedCloud>(project(cloud, cam, opt));
    const int W = cam.width, H = cam.height;
    const int64_t hw = static_cast<int64_t>(W) * H;
    auto grid = std::make_shared<TileGrid>(bin_tiles(*proj, W, H, opt.tile_size));
    auto final_t = std::make_shared<std::vector<double>>(static_cast<std::size_t>(hw), 1.0);

    std::vector<double> rgba(static_cast<std::size_t>(4 * hw), 0.0);
    const int n_tiles = grid->tiles_x * grid->tiles_y;
    parallel_tiles(n_tiles, opt.threads, [&](int tile) {
        composite_tile(*proj, *grid, tile, opt.background, W, H, rgba.data(), final_t->data());
    });

    const int sh_degree = cloud.sh_degree;
    const int basis = gs::sh_basis_count(sh_degree);
    const Camera camera = cam;
    const RenderOptions options = opt;
    std::vector<diff::TensorPtr> parents = {cloud.mu, cloud.rot, cloud.s_log, cloud.sh_dc,
                                            cloud.alpha_logit};
    if (cloud.sh_rest) parents.push_back(cloud.sh_rest);

    auto bw = [proj, grid, final_t, camera, options, sh_degree, basis, W, H,
               hw](diff::Tensor& node) {
        diff::Tensor& p_mu = *node.parents[0];
        diff::Tensor& p_rot = *node.parents[1];
        diff::Tensor& p_slog = *node.parents[2];
        diff::Tensor& p_dc = *node.parents[3];
        diff::Tensor& p_logit = *node.parents[4];
        diff::Tensor* p_rest = node.parents.size() > 5 ? node.parents[5].get() : nullptr;

        // Screen-space gradients per splat, accumulated per tile and reduced
        // in tile order so results are identical for any thread count.
        const int n_tiles = grid->tiles_x * grid->tiles_y;
        std::vector<std::vector<SplatGrad>> per_tile(static_cast<std::size_t>(n_tiles));
        parallel_tiles(n_tiles, options.threads, [&](int tile) {
            auto& acc = per_tile[static_cast<std::size_t>(tile)];
            acc.assign(proj->splats.size(), SplatGrad{});
            backward_tile(*proj, *grid, tile, options.background, W, H, node.grad.data(),
                          final_t->data(), acc);
        });
        std::vector<SplatGrad> total(proj->splats.size());
        for (int tile = 0; tile < n_tiles; ++tile) {
            const auto& acc = per_tile[static_cast<std::size_t>(tile)];
            for (std::size_t i = 0; i < acc.size(); ++i) {
                total[i].d_color += acc[i].d_color;
                total[i].d_opacity += acc[i].d_opacity;
                total[i].d_mean += acc[i].d_mean;
                total[i].d_conic += acc[i].d_conic;
            }
        }

        const Eigen::Matrix3d Wr = camera.rotation();
        double bvals[16];
        Eigen::Vector3d dbasis[16];
        for (std::size_t i = 0; i < proj->splats.size(); ++i) {
            const Splat& s = proj->splats[i];
            if (s.culled) continue;
            const SplatGrad& sg = total[i];
            if (sg.d_color.isZero(0.0) && sg.d_opacity == 0.0 && sg.d_mean.isZero(0.0) &&
                sg.d_conic.isZero(0.0))
                continue;

            Eigen::Vector3d d_mu = Eigen::Vector3d::Zero();

            // Opacity -> logit.
            if (p_logit.needs_grad)
                p_logit.grad[i] += sg.d_opacity * s.opacity * (1.0 - s.opacity);

            // Color -> SH coefficients and view direction -> mu.
            gs::sh_basis(sh_degree, s.view_dir, bvals);
            gs::sh_basis_jacobian(sh_degree, s.view_dir, dbasis);
            Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
            for (int c = 0; c < 3; ++c) {
                const double yv = s.color[c];
                if (yv <= 0.0 || yv >= 1.0) continue;  // clamped channel
                const double g = sg.d_color[c];
                if (g == 0.0) continue;
                if (p_dc.needs_grad) p_dc.grad[i * 3 + static_cast<std::size_t>(c)] += g * bvals[0];
                d_dir += g * p_dc.data[i * 3 + static_cast<std::size_t>(c)] * dbasis[0];
                for (int b = 1; b < basis; ++b) {
                    const std::size_t ri =
                        i * static_cast<std::size_t>(3 * (basis - 1)) +
                        static_cast<std::size_t>(c * (basis - 1) + b - 1);
                    if (p_rest && p_rest->needs_grad) p_rest->grad[ri] += g * bvals[b];
                    if (p_rest) d_dir += g * p_rest->data[ri] * dbasis[b];
                }
            }
            // dir = (mu - cam) / |mu - cam|
            d_mu += (d_dir - s.view_dir * s.view_dir.dot(d_dir)) / s.view_dist;

            // Conic -> cov2d (inverse), then through the EWA projection.
            const Eigen::Matrix2d d_cov2d = -s.conic * sg.d_conic * s.conic;
            const Eigen::Vector3d t = s.view_point;
            const double rz = 1.0 / t.z();
            const double rz2 = rz * rz;
            Eigen::Matrix<double, 2, 3> J;
            J << camera.fx * rz, 0.0, -camera.fx * t.x() * rz2, 0.0, camera.fy * rz,
                -camera.fy * t.y() * rz2;
            const Eigen::Matrix<double, 2, 3> Tm = J * Wr;

            // Recover cov3d from the stored quantities.
            const Eigen::Vector4d q(p_rot.data[i * 4], p_rot.data[i * 4 + 1], p_rot.data[i * 4 + 2],
                                    p_rot.data[i * 4 + 3]);
            const Eigen::Vector3d sl(p_slog.data[i * 3], p_slog.data[i * 3 + 1],
                                     p_slog.data[i * 3 + 2]);
            const Eigen::Matrix3d cov3d = gs::covariance_matrix(q, sl);

            const Eigen::Matrix3d d_cov3d = Tm.transpose() * d_cov2d * Tm;
            if (p_rot.needs_grad || p_slog.needs_grad) {
                Eigen::Vector4d d_q = Eigen::Vector4d::Zero();
                Eigen::Vector3d d_sl = Eigen::Vector3d::Zero();
                gs::covariance_vjp(q, sl, d_cov3d, d_q, d_sl);
                if (p_rot.needs_grad)
                    for (int j = 0; j < 4; ++j) p_rot.grad[i * 4 + static_cast<std::size_t>(j)] += d_q[j];
                if (p_slog.needs_grad)
                    for (int j = 0; j < 3; ++j)
                        p_slog.grad[i * 3 + static_cast<std::size_t>(j)] += d_sl[j];
            }

            // d(cov2d)/dT and d(T)/dJ, then J's dependence on the view point.
            const Eigen::Matrix<double, 2, 3> d_T =
                (d_cov2d + d_cov2d.transpose()) * Tm * cov3d;
            const Eigen::Matrix<double, 2, 3> d_J = d_T * Wr.transpose();

            Eigen::Vector3d d_t = Eigen::Vector3d::Zero();
            d_t.x() += d_J(0, 2) * (-camera.fx * rz2);
            d_t.y() += d_J(1, 2) * (-camera.fy * rz2);
            d_t.z() += d_J(0, 0) * (-camera.fx * rz2) + d_J(0, 2) * (2.0 * camera.fx * t.x() * rz2 * rz) +
                       d_J(1, 1) * (-camera.fy * rz2) + d_J(1, 2) * (2.0 * camera.fy * t.y() * rz2 * rz);

            // 2D mean -> view point.
            d_t.x() += sg.d_mean.x() * camera.fx * rz;
            d_t.y() += sg.d_mean.y() * camera.fy * rz;
            d_t.z() += -sg.d_mean.x() * camera.fx * t.x() * rz2 - sg.d_mean.y() * camera.fy * t.y() * rz2;

            d_mu += Wr.transpose() * d_t;
            if (p_mu.needs_grad)
                for (int j = 0; j < 3; ++j) p_mu.grad[i * 3 + static_cast<std::size_t>(j)] += d_mu[j];
        }
    };

    RenderResult result;
    result.skipped_singular = proj->skipped_singular;
    result.rgba = diff::make_op("render", {4, H, W}, std::move(parents), std::move(rgba), bw);
    result.color = diff::slice(result.rgba, 0, 0, 3);
    result.alpha = diff::reshape(diff::slice(result.rgba, 0, 3, 1), {H, W});
    return result;
}

ImagePair render_to_images(const gs::CloudTensors& cloud, const Camera& cam,
                           const RenderOptions& opt) {
    auto res = render(cloud, cam, opt);
    ImagePair out;
    out.color = Image(3, cam.height, cam.width);
    out.alpha = Image(1, cam.height, cam.width);
    const int64_t hw = static_cast<int64_t>(cam.width) * cam.height;
    for (int64_t i = 0; i < 3 * hw; ++i) out.color.data[static_cast<std::size_t>(i)] = res.rgba->data[static_cast<std::size_t>(i)];
    for (int64_t i = 0; i < hw; ++i)
        out.alpha.data[static_cast<std::size_t>(i)] = res.rgba->data[static_cast<std::size_t>(3 * hw + i)];
    return out;
}

}  // namespace fgs::raster
