#include "fgs/gaussians.hpp"

#include <cmath>

#include "fgs/ops.hpp"

namespace fgs::gs {

using diff::Tensor;
using diff::TensorPtr;

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

void check_degree(int degree) {
    if (degree < 0 || degree > 3) throw Error(cat("sh: unsupported degree ", degree));
}

}  // namespace

void sh_basis(int degree, const Eigen::Vector3d& dir, double* basis) {
    check_degree(degree);
    const double x = dir.x(), y = dir.y(), z = dir.z();
    basis[0] = kShC0;
    if (degree < 1) return;
    basis[1] = -kC1 * y;
    basis[2] = kC1 * z;
    basis[3] = -kC1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    basis[4] = kC2[0] * x * y;
    basis[5] = kC2[1] * y * z;
    basis[6] = kC2[2] * (2.0 * zz - xx - yy);
    basis[7] = kC2[3] * x * z;
    basis[8] = kC2[4] * (xx - yy);
    if (degree < 3) return;
    basis[9] = kC3[0] * y * (3.0 * xx - yy);
    basis[10] = kC3[1] * x * y * z;
    basis[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    basis[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    basis[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    basis[14] = kC3[5] * z * (xx - yy);
    basis[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_jacobian(int degree, const Eigen::Vector3d& dir, Eigen::Vector3d* db) {
    check_degree(degree);
    const double x = dir.x(), y = dir.y(), z = dir.z();
    db[0].setZero();
    if (degree < 1) return;
    db[1] = {0.0, -kC1, 0.0};
    db[2] = {0.0, 0.0, kC1};
    db[3] = {-kC1, 0.0, 0.0};
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    db[4] = {kC2[0] * y, kC2[0] * x, 0.0};
    db[5] = {0.0, kC2[1] * z, kC2[1] * y};
    db[6] = {-2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z};
    db[7] = {kC2[3] * z, 0.0, kC2[3] * x};
    db[8] = {2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0};
    if (degree < 3) return;
    db[9] = {6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
    db[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
    db[11] = {-2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z};
    db[12] = {-6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
    db[13] = {kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z};
    db[14] = {2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy)};
    db[15] = {kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0};
}

Eigen::Matrix3d rot_from_unit_quat(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Eigen::Vector4d rot_from_unit_quat_vjp(const Eigen::Vector4d& q, const Eigen::Matrix3d& dR) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Vector4d d;
    d[0] = 2.0 * (-z * dR(0, 1) + y * dR(0, 2) + z * dR(1, 0) - x * dR(1, 2) - y * dR(2, 0) +
                  x * dR(2, 1));
    d[1] = 2.0 * (y * dR(0, 1) + z * dR(0, 2) + y * dR(1, 0) - 2.0 * x * dR(1, 1) - w * dR(1, 2) +
                  z * dR(2, 0) + w * dR(2, 1) - 2.0 * x * dR(2, 2));
    d[2] = 2.0 * (-2.0 * y * dR(0, 0) + x * dR(0, 1) + w * dR(0, 2) + x * dR(1, 0) + z * dR(1, 2) -
                  w * dR(2, 0) + z * dR(2, 1) - 2.0 * y * dR(2, 2));
    d[3] = 2.0 * (-2.0 * z * dR(0, 0) - w * dR(0, 1) + x * dR(0, 2) + w * dR(1, 0) -
                  2.0 * z * dR(1, 1) + y * dR(1, 2) + x * dR(2, 0) + y * dR(2, 1));
    return d;
}

Eigen::Vector4d quat_normalize_vjp(const Eigen::Vector4d& q_raw, const Eigen::Vector4d& d_unit) {
    const double n = q_raw.norm();
    const Eigen::Vector4d u = q_raw / n;
    return (d_unit - u * u.dot(d_unit)) / n;
}

Eigen::Matrix3d covariance_matrix(const Eigen::Vector4d& q_raw, const Eigen::Vector3d& s_log) {
    const double n = q_raw.norm();
    if (n < 1e-8) throw DomainError("covariance: degenerate rotation (|q| < 1e-8)");
    const Eigen::Matrix3d r = rot_from_unit_quat(q_raw / n);
    const Eigen::Vector3d s = s_log.array().exp();
    const Eigen::Matrix3d m = r * s.asDiagonal();
    return m * m.transpose();
}

void covariance_vjp(const Eigen::Vector4d& q_raw, const Eigen::Vector3d& s_log,
                    const Eigen::Matrix3d& d_sigma, Eigen::Vector4d& d_q, Eigen::Vector3d& d_s_log) {
    const double n = q_raw.norm();
    if (n < 1e-8) throw DomainError("covariance: degenerate rotation (|q| < 1e-8)");
    const Eigen::Vector4d qu = q_raw / n;
    const Eigen::Matrix3d r = rot_from_unit_quat(qu);
    const Eigen::Vector3d s = s_log.array().exp();
    const Eigen::Matrix3d m = r * s.asDiagonal();

    const Eigen::Matrix3d d_m = (d_sigma + d_sigma.transpose()) * m;
    const Eigen::Matrix3d d_r = d_m * s.asDiagonal();
    Eigen::Vector3d d_s;
    for (int j = 0; j < 3; ++j) d_s[j] = d_m.col(j).dot(r.col(j));

    d_q += quat_normalize_vjp(q_raw, rot_from_unit_quat_vjp(qu, d_r));
    d_s_log += (d_s.array() * s.array()).matrix();
}

void CloudTensors::validate() const {
    const std::int64_t n = count();
    if (!mu || mu->shape != diff::Shape{n, 3}) throw ShapeError("cloud: mu must be [N,3]");
    if (!rot || rot->shape != diff::Shape{n, 4}) throw ShapeError("cloud: rot must be [N,4]");
    if (!s_log || s_log->shape != diff::Shape{n, 3}) throw ShapeError("cloud: s_log must be [N,3]");
    if (!sh_dc || sh_dc->shape != diff::Shape{n, 3}) throw ShapeError("cloud: sh_dc must be [N,3]");
    if (!alpha_logit || alpha_logit->shape != diff::Shape{n})
        throw ShapeError("cloud: alpha_logit must be [N]");
    const int basis = sh_basis_count(sh_degree);
    if (basis > 1) {
        if (!sh_rest || sh_rest->shape != diff::Shape{n, 3 * (basis - 1)})
            throw ShapeError(cat("cloud: sh_rest must be [N,", 3 * (basis - 1), "] for degree ", sh_degree));
    } else if (sh_rest) {
        throw ShapeError("cloud: sh_rest must be null for degree 0");
    }
}

CloudTensors apply_deformation(const CloudTensors& cloud, const DeformationDelta& delta) {
    cloud.validate();
    CloudTensors out = cloud;
    if (delta.d_mu) out.mu = diff::add(cloud.mu, delta.d_mu);
    if (delta.d_s_log) out.s_log = diff::add(cloud.s_log, delta.d_s_log);
    if (delta.d_rot) {
        out.rot = diff::add(cloud.rot, delta.d_rot);
        const std::int64_t n = out.rot->shape[0];
        for (std::int64_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (int j = 0; j < 4; ++j) {
                const double v = out.rot->data[static_cast<std::size_t>(i * 4 + j)];
                sq += v * v;
            }
            if (std::sqrt(sq) < 1e-8)
                throw DomainError(cat("apply_deformation: degenerate rotation at primitive ", i));
        }
    }
    if (delta.d_sh_dc) out.sh_dc = diff::add(cloud.sh_dc, delta.d_sh_dc);
    return out;
}

diff::TensorPtr covariance(const TensorPtr& rot, const TensorPtr& s_log) {
    if (rot->shape.size() != 2 || rot->shape[1] != 4)
        throw ShapeError(cat("covariance: rot must be [N,4], got ", diff::shape_str(rot->shape)));
    if (s_log->shape.size() != 2 || s_log->shape[1] != 3 || s_log->shape[0] != rot->shape[0])
        throw ShapeError(cat("covariance: shape mismatch ", diff::shape_str(rot->shape), " vs ",
                             diff::shape_str(s_log->shape)));
    const std::int64_t n = rot->shape[0];
    std::vector<double> out(static_cast<std::size_t>(n) * 9);
    for (std::int64_t i = 0; i < n; ++i) {
        const Eigen::Vector4d q(rot->data[static_cast<std::size_t>(i * 4 + 0)],
                                rot->data[static_cast<std::size_t>(i * 4 + 1)],
                                rot->data[static_cast<std::size_t>(i * 4 + 2)],
                                rot->data[static_cast<std::size_t>(i * 4 + 3)]);
        const Eigen::Vector3d s(s_log->data[static_cast<std::size_t>(i * 3 + 0)],
                                s_log->data[static_cast<std::size_t>(i * 3 + 1)],
                                s_log->data[static_cast<std::size_t>(i * 3 + 2)]);
        const Eigen::Matrix3d sigma = covariance_matrix(q, s);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                out[static_cast<std::size_t>(i * 9 + r * 3 + c)] = sigma(r, c);
    }
    return diff::make_op("covariance", {n, 3, 3}, {rot, s_log}, std::move(out), [n](Tensor& t) {
        Tensor& prot = *t.parents[0];
        Tensor& pslog = *t.parents[1];
        for (std::int64_t i = 0; i < n; ++i) {
            Eigen::Matrix3d g;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    g(r, c) = t.grad[static_cast<std::size_t>(i * 9 + r * 3 + c)];
            const Eigen::Vector4d q(prot.data[static_cast<std::size_t>(i * 4 + 0)],
                                    prot.data[static_cast<std::size_t>(i * 4 + 1)],
                                    prot.data[static_cast<std::size_t>(i * 4 + 2)],
                                    prot.data[static_cast<std::size_t>(i * 4 + 3)]);
            const Eigen::Vector3d s(pslog.data[static_cast<std::size_t>(i * 3 + 0)],
                                    pslog.data[static_cast<std::size_t>(i * 3 + 1)],
                                    pslog.data[static_cast<std::size_t>(i * 3 + 2)]);
            Eigen::Vector4d dq = Eigen::Vector4d::Zero();
            Eigen::Vector3d ds = Eigen::Vector3d::Zero();
            covariance_vjp(q, s, g, dq, ds);
            if (prot.needs_grad)
                for (int j = 0; j < 4; ++j) prot.grad[static_cast<std::size_t>(i * 4 + j)] += dq[j];
            if (pslog.needs_grad)
                for (int j = 0; j < 3; ++j) pslog.grad[static_cast<std::size_t>(i * 3 + j)] += ds[j];
        }
    });
}

diff::TensorPtr sh_color(const TensorPtr& sh_dc, const TensorPtr& sh_rest, const TensorPtr& dirs,
                         int degree) {
    check_degree(degree);
    const int basis = sh_basis_count(degree);
    const std::int64_t n = sh_dc ? sh_dc->shape[0] : 0;
    if (!sh_dc || sh_dc->shape != diff::Shape{n, 3})
        throw ShapeError("sh_color: sh_dc must be [N,3]");
    if (basis > 1) {
        if (!sh_rest || sh_rest->shape != diff::Shape{n, 3 * (basis - 1)})
            throw ShapeError(cat("sh_color: coeff count mismatch for degree ", degree, ": want [N,",
                                 3 * (basis - 1), "], got ",
                                 sh_rest ? diff::shape_str(sh_rest->shape) : "null"));
    } else if (sh_rest) {
        throw ShapeError("sh_color: coeff count mismatch: degree 0 takes no sh_rest");
    }
    if (!dirs || dirs->shape != diff::Shape{n, 3})
        throw ShapeError("sh_color: dirs must be [N,3]");
    for (std::int64_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int j = 0; j < 3; ++j) {
            const double v = dirs->data[static_cast<std::size_t>(i * 3 + j)];
            sq += v * v;
        }
        if (std::fabs(std::sqrt(sq) - 1.0) > 1e-6)
            throw DomainError(cat("sh_color: dir row ", i, " is not unit length"));
    }

    std::vector<double> out(static_cast<std::size_t>(n) * 3);
    std::vector<TensorPtr> parents = {sh_dc, dirs};
    if (sh_rest) parents.push_back(sh_rest);
    double bvals[16];
    for (std::int64_t i = 0; i < n; ++i) {
        const Eigen::Vector3d dir(dirs->data[static_cast<std::size_t>(i * 3 + 0)],
                                  dirs->data[static_cast<std::size_t>(i * 3 + 1)],
                                  dirs->data[static_cast<std::size_t>(i * 3 + 2)]);
        sh_basis(degree, dir, bvals);
        for (int c = 0; c < 3; ++c) {
            double acc = 0.5 + sh_dc->data[static_cast<std::size_t>(i * 3 + c)] * bvals[0];
            for (int b = 1; b < basis; ++b)
                acc += sh_rest->data[static_cast<std::size_t>(i * (3 * (basis - 1)) + c * (basis - 1) + b - 1)] *
                       bvals[b];
            out[static_cast<std::size_t>(i * 3 + c)] = std::min(1.0, std::max(0.0, acc));
        }
    }
    return diff::make_op("sh_color", {n, 3}, std::move(parents), std::move(out),
                         [n, degree, basis, has_rest = static_cast<bool>(sh_rest)](Tensor& t) {
                             Tensor& pdc = *t.parents[0];
                             Tensor& pdirs = *t.parents[1];
                             Tensor* prest = has_rest ? t.parents[2].get() : nullptr;
                             double bvals[16];
                             Eigen::Vector3d db[16];
                             for (std::int64_t i = 0; i < n; ++i) {
                                 const Eigen::Vector3d dir(pdirs.data[static_cast<std::size_t>(i * 3 + 0)],
                                                           pdirs.data[static_cast<std::size_t>(i * 3 + 1)],
                                                           pdirs.data[static_cast<std::size_t>(i * 3 + 2)]);
                                 sh_basis(degree, dir, bvals);
                                 sh_basis_jacobian(degree, dir, db);
                                 Eigen::Vector3d ddir = Eigen::Vector3d::Zero();
                                 for (int c = 0; c < 3; ++c) {
                                     const std::size_t oi = static_cast<std::size_t>(i * 3 + c);
                                     const double yv = t.data[oi];
                                     if (yv <= 0.0 || yv >= 1.0) continue;  // clamped
                                     const double g = t.grad[oi];
                                     if (pdc.needs_grad) pdc.grad[oi] += g * bvals[0];
                                     double coeff0 = pdc.data[oi];
                                     ddir += g * coeff0 * db[0];
                                     for (int b = 1; b < basis; ++b) {
                                         const std::size_t ri = static_cast<std::size_t>(
                                             i * (3 * (basis - 1)) + c * (basis - 1) + b - 1);
                                         if (prest && prest->needs_grad) prest->grad[ri] += g * bvals[b];
                                         if (prest) ddir += g * prest->data[ri] * db[b];
                                     }
                                 }
                                 if (pdirs.needs_grad)
                                     for (int j = 0; j < 3; ++j)
                                         pdirs.grad[static_cast<std::size_t>(i * 3 + j)] += ddir[j];
                             }
                         });
}

GaussianCloud GaussianCloud::create(std::array<std::int64_t, 3> counts, int sh_degree,
                                    diff::Dtype dtype, bool requires_grad) {
    check_degree(sh_degree);
    GaussianCloud cloud;
    cloud.counts = counts;
    cloud.sh_degree = sh_degree;
    const std::int64_t n = cloud.total();
    const int basis = sh_basis_count(sh_degree);
    cloud.mu = Tensor::leaf({n, 3}, dtype, requires_grad);
    cloud.rot = Tensor::leaf({n, 4}, dtype, requires_grad);
    cloud.s_log = Tensor::leaf({n, 3}, dtype, requires_grad);
    cloud.sh_dc = Tensor::leaf({n, 3}, dtype, requires_grad);
    if (basis > 1) cloud.sh_rest = Tensor::leaf({n, 3 * (basis - 1)}, dtype, requires_grad);
    cloud.alpha_logit = Tensor::leaf({n}, dtype, requires_grad);
    return cloud;
}

std::int64_t GaussianCloud::region_start(Region r) const {
    switch (r) {
        case Region::face: return 0;
        case Region::mouth: return counts[0];
        default: return counts[0] + counts[1];
    }
}

Region GaussianCloud::region_of(std::int64_t index) const {
    if (index < 0 || index >= total()) throw Error(cat("region_of: index ", index, " out of range"));
    if (index < counts[0]) return Region::face;
    if (index < counts[0] + counts[1]) return Region::mouth;
    return Region::eyes;
}

CloudTensors GaussianCloud::region_view(Region r) const {
    const std::int64_t start = region_start(r);
    const std::int64_t len = region_count(r);
    CloudTensors v;
    v.mu = diff::slice(mu, 0, start, len);
    v.rot = diff::slice(rot, 0, start, len);
    v.s_log = diff::slice(s_log, 0, start, len);
    v.sh_dc = diff::slice(sh_dc, 0, start, len);
    if (sh_rest) v.sh_rest = diff::slice(sh_rest, 0, start, len);
    v.alpha_logit = diff::slice(alpha_logit, 0, start, len);
    v.sh_degree = sh_degree;
    return v;
}

CloudTensors GaussianCloud::full_view() const {
    return CloudTensors{mu, rot, s_log, sh_dc, sh_rest, alpha_logit, sh_degree};
}

void GaussianCloud::register_params(diff::ParamStore& store, const std::string& prefix) const {
    store.put(prefix + "mu", mu);
    store.put(prefix + "rot", rot);
    store.put(prefix + "s_log", s_log);
    store.put(prefix + "sh_dc", sh_dc);
    if (sh_rest) store.put(prefix + "sh_rest", sh_rest);
    store.put(prefix + "alpha_logit", alpha_logit);
}

TensorArchive GaussianCloud::to_archive() const {
    const std::int64_t n = total();
    const int basis = sh_basis_count(sh_degree);
    TensorArchive a;
    a.add("mu", FgtTensor{mu->shape, mu->dtype, mu->data});
    a.add("rot", FgtTensor{rot->shape, rot->dtype, rot->data});
    a.add("s_log", FgtTensor{s_log->shape, s_log->dtype, s_log->data});

    FgtTensor sh;
    sh.shape = {n, 3, basis};
    sh.dtype = sh_dc->dtype;
    sh.data.resize(static_cast<std::size_t>(n) * 3 * basis);
    for (std::int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            sh.data[static_cast<std::size_t>((i * 3 + c) * basis)] =
                sh_dc->data[static_cast<std::size_t>(i * 3 + c)];
            for (int b = 1; b < basis; ++b)
                sh.data[static_cast<std::size_t>((i * 3 + c) * basis + b)] =
                    sh_rest->data[static_cast<std::size_t>(i * (3 * (basis - 1)) + c * (basis - 1) + b - 1)];
        }
    a.add("sh", std::move(sh));
    a.add("alpha_logit", FgtTensor{alpha_logit->shape, alpha_logit->dtype, alpha_logit->data});

    FgtTensor ids;
    ids.shape = {n};
    ids.dtype = diff::Dtype::F32;
    ids.data.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        ids.data[static_cast<std::size_t>(i)] = static_cast<double>(static_cast<int>(region_of(i)));
    a.add("region_ids", std::move(ids));

    a.extra["layout_version"] = 1;
    a.extra["sh_degree"] = sh_degree;
    a.extra["counts"] = {{"face", counts[0]}, {"mouth", counts[1]}, {"eyes", counts[2]}};
    return a;
}

GaussianCloud GaussianCloud::from_archive(const TensorArchive& a, diff::Dtype dtype,
                                          bool requires_grad) {
    const auto& counts_json = a.extra.at("counts");
    std::array<std::int64_t, 3> counts = {counts_json.at("face").get<std::int64_t>(),
                                          counts_json.at("mouth").get<std::int64_t>(),
                                          counts_json.at("eyes").get<std::int64_t>()};
    const int sh_degree = a.extra.at("sh_degree").get<int>();
    GaussianCloud cloud = create(counts, sh_degree, dtype, requires_grad);
    const std::int64_t n = cloud.total();
    const int basis = sh_basis_count(sh_degree);

    const auto expect = [n](const FgtTensor& t, diff::Shape shape, const char* name) {
        if (t.shape != shape)
            throw DataError(cat("cloud checkpoint: tensor '", name, "' has shape ",
                                diff::shape_str(t.shape), ", want ", diff::shape_str(shape)));
        (void)n;
    };
    expect(a.get("mu"), {n, 3}, "mu");
    expect(a.get("rot"), {n, 4}, "rot");
    expect(a.get("s_log"), {n, 3}, "s_log");
    expect(a.get("sh"), {n, 3, basis}, "sh");
    expect(a.get("alpha_logit"), {n}, "alpha_logit");

    cloud.mu->set_data(a.get("mu").data);
    cloud.rot->set_data(a.get("rot").data);
    cloud.s_log->set_data(a.get("s_log").data);
    cloud.alpha_logit->set_data(a.get("alpha_logit").data);
    const auto& sh = a.get("sh").data;
    std::vector<double> dc(static_cast<std::size_t>(n) * 3);
    std::vector<double> rest(basis > 1 ? static_cast<std::size_t>(n) * 3 * (basis - 1) : 0);
    for (std::int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            dc[static_cast<std::size_t>(i * 3 + c)] = sh[static_cast<std::size_t>((i * 3 + c) * basis)];
            for (int b = 1; b < basis; ++b)
                rest[static_cast<std::size_t>(i * (3 * (basis - 1)) + c * (basis - 1) + b - 1)] =
                    sh[static_cast<std::size_t>((i * 3 + c) * basis + b)];
        }
    cloud.sh_dc->set_data(dc);
    if (basis > 1) cloud.sh_rest->set_data(rest);
    return cloud;
}

}  // namespace fgs::gs
