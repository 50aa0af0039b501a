#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fgs/gaussians.hpp"
#include "fgs/gradcheck.hpp"
#include "fgs/ops.hpp"
#include "fgs/rng.hpp"

using namespace fgs;
using namespace fgs::gs;
using diff::grad_check;
using diff::Tensor;
using diff::TensorPtr;

namespace {

TensorPtr tensor_of(diff::Shape shape, std::vector<double> vals, bool req = false) {
    auto t = Tensor::leaf(std::move(shape), diff::Dtype::F64, req);
    t->set_data(vals);
    return t;
}

Eigen::Matrix3d cov_of(const TensorPtr& out, int i) {
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = out->data[static_cast<std::size_t>(i * 9 + r * 3 + c)];
    return m;
}

}  // namespace

TEST_CASE("covariance: identity and axis-aligned cases") {
    auto rot = tensor_of({2, 4}, {1, 0, 0, 0, 1, 0, 0, 0});
    auto s_log = tensor_of({2, 3}, {0, 0, 0, std::log(2.0), 0, 0});
    auto sigma = covariance(rot, s_log);

    const Eigen::Matrix3d id = cov_of(sigma, 0);
    CHECK((id - Eigen::Matrix3d::Identity()).norm() < 1e-12);

    const Eigen::Matrix3d ax = cov_of(sigma, 1);
    Eigen::Matrix3d expect = Eigen::Vector3d(4.0, 1.0, 1.0).asDiagonal();
    CHECK((ax - expect).norm() < 1e-12);
}

TEST_CASE("covariance: eigenvalues equal exp(2 s_log) for random rotations") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> q(4), s(3);
        for (auto& v : q) v = rng.normal();
        for (auto& v : s) v = rng.uniform(-1.0, 0.5);
        auto sigma = covariance(tensor_of({1, 4}, q), tensor_of({1, 3}, s));
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov_of(sigma, 0));
        Eigen::Vector3d got = es.eigenvalues();
        Eigen::Vector3d want(std::exp(2 * s[0]), std::exp(2 * s[1]), std::exp(2 * s[2]));
        std::sort(want.data(), want.data() + 3);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("covariance: symmetric PD on 1000 random fuzz cases") {
    Rng rng(999);
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::Vector4d q;
        Eigen::Vector3d s;
        for (int i = 0; i < 4; ++i) q[i] = rng.normal();
        for (int i = 0; i < 3; ++i) s[i] = rng.uniform(-3.0, 1.0);
        if (q.norm() < 1e-8) continue;
        const Eigen::Matrix3d sigma = covariance_matrix(q, s);
        CHECK((sigma - sigma.transpose()).norm() < 1e-14);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sigma);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("covariance: zero quaternion is a degenerate-rotation error") {
    CHECK_THROWS_AS(covariance(tensor_of({1, 4}, {0, 0, 0, 0}), tensor_of({1, 3}, {0, 0, 0})),
                    DomainError);
}

TEST_CASE("covariance: gradients pass grad_check") {
    Rng rng(55);
    auto f = [](const std::vector<TensorPtr>& in) { return covariance(in[0], in[1]); };
    std::vector<double> q(8), s(6);
    for (auto& v : q) v = rng.normal();
    for (auto& v : s) v = rng.uniform(-1.0, 0.5);
    auto report = grad_check(f, {tensor_of({2, 4}, q, true), tensor_of({2, 3}, s, true)});
    CHECK(report.median_rel_err < 1e-8);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("sh_color: zero coefficients give the 0.5 offset") {
    auto dc = tensor_of({2, 3}, std::vector<double>(6, 0.0));
    auto dirs = tensor_of({2, 3}, {0, 0, 1, 1, 0, 0});
    auto rgb = sh_color(dc, nullptr, dirs, 0);
    for (double v : rgb->data) CHECK(v == 0.5);
}

TEST_CASE("sh_color: degree-0 saturation to white") {
    auto dc = tensor_of({1, 3}, std::vector<double>(3, 1.0 / kShC0));
    auto dirs = tensor_of({1, 3}, {0, 0, 1});
    auto rgb = sh_color(dc, nullptr, dirs, 0);
    for (double v : rgb->data) CHECK(v == 1.0);
}

TEST_CASE("sh_color: degree 1 matches the hand-evaluated basis at +z") {
    // Real SH at dir=(0,0,1): Y00=0.28209479, Y1-1=0, Y10=0.48860251, Y11=0.
    Rng rng(77);
    std::vector<double> dc(3), rest(9);
    for (auto& v : dc) v = rng.uniform(-0.5, 0.5);
    for (auto& v : rest) v = rng.uniform(-0.5, 0.5);
    auto rgb = sh_color(tensor_of({1, 3}, dc), tensor_of({1, 9}, rest), tensor_of({1, 3}, {0, 0, 1}), 1);
    for (int c = 0; c < 3; ++c) {
        const double expect = 0.5 + dc[static_cast<std::size_t>(c)] * 0.28209479177387814 +
                              rest[static_cast<std::size_t>(c * 3 + 1)] * 0.4886025119029199;
        CHECK(rgb->data[static_cast<std::size_t>(c)] ==
              doctest::Approx(std::min(1.0, std::max(0.0, expect))).epsilon(1e-12));
    }
}

TEST_CASE("sh_color: errors on bad degree, coeff mismatch, non-unit dir") {
    auto dc = tensor_of({1, 3}, {0, 0, 0});
    auto dirs = tensor_of({1, 3}, {0, 0, 1});
    CHECK_THROWS_AS(sh_color(dc, nullptr, dirs, 4), Error);
    CHECK_THROWS_AS(sh_color(dc, tensor_of({1, 9}, std::vector<double>(9, 0.0)), dirs, 0), ShapeError);
    CHECK_THROWS_AS(sh_color(dc, nullptr, tensor_of({1, 3}, {0, 0, 2}), 0), DomainError);
}

TEST_CASE("sh_color: gradients pass grad_check at all degrees") {
    for (int degree = 0; degree <= 3; ++degree) {
        CAPTURE(degree);
        Rng rng(mix_seed(31, static_cast<std::uint64_t>(degree)));
        const int basis = sh_basis_count(degree);
        const std::int64_t n = 3;
        std::vector<double> dc(9), rest(static_cast<std::size_t>(n) * 3 * (basis - 1)), dirvals;
        for (auto& v : dc) v = rng.uniform(-0.3, 0.3);
        for (auto& v : rest) v = rng.uniform(-0.3, 0.3);
        for (std::int64_t i = 0; i < n; ++i) {
            Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
            d.normalize();
            dirvals.insert(dirvals.end(), {d.x(), d.y(), d.z()});
        }
        auto f = [degree, basis](const std::vector<TensorPtr>& in) {
            // Renormalize the perturbed dirs so the unit-norm precondition
            // holds; gradients w.r.t. raw dirs flow through the renormalize.
            auto unit = diff::l2_normalize(in[1], 1);
            return sh_color(in[0], basis > 1 ? in[2] : nullptr, unit, degree);
        };
        std::vector<TensorPtr> inputs = {tensor_of({n, 3}, dc, true), tensor_of({n, 3}, dirvals, true)};
        if (basis > 1) inputs.push_back(tensor_of({n, 3 * (basis - 1)}, rest, true));
        auto report = grad_check(f, inputs);
        CHECK(report.median_rel_err < 1e-7);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("apply_deformation: all-null deltas are the bit-exact identity") {
    auto cloud = GaussianCloud::create({2, 1, 1}, 1, diff::Dtype::F64, false);
    Rng rng(13);
    for (auto t : {cloud.mu, cloud.rot, cloud.s_log, cloud.sh_dc, cloud.sh_rest, cloud.alpha_logit}) {
        std::vector<double> vals(t->data.size());
        for (auto& v : vals) v = rng.normal();
        t->set_data(vals);
    }
    auto view = cloud.full_view();
    auto out = apply_deformation(view, {});
    CHECK(out.mu.get() == view.mu.get());
    CHECK(out.rot.get() == view.rot.get());
    CHECK(out.s_log.get() == view.s_log.get());
    CHECK(out.sh_dc.get() == view.sh_dc.get());
    CHECK(out.alpha_logit.get() == view.alpha_logit.get());
}

TEST_CASE("apply_deformation: position shift leaves covariance untouched") {
    auto cloud = GaussianCloud::create({1, 0, 0}, 0, diff::Dtype::F64, false);
    cloud.rot->set_data({0.9, 0.1, -0.2, 0.3});
    cloud.s_log->set_data({-0.5, 0.1, 0.2});
    cloud.mu->set_data({0.0, 0.0, 0.0});

    DeformationDelta delta;
    delta.d_mu = tensor_of({1, 3}, {0.1, 0.0, 0.0});
    auto out = apply_deformation(cloud.full_view(), delta);
    CHECK(out.mu->data[0] == doctest::Approx(0.1));
    CHECK(out.rot.get() == cloud.rot.get());

    auto sig_before = covariance(cloud.rot, cloud.s_log);
    auto sig_after = covariance(out.rot, out.s_log);
    for (std::size_t i = 0; i < sig_before->data.size(); ++i)
        CHECK(sig_before->data[i] == sig_after->data[i]);
}

TEST_CASE("apply_deformation: rotation offset matches quaternion-to-matrix oracle") {
    const double eps = 0.05;
    auto cloud = GaussianCloud::create({1, 0, 0}, 0, diff::Dtype::F64, false);
    cloud.rot->set_data({1, 0, 0, 0});
    cloud.s_log->set_data({0, 0, 0});

    DeformationDelta delta;
    delta.d_rot = tensor_of({1, 4}, {0, 0, 0, eps});
    auto out = apply_deformation(cloud.full_view(), delta);
    auto sigma = covariance(out.rot, out.s_log);

    // Oracle: normalize (1,0,0,eps), convert via independent quaternion
    // algebra (Eigen), compare R S S^T R^T with S = I.
    Eigen::Quaterniond q(1.0, 0.0, 0.0, eps);
    q.normalize();
    const Eigen::Matrix3d expect = q.toRotationMatrix() * q.toRotationMatrix().transpose();
    CHECK((cov_of(sigma, 0) - expect).norm() < 1e-12);

    // Degenerate sum must throw.
    DeformationDelta bad;
    bad.d_rot = tensor_of({1, 4}, {-1, 0, 0, 0});
    CHECK_THROWS_AS(apply_deformation(cloud.full_view(), bad), DomainError);
}

TEST_CASE("region views partition the cloud and survive deformation") {
    auto cloud = GaussianCloud::create({3, 2, 2}, 0, diff::Dtype::F64, false);
    Rng rng(21);
    std::vector<double> vals(cloud.mu->data.size());
    for (auto& v : vals) v = rng.normal();
    cloud.mu->set_data(vals);
    std::vector<double> rots(cloud.rot->data.size(), 0.0);
    for (std::size_t i = 0; i < 7; ++i) rots[i * 4] = 1.0;
    cloud.rot->set_data(rots);

    CHECK(cloud.region_start(Region::face) == 0);
    CHECK(cloud.region_start(Region::mouth) == 3);
    CHECK(cloud.region_start(Region::eyes) == 5);
    CHECK(cloud.region_of(0) == Region::face);
    CHECK(cloud.region_of(4) == Region::mouth);
    CHECK(cloud.region_of(6) == Region::eyes);

    auto mouth = cloud.region_view(Region::mouth);
    CHECK(mouth.count() == 2);
    for (int i = 0; i < 6; ++i)
        CHECK(mouth.mu->data[static_cast<std::size_t>(i)] ==
              cloud.mu->data[static_cast<std::size_t>(9 + i)]);

    DeformationDelta delta;
    delta.d_mu = tensor_of({2, 3}, std::vector<double>(6, 0.25));
    auto deformed = apply_deformation(mouth, delta);
    CHECK(deformed.count() == 2);  // partition width preserved
}

TEST_CASE("cloud checkpoint round-trips through the archive") {
    namespace fs = std::filesystem;
    auto cloud = GaussianCloud::create({2, 1, 1}, 1, diff::Dtype::F32, false);
    Rng rng(3);
    for (auto t : {cloud.mu, cloud.rot, cloud.s_log, cloud.sh_dc, cloud.sh_rest, cloud.alpha_logit}) {
        std::vector<double> vals(t->data.size());
        for (auto& v : vals) v = rng.normal();
        t->set_data(vals);
    }
    const std::string dir = (fs::temp_directory_path() / "fgs_cloud_ckpt").string();
    cloud.save(dir);
    auto back = GaussianCloud::load(dir, diff::Dtype::F32, false);
    CHECK(back.counts == cloud.counts);
    CHECK(back.sh_degree == cloud.sh_degree);
    for (std::size_t i = 0; i < cloud.mu->data.size(); ++i) CHECK(back.mu->data[i] == cloud.mu->data[i]);
    for (std::size_t i = 0; i < cloud.sh_rest->data.size(); ++i)
        CHECK(back.sh_rest->data[i] == cloud.sh_rest->data[i]);

    const std::string dir2 = dir + "_2";
    back.save(dir2);
    CHECK(file_crc32(dir + "/mu.fgt") == file_crc32(dir2 + "/mu.fgt"));
    CHECK(file_crc32(dir + "/sh.fgt") == file_crc32(dir2 + "/sh.fgt"));
    CHECK(file_crc32(dir + "/manifest.json") == file_crc32(dir2 + "/manifest.json"));
}
