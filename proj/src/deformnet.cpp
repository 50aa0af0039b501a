#include "fgs/deformnet.hpp"

#include <cmath>

namespace fgs::deform {

using diff::Tensor;
using diff::TensorPtr;
using namespace diff;  // ops

AblationMode ablation_from_string(const std::string& s) {
    if (s == "full") return AblationMode::full;
    if (s == "no_fad") return AblationMode::no_fad;
    if (s == "no_fam") return AblationMode::no_fam;
    if (s == "no_hrpa") return AblationMode::no_hrpa;
    throw UsageError(cat("unknown ablation mode '", s, "'"));
}

const char* ablation_name(AblationMode m) {
    switch (m) {
        case AblationMode::full: return "full";
        case AblationMode::no_fad: return "no_fad";
        case AblationMode::no_fam: return "no_fam";
        default: return "no_hrpa";
    }
}

LowFreqNet LowFreqNet::create(ParamStore& store, const std::string& prefix, int spatial_dim,
                              int d_model, Rng& rng, Dtype dtype) {
    LowFreqNet net;
    net.gate_audio = nn::Mlp::create(store, prefix + "gate_a/", {spatial_dim, 64, 64, d_model}, rng, dtype);
    net.gate_expr = nn::Mlp::create(store, prefix + "gate_e/", {spatial_dim, 64, 64, d_model}, rng, dtype);
    net.deform = nn::Mlp::create(store, prefix + "de/", {spatial_dim + 2 * d_model, 128, 128, 128, 10},
                                 rng, dtype, nn::Activation::relu, /*zero_init_output=*/true);
    return net;
}

gs::DeformationDelta LowFreqNet::forward(const TensorPtr& h, const TensorPtr& f_a,
                                         const TensorPtr& f_e) const {
    const std::int64_t d_model = gate_audio.weights.back()->shape[1];
    if (f_a->shape.size() != 2 || f_a->shape[1] != d_model)
        throw ShapeError(cat("lowfreq_forward: audio tokens must be [T,", d_model, "], got ",
                             shape_str(f_a->shape)));
    if (f_e->shape != Shape{1, d_model})
        throw ShapeError(cat("lowfreq_forward: expression token must be [1,", d_model, "], got ",
                             shape_str(f_e->shape)));
    auto s_a = gate_audio.forward(h);
    auto s_e = gate_expr.forward(h);
    auto fa_bar = mean_axis(f_a, 0);
    auto z = concat({h, mul_rowvec(s_a, fa_bar), mul_rowvec(s_e, f_e)}, 1);
    auto out = deform.forward(z);
    gs::DeformationDelta delta;
    delta.d_mu = slice(out, 1, 0, 3);
    delta.d_s_log = slice(out, 1, 3, 3);
    delta.d_rot = slice(out, 1, 6, 4);
    return delta;
}

std::vector<std::string> LowFreqNet::gate_param_names(const std::string& prefix) const {
    auto names = gate_audio.param_names(prefix + "gate_a/");
    auto more = gate_expr.param_names(prefix + "gate_e/");
    names.insert(names.end(), more.begin(), more.end());
    return names;
}

std::vector<std::string> LowFreqNet::deform_param_names(const std::string& prefix) const {
    return deform.param_names(prefix + "de/");
}

HighFreqNet HighFreqNet::create(ParamStore& store, const std::string& prefix, int spatial_dim,
                                int d_model, Rng& rng, Dtype dtype) {
    HighFreqNet net;
    net.d_model = d_model;
    net.gate = nn::Mlp::create(store, prefix + "gate/", {d_model, 16, 1}, rng, dtype);
    net.proj_w = store.create(prefix + "proj_w", {spatial_dim, d_model}, dtype);
    net.proj_b = store.create(prefix + "proj_b", {d_model}, dtype);
    net.wq = store.create(prefix + "wq", {d_model, d_model}, dtype);
    net.wk = store.create(prefix + "wk", {d_model, d_model}, dtype);
    net.wv = store.create(prefix + "wv", {d_model, d_model}, dtype);
    nn::init_linear(net.proj_w, rng);
    nn::init_linear(net.wq, rng);
    nn::init_linear(net.wk, rng);
    nn::init_linear(net.wv, rng);
    net.ff1 = nn::Mlp::create(store, prefix + "ff1/", {d_model, 4 * d_model, d_model}, rng, dtype);
    net.ff2 = nn::Mlp::create(store, prefix + "ff2/", {d_model, 4 * d_model, d_model}, rng, dtype);
    net.head_w = store.create(prefix + "head_w", {d_model, 3}, dtype);
    net.head_b = store.create(prefix + "head_b", {3}, dtype);
    return net;
}

gs::DeformationDelta HighFreqNet::forward(const TensorPtr& h, const TensorPtr& tokens,
                                          TensorPtr* gated_out) const {
    if (tokens->shape.size() != 2 || tokens->shape[0] < 1)
        throw ShapeError("highfreq_forward: empty condition token set");
    if (tokens->shape[1] != d_model)
        throw ShapeError(cat("highfreq_forward: tokens must be [T,", d_model, "], got ",
                             shape_str(tokens->shape)));

    auto fbar = mean_axis(tokens, 0);                    // [1,d]
    auto lambda = sigmoid(gate.forward(fbar));           // [1,1]
    auto hp = add_rowvec(matmul(h, proj_w), proj_b);     // [N,d]
    auto q = matmul(hp, wq);
    auto k = matmul(tokens, wk);
    auto v = matmul(tokens, wv);
    auto scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_model)));
    auto attn = matmul(softmax(scores, 1), v);           // [N,d]
    auto z = mul_scalar_tensor(attn, lambda);            // gated cross-modal feature
    if (gated_out) *gated_out = z;
    auto z1 = ff1.forward(add_rowvec(z, fbar));          // ff'(f_bar + z)
    auto z2 = ff2.forward(add(z1, z));                   // ff''(z' + z)
    gs::DeformationDelta delta;
    delta.d_mu = add_rowvec(matmul(z2, head_w), head_b);
    return delta;
}

std::vector<std::string> HighFreqNet::block_param_names(const std::string& prefix) const {
    std::vector<std::string> names = gate.param_names(prefix + "gate/");
    for (const char* n : {"proj_w", "proj_b", "wq", "wk", "wv"}) names.push_back(prefix + n);
    for (const auto& n : ff1.param_names(prefix + "ff1/")) names.push_back(n);
    for (const auto& n : ff2.param_names(prefix + "ff2/")) names.push_back(n);
    return names;
}

std::vector<std::string> HighFreqNet::head_param_names(const std::string& prefix) const {
    return {prefix + "head_w", prefix + "head_b"};
}

ConcatDeformer ConcatDeformer::create(ParamStore& store, const std::string& prefix, int spatial_dim,
                                      int d_model, Rng& rng, Dtype dtype) {
    ConcatDeformer net;
    net.trunk = nn::Mlp::create(store, prefix + "trunk/", {spatial_dim + d_model, 128, 128}, rng, dtype);
    net.head_w = store.create(prefix + "head_w", {128, 3}, dtype);
    net.head_b = store.create(prefix + "head_b", {3}, dtype);
    return net;
}

gs::DeformationDelta ConcatDeformer::forward(const TensorPtr& h, const TensorPtr& tokens) const {
    if (tokens->shape.size() != 2 || tokens->shape[0] < 1)
        throw ShapeError("concat_forward: empty condition token set");
    auto fbar = mean_axis(tokens, 0);  // [1,d]
    auto zeros = Tensor::constant({h->shape[0], fbar->shape[1]},
                                  std::vector<double>(static_cast<std::size_t>(h->shape[0] * fbar->shape[1]), 0.0),
                                  h->dtype);
    auto z = concat({h, add_rowvec(zeros, fbar)}, 1);
    auto feat = relu(trunk.forward(z));
    gs::DeformationDelta delta;
    delta.d_mu = add_rowvec(matmul(feat, head_w), head_b);
    return delta;
}

std::vector<std::string> ConcatDeformer::trunk_param_names(const std::string& prefix) const {
    return trunk.param_names(prefix + "trunk/");
}

std::vector<std::string> ConcatDeformer::head_param_names(const std::string& prefix) const {
    return {prefix + "head_w", prefix + "head_b"};
}

MotionModel MotionModel::create(ParamStore& store, AblationMode mode, const enc::TriplaneConfig& tri,
                                const enc::ConditionEncoderConfig& cc, Rng& rng, Dtype dtype) {
    MotionModel m;
    m.mode = mode;
    m.tri = tri;
    m.tables = enc::create_triplane_tables(store, "enc/tables", tri, rng, dtype);
    m.cond = enc::ConditionEncoder::create(store, "enc/cond/", cc, rng, dtype);
    const int sd = tri.out_dim();
    m.face = LowFreqNet::create(store, "net/face/", sd, cc.d_model, rng, dtype);
    if (mode == AblationMode::no_fad) return m;  // unified: the face net covers everything
    if (mode == AblationMode::no_fam) {
        m.mouth_cat = ConcatDeformer::create(store, "net/mouth/", sd, cc.d_model, rng, dtype);
        m.eyes_cat = ConcatDeformer::create(store, "net/eyes/", sd, cc.d_model, rng, dtype);
    } else {
        m.mouth = HighFreqNet::create(store, "net/mouth/", sd, cc.d_model, rng, dtype);
        m.eyes = HighFreqNet::create(store, "net/eyes/", sd, cc.d_model, rng, dtype);
    }
    return m;
}

RoutedDeltas MotionModel::route(const gs::GaussianCloud& cloud, const ConditionInput& cond_in) const {
    if (cloud.total() <= 0) throw Error("routing: empty cloud");
    for (int r = 0; r < 3; ++r)
        if (cloud.counts[static_cast<std::size_t>(r)] < 0)
            throw Error("routing: malformed region partition");

    auto f_a = cond.encode_audio(cond_in.audio_window);
    auto f_e = cond.encode_expression(cond_in.expr);

    RoutedDeltas out;
    if (mode == AblationMode::no_fad) {
        auto h = enc::triplane_encode(cloud.mu, tri, tables);
        auto delta = face.forward(h, f_a, f_e);
        const auto split = [&](gs::Region r) {
            gs::DeformationDelta d;
            const std::int64_t start = cloud.region_start(r), len = cloud.region_count(r);
            if (len == 0) return d;
            d.d_mu = slice(delta.d_mu, 0, start, len);
            d.d_s_log = slice(delta.d_s_log, 0, start, len);
            d.d_rot = slice(delta.d_rot, 0, start, len);
            return d;
        };
        out.face = split(gs::Region::face);
        out.mouth = split(gs::Region::mouth);
        out.eyes = split(gs::Region::eyes);
        return out;
    }

    const auto region_features = [&](gs::Region r) {
        auto mu_r = slice(cloud.mu, 0, cloud.region_start(r), cloud.region_count(r));
        return enc::triplane_encode(mu_r, tri, tables);
    };
    if (cloud.region_count(gs::Region::face) > 0)
        out.face = face.forward(region_features(gs::Region::face), f_a, f_e);
    if (cloud.region_count(gs::Region::mouth) > 0) {
        auto h_m = region_features(gs::Region::mouth);
        out.mouth = mouth ? mouth->forward(h_m, f_a) : mouth_cat->forward(h_m, f_a);
    }
    if (cloud.region_count(gs::Region::eyes) > 0) {
        auto h_e = region_features(gs::Region::eyes);
        out.eyes = eyes ? eyes->forward(h_e, f_e) : eyes_cat->forward(h_e, f_e);
    }
    return out;
}

std::vector<std::string> MotionModel::condition_fusion_param_names() const {
    std::vector<std::string> names = face.gate_param_names("net/face/");
    for (const auto& n : cond.param_names("enc/cond/")) names.push_back(n);
    if (mouth)
        for (const auto& n : mouth->block_param_names("net/mouth/")) names.push_back(n);
    if (eyes)
        for (const auto& n : eyes->block_param_names("net/eyes/")) names.push_back(n);
    if (mouth_cat)
        for (const auto& n : mouth_cat->trunk_param_names("net/mouth/")) names.push_back(n);
    if (eyes_cat)
        for (const auto& n : eyes_cat->trunk_param_names("net/eyes/")) names.push_back(n);
    return names;
}

std::vector<std::string> MotionModel::other_mlp_param_names() const {
    std::vector<std::string> names = face.deform_param_names("net/face/");
    if (mouth)
        for (const auto& n : mouth->head_param_names("net/mouth/")) names.push_back(n);
    if (eyes)
        for (const auto& n : eyes->head_param_names("net/eyes/")) names.push_back(n);
    if (mouth_cat)
        for (const auto& n : mouth_cat->head_param_names("net/mouth/")) names.push_back(n);
    if (eyes_cat)
        for (const auto& n : eyes_cat->head_param_names("net/eyes/")) names.push_back(n);
    return names;
}

std::vector<std::string> MotionModel::mouth_branch_param_names() const {
    std::vector<std::string> names;
    if (mouth) {
        names = mouth->block_param_names("net/mouth/");
        for (const auto& n : mouth->head_param_names("net/mouth/")) names.push_back(n);
    } else if (mouth_cat) {
        names = mouth_cat->trunk_param_names("net/mouth/");
        for (const auto& n : mouth_cat->head_param_names("net/mouth/")) names.push_back(n);
    } else {
        // no_FAD: the unified network stands in for the mouth predictor.
        names = face.gate_param_names("net/face/");
        for (const auto& n : face.deform_param_names("net/face/")) names.push_back(n);
    }
    return names;
}

}  // namespace fgs::deform
