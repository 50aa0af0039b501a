#include "fgs/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fgs/ops.hpp"
#include "fgs/rng.hpp"

namespace fgs::diff {

double rel_err(double a, double b) {
    const double diff = std::fabs(a - b);
    if (diff == 0.0) return 0.0;
    return diff / std::max({std::fabs(a), std::fabs(b), 1e-4});
}

std::vector<GradCheckReport::Entry> GradCheckReport::worst(std::size_t k) const {
    std::vector<Entry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(),
              [](const Entry& a, const Entry& b) { return a.rel_err > b.rel_err; });
    if (sorted.size() > k) sorted.resize(k);
    return sorted;
}

GradCheckReport grad_check(const std::function<TensorPtr(const std::vector<TensorPtr>&)>& f,
                           const std::vector<TensorPtr>& inputs, double step,
                           std::uint64_t probe_seed) {
    // Independent leaf clones so the caller's graph state is untouched.
    std::vector<TensorPtr> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) {
        auto t = Tensor::leaf(in->shape, Dtype::F64, /*requires_grad=*/true);
        t->set_data(in->data);
        leaves.push_back(std::move(t));
    }

    auto out0 = f(leaves);
    Rng rng(probe_seed);
    std::vector<double> probe(out0->data.size());
    for (auto& p : probe) p = rng.uniform(-1.0, 1.0);

    const auto scalarize = [&probe](const TensorPtr& out) {
        double acc = 0.0;
        for (std::size_t i = 0; i < out->data.size(); ++i) acc += out->data[i] * probe[i];
        return acc;
    };

    // Reverse-mode gradients of sum(out .* probe).
    auto probed = sum(mul(out0, Tensor::constant(out0->shape, probe)));
    backward(probed);

    GradCheckReport report;
    for (std::size_t ii = 0; ii < leaves.size(); ++ii) {
        auto& leaf = leaves[ii];
        for (std::int64_t ei = 0; ei < leaf->size(); ++ei) {
            const std::size_t e = static_cast<std::size_t>(ei);
            const double saved = leaf->data[e];
            leaf->data[e] = saved + step;
            const double fp = scalarize(f(leaves));
            leaf->data[e] = saved - step;
            const double fm = scalarize(f(leaves));
            leaf->data[e] = saved;

            GradCheckReport::Entry entry;
            entry.input = static_cast<int>(ii);
            entry.index = ei;
            entry.numeric = (fp - fm) / (2.0 * step);
            entry.analytic = leaf->grad.empty() ? 0.0 : leaf->grad[e];
            entry.rel_err = rel_err(entry.analytic, entry.numeric);
            report.entries.push_back(entry);
        }
    }

    std::vector<double> errs;
    errs.reserve(report.entries.size());
    for (const auto& e : report.entries) errs.push_back(e.rel_err);
    if (!errs.empty()) {
        std::sort(errs.begin(), errs.end());
        report.median_rel_err = errs[errs.size() / 2];
        report.max_rel_err = errs.back();
    }
    return report;
}

}  // namespace fgs::diff
