#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fgs/tensor.hpp"

namespace fgs::diff {

/// Outcome of one reverse-mode vs central finite-difference comparison.
struct GradCheckReport {
    struct Entry {
        int input = 0;
        std::int64_t index = 0;
        double analytic = 0.0;
        double numeric = 0.0;
        double rel_err = 0.0;
    };
    std::vector<Entry> entries;   // one per perturbed element
    double median_rel_err = 0.0;
    double max_rel_err = 0.0;

    bool passed(double median_tol, double max_tol) const {
        return median_rel_err < median_tol && max_rel_err < max_tol;
    }
    /// Worst `k` entries by rel_err, descending.
    std::vector<Entry> worst(std::size_t k) const;
};

/// Relative error with an absolute floor so near-zero gradients compare sanely.
double rel_err(double a, double b);

/// Checks d(sum(f(inputs) .* probe))/d(inputs) against central differences.
/// `f` must be deterministic; inputs should be double precision. The probe is
/// a fixed pseudo-random projection so non-scalar outputs are covered; pass
/// `probe_seed` to vary it. Inputs are cloned internally; the caller's tensors
/// are not mutated.
GradCheckReport grad_check(const std::function<TensorPtr(const std::vector<TensorPtr>&)>& f,
                           const std::vector<TensorPtr>& inputs, double step = 1e-5,
                           std::uint64_t probe_seed = 17);

}  // namespace fgs::diff
