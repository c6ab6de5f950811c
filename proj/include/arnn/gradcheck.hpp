#pragma once
#include <string>
#include <vector>

#include "arnn/model.hpp"

namespace arnn {

struct TensorCheck {
    std::string name;
    double worst_rel = 0.0;   // max over entries of |analytic - fd| / max(|a|, |fd|, 1e-6)
    double analytic = 0.0;    // values at the worst entry
    double fd = 0.0;
    int entries = 0;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double worst_rel = 0.0;

    bool passed(double tol) const { return worst_rel <= tol; }
};

// Central finite differences of the evaluation-mode BCE loss against the
// analytic backward pass, entry by entry, for every parameter tensor
// including c0 and the head. corrupt_tensor, when non-empty, perturbs that
// tensor's analytic gradient first so callers can prove the check can fail.
GradCheckReport gradcheck_model(ArnnModel& model, const Matrix& x, int label,
                                double eps, const std::string& corrupt_tensor = "");

} // namespace arnn
