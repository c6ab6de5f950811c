#include "arnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "arnn/errors.hpp"
#include "arnn/train.hpp"

namespace arnn {

GradCheckReport gradcheck_model(ArnnModel& model, const Matrix& x, int label,
                                double eps, const std::string& corrupt_tensor) {
    if (!(eps > 0.0))
        throw ParameterError("gradcheck: eps must be > 0, got " + std::to_string(eps));

    auto eval_loss = [&model, &x, label]() {
        Rng rng(0); // eval mode draws nothing
        return bce_loss(forward(model, x, false, rng).prob, label).loss;
    };

    model.zero_grads();
    {
        Rng rng(0);
        ModelTape tape;
        ForwardResult out = forward_cached(model, x, false, rng, tape);
        backward(model, tape, bce_loss(out.prob, label).d_logit);
    }

    std::vector<NamedParam> params = model.named_params();
    if (!corrupt_tensor.empty()) {
        auto hit = std::find_if(params.begin(), params.end(), [&](const NamedParam& np) {
            return corrupt_tensor == np.name;
        });
        if (hit == params.end()) {
            std::string names;
            for (const NamedParam& np : params) {
                if (!names.empty()) names += ", ";
                names += np.name;
            }
            throw ParameterError("gradcheck: unknown tensor '" + corrupt_tensor +
                                 "', expected one of: " + names);
        }
        Matrix& g = hit->param->grad;
        g.data[0] += 1.0 + g.max_abs();
    }

    GradCheckReport report;
    report.tensors.reserve(params.size());
    for (const NamedParam& np : params) {
        TensorCheck check;
        check.name = np.name;
        check.entries = static_cast<int>(np.param->value.size());
        for (size_t i = 0; i < np.param->value.data.size(); ++i) {
            double& slot = np.param->value.data[i];
            const double saved = slot;
            slot = saved + eps;
            const double loss_hi = eval_loss();
            slot = saved - eps;
            const double loss_lo = eval_loss();
            slot = saved;

            const double fd = (loss_hi - loss_lo) / (2.0 * eps);
            const double analytic = np.param->grad.data[i];
            const double rel = std::abs(analytic - fd) /
                               std::max({std::abs(analytic), std::abs(fd), 1e-6});
            if (rel > check.worst_rel) {
                check.worst_rel = rel;
                check.analytic = analytic;
                check.fd = fd;
            }
        }
        report.worst_rel = std::max(report.worst_rel, check.worst_rel);
        report.tensors.push_back(std::move(check));
    }
    return report;
}

} // namespace arnn
