#include "mpvad/nn.hpp"

#include <algorithm>

namespace mpvad {

GradCheckResult grad_check(const std::function<double()>& loss_fn,
                           std::span<Mat<double>* const> params,
                           std::span<const Mat<double>* const> analytic, double fd_step,
                           std::uint64_t seed) {
    if (params.size() != analytic.size())
        throw ShapeError("grad_check: params/analytic count mismatch");

    std::size_t total = 0;
    for (const Mat<double>* p : params) total += p->size();
    constexpr std::size_t kExhaustiveLimit = 10000;
    const bool subsample = total > kExhaustiveLimit;
    Rng rng(seed);

    GradCheckResult result;
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        Mat<double>& theta = *params[ti];
        const Mat<double>& grad = *analytic[ti];
        if (grad.size() != theta.size()) throw ShapeError("grad_check: grad shape mismatch");

        std::vector<std::size_t> indices;
        if (subsample) {
            // Probe a proportional share of this tensor, at least one entry.
            const std::size_t probes = std::max<std::size_t>(
                1, kExhaustiveLimit * theta.size() / std::max<std::size_t>(1, total) / 4);
            for (std::size_t k = 0; k < probes; ++k)
                indices.push_back(static_cast<std::size_t>(rng.below(theta.size())));
        } else {
            indices.resize(theta.size());
            for (std::size_t k = 0; k < theta.size(); ++k) indices[k] = k;
        }

        for (std::size_t k : indices) {
            const double saved = theta.v[k];
            theta.v[k] = saved + fd_step;
            const double up = loss_fn();
            theta.v[k] = saved - fd_step;
            const double down = loss_fn();
            theta.v[k] = saved;
            const double numeric = (up - down) / (2.0 * fd_step);
            const double a = grad.v[k];
            // The 1e-6 floor absorbs finite-difference roundoff on vanishing
            // gradients (central differences resolve ~1e-11 absolute here).
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_tensor = static_cast<int>(ti);
                result.worst_index = k;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace mpvad
