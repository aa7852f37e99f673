#include "flowsel/gradcheck.hpp"

#include "flowsel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace flowsel::nn {

namespace {

struct Probe {
    double loss;
    std::vector<std::uint8_t> kinks;
};

Probe evaluate(const LossBuilder& build) {
    Graph g(true);
    const Var loss = build(g);
    return {g.value(loss)[0], g.kink_signature()};
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build, Param& param, const GradCheckOptions& opt) {
    GradCheckResult res;
    param.grad.fill(0.0);
    std::vector<std::uint8_t> base_kinks;
    {
        Graph g(true);
        const Var loss = build(g);
        base_kinks = g.kink_signature();
        g.backward(loss);
    }
    const Tensor4 analytic = param.grad;
    param.grad.fill(0.0);

    const std::size_t size = param.value.size();
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(opt.seed);
    for (std::size_t i = 0; i + 1 < size; ++i) std::swap(order[i], order[i + rng.below(size - i)]);

    for (std::size_t idx : order) {
        if (res.checked >= opt.max_coords) break;
        const double saved = param.value[idx];
        param.value[idx] = saved + opt.eps;
        const Probe plus = evaluate(build);
        param.value[idx] = saved - opt.eps;
        const Probe minus = evaluate(build);
        param.value[idx] = saved;
        if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
            ++res.skipped_kinks;
            continue;
        }
        const double numeric = (plus.loss - minus.loss) / (2.0 * opt.eps);
        const double a = analytic[idx];
        const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
        res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
        res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(a));
        ++res.checked;
    }
    return res;
}

}  // namespace flowsel::nn
