#include "robust_ai/sampler.hpp"

#include <cmath>

#include "robust_ai/error.hpp"
#include "robust_ai/random.hpp"

namespace robust_ai {

LabelDraw draw_labels(const SamplingRule& rule, std::uint64_t seed) {
    LabelDraw draw;
    draw.seed = seed;
    draw.xi.resize(rule.size());
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const bool take = uniform01(seed, Stream::LabelDraw, i) < rule.probs[i];
        draw.xi[i] = take ? 1 : 0;
        draw.realized_count += take ? 1 : 0;
    }
    return draw;
}

BudgetAudit budget_audit(const LabelDraw& draw, const Budget& budget, double epsilon, double delta) {
    if (!(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0))
        throw Error(ErrorCode::InvalidArgument, "epsilon and delta must lie in (0, 1)");
    BudgetAudit audit;
    const double n = static_cast<double>(draw.xi.size());
    audit.realized_rate = n > 0.0 ? static_cast<double>(draw.realized_count) / n : 0.0;
    audit.target_rate = budget.rate();
    audit.epsilon = epsilon;
    audit.delta = delta;
    audit.hoeffding_min_units = std::log(1.0 / delta) / (2.0 * epsilon * epsilon);
    audit.hoeffding_applies = n > audit.hoeffding_min_units;
    audit.exceeded = audit.realized_rate > audit.target_rate + epsilon;
    return audit;
}

} // namespace robust_ai
