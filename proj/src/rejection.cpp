#include "tdm/rejection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace tdm {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_choose(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}
} // namespace

EmpiricalCdf::EmpiricalCdf(std::span<const double> rewards)
    : sorted_(rewards.begin(), rewards.end()) {
    if (sorted_.empty()) throw Error("rejection_sampling", "empirical_cdf: empty rewards");
    std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalCdf::operator()(double r) const {
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), r);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

std::vector<int> topk_select(std::span<const double> rewards, int k) {
    const int m = static_cast<int>(rewards.size());
    if (k > m) throw Error("rejection_sampling", "topk_select: K exceeds batch size");
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return rewards[static_cast<std::size_t>(a)] > rewards[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

double topk_reshaped_reward(double f, int m, int k) {
    if (f < 0.0 || f > 1.0) throw Error("rejection_sampling", "topk_reshaped_reward: F outside [0,1]");
    if (k < 1 || k > m) throw Error("rejection_sampling", "topk_reshaped_reward: need 1 <= K <= M");
    if (k == m) return 0.0;   // the binomial sum telescopes to (F + 1 - F)^(M-1)
    if (f == 0.0) return kNegInf;
    if (f == 1.0) return 0.0;
    const double lf = std::log(f);
    const double lq = std::log1p(-f);
    double max_term = kNegInf;
    std::vector<double> terms(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        terms[static_cast<std::size_t>(i)] =
            log_choose(m - 1, i) + (m - i - 1) * lf + i * lq;
        max_term = std::max(max_term, terms[static_cast<std::size_t>(i)]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - max_term);
    return max_term + std::log(acc);
}

double preference_reshaped_reward(double f) { return topk_reshaped_reward(f, 2, 1); }

namespace {

void check_sizes(const RewardedBatch& b) {
    if (b.rewards.size() != b.finals.size())
        throw Error("rejection_sampling", "batch rewards/finals length mismatch");
    if (b.has_latents() && b.latents.size() != b.finals.size())
        throw Error("rejection_sampling", "batch latents length mismatch");
}

void accept_classical(RewardedBatch& b, const ClassicalRule& rule, RngStream& rng) {
    if (rule.alpha <= 0.0) throw Error("rejection_sampling", "classical rule needs alpha > 0");
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b.rewards[i] > rule.r_max)
            throw Error("rejection_sampling", "classical_accept: reward exceeds r_max");
        const double p = std::exp((b.rewards[i] - rule.r_max) / rule.alpha);
        b.accepted[i] = rng.uniform() < p ? 1 : 0;
    }
}

void accept_topk(RewardedBatch& b, int m, int k, RngStream&) {
    if (m != static_cast<int>(b.size()))
        throw Error("rejection_sampling", "topk rule M does not match batch size");
    const auto idx = topk_select(b.rewards, k);
    for (int i : idx) b.accepted[static_cast<std::size_t>(i)] = 1;
}

void accept_dedup(RewardedBatch& b, const StructureFn& structure, RngStream& rng) {
    if (!structure) throw Error("rejection_sampling", "dedup rule needs a structure function");
    std::unordered_map<std::int64_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double r = b.rewards[i];
        if (r != 0.0 && r != 1.0)
            throw Error("rejection_sampling", "dedup_binary_accept: reward must be 0 or 1");
        if (r == 1.0) groups[structure(b.finals[i])].push_back(i);
    }
    // deterministic group order for reproducibility under a shared stream
    std::vector<std::int64_t> keys;
    keys.reserve(groups.size());
    for (const auto& kv : groups) keys.push_back(kv.first);
    std::sort(keys.begin(), keys.end());
    for (std::int64_t key : keys) {
        const auto& members = groups[key];
        const std::size_t pick = members[static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(members.size())))];
        b.accepted[pick] = 1;
    }
}

} // namespace

void grs_accept(RewardedBatch& batch, const AcceptanceRule& rule, RngStream& rng) {
    check_sizes(batch);
    batch.accepted.assign(batch.size(), 0);
    std::visit(
        [&](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, ClassicalRule>) {
                accept_classical(batch, r, rng);
            } else if constexpr (std::is_same_v<T, TopKRule>) {
                accept_topk(batch, r.m, r.k, rng);
            } else if constexpr (std::is_same_v<T, PreferenceRule>) {
                accept_topk(batch, 2, 1, rng);
            } else {
                accept_dedup(batch, r.structure, rng);
            }
        },
        rule);
}

std::vector<Vec> classical_accept(RewardedBatch& batch, const ClassicalRule& rule,
                                  RngStream& rng) {
    grs_accept(batch, AcceptanceRule(rule), rng);
    std::vector<Vec> out;
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch.accepted[i]) out.push_back(batch.finals[i]);
    return out;
}

std::vector<Vec> dedup_binary_accept(RewardedBatch& batch, const StructureFn& structure,
                                     RngStream& rng) {
    grs_accept(batch, AcceptanceRule(BinaryDedupRule{structure}), rng);
    std::vector<Vec> out;
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch.accepted[i]) out.push_back(batch.finals[i]);
    return out;
}

std::vector<Vec> pgrs_accept(RewardedBatch& batch, const AcceptanceRule& rule, RngStream& rng) {
    if (!batch.has_latents()) throw Error("rejection_sampling", "pgrs_accept: missing latents");
    grs_accept(batch, rule, rng);
    std::vector<Vec> out;
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch.accepted[i]) out.push_back(batch.latents[i]);
    return out;
}

McEstimate mc_reshaped_reward(const Vec& x, const RewardFn& reward, const BaseSampler& base,
                              const AcceptanceRule& rule, long trials, RngStream& rng,
                              int batch_size) {
    if (trials < 1000) throw Error("rejection_sampling", "mc_reshaped_reward: need >= 1e3 trials");
    const double rx = reward(x);
    double sum = 0.0;
    double sum_sq = 0.0;
    const auto record = [&](double a) {
        sum += a;
        sum_sq += a * a;
    };
    if (const auto* cl = std::get_if<ClassicalRule>(&rule)) {
        // no randomness in A given the sample
        if (rx > cl->r_max) throw Error("rejection_sampling", "mc_reshaped_reward: reward exceeds r_max");
        return {(rx - cl->r_max) / cl->alpha, 0.0};
    }
    int m = 2;
    int k = 1;
    const BinaryDedupRule* dd = std::get_if<BinaryDedupRule>(&rule);
    if (const auto* tk = std::get_if<TopKRule>(&rule)) {
        m = tk->m;
        k = tk->k;
    }
    if (dd != nullptr) {
        if (batch_size < 1)
            throw Error("rejection_sampling", "mc_reshaped_reward: de-dup rule needs batch_size");
        m = batch_size;
    }
    for (long trial = 0; trial < trials; ++trial) {
        if (dd != nullptr) {
            if (rx == 0.0) {
                record(0.0);
                continue;
            }
            const std::int64_t key = dd->structure(x);
            long nf = 1;
            for (int j = 1; j < m; ++j) {
                const Vec y = base(rng);
                if (dd->structure(y) == key) ++nf;
            }
            record(1.0 / static_cast<double>(nf));
        } else {
            // the probe sits at index 0, so equal-reward companions rank below it
            int beaten_by = 0;
            for (int j = 1; j < m; ++j) {
                if (reward(base(rng)) > rx) ++beaten_by;
            }
            record(beaten_by <= k - 1 ? 1.0 : 0.0);
        }
    }
    const double n = static_cast<double>(trials);
    const double mean = sum / n;
    if (mean <= 0.0)
        throw Error("rejection_sampling", "mc_reshaped_reward: zero acceptance, unestimable");
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    const double se_mean = std::sqrt(var / n);
    return {std::log(mean), se_mean / mean};
}

} // namespace tdm
