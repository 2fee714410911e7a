#pragma once

#include "tdm/common.hpp"
#include "tdm/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <variant>
#include <vector>

namespace tdm {

// sample -> hashable key defining duplicate groups
using StructureFn = std::function<std::int64_t(const Vec&)>;

// Acceptance rules. Tilt strengths are always carried as the ratio r_hat/alpha;
// alpha itself is never materialized.
struct ClassicalRule {
    double r_max;
    double alpha;
};
struct TopKRule {
    int m;
    int k;
};
struct PreferenceRule {};                 // TopK{2, 1}
struct BinaryDedupRule {
    StructureFn structure;
};
using AcceptanceRule = std::variant<ClassicalRule, TopKRule, PreferenceRule, BinaryDedupRule>;

struct RewardedBatch {
    std::vector<Vec> finals;
    std::vector<Vec> latents;             // empty, or one per final
    std::vector<double> rewards;
    std::vector<std::uint8_t> accepted;   // set by acceptance ops

    std::size_t size() const { return finals.size(); }
    bool has_latents() const { return !latents.empty(); }
};

// Right-continuous empirical CDF: F(r) = #{R_i <= r} / M.
class EmpiricalCdf {
public:
    explicit EmpiricalCdf(std::span<const double> rewards);
    double operator()(double r) const;

private:
    std::vector<double> sorted_;
};

// Indices of the K largest rewards; ties broken toward the lowest index.
std::vector<int> topk_select(std::span<const double> rewards, int k);

// log sum_{k=0}^{K-1} C(M-1, k) F^{M-k-1} (1-F)^k; -inf when the sum is zero.
double topk_reshaped_reward(double cdf_value, int m, int k);

// TopK{2,1}: log F
double preference_reshaped_reward(double cdf_value);

// Decide accept flags for a batch of (reward, final) pairs under a rule. This
// is the shared core of GRS and P-GRS; they differ only in what is retained.
void grs_accept(RewardedBatch& batch, const AcceptanceRule& rule, RngStream& rng);

// Classical exp-tilt rejection: requires r <= r_max, accepts with
// exp((r - r_max) / alpha). Returns accepted finals.
std::vector<Vec> classical_accept(RewardedBatch& batch, const ClassicalRule& rule, RngStream& rng);

// Binary rewards with de-duplication: zero-reward samples never accepted;
// exactly one member of each duplicate group survives, chosen uniformly.
std::vector<Vec> dedup_binary_accept(RewardedBatch& batch, const StructureFn& structure,
                                     RngStream& rng);

// P-GRS: decisions computed from (rewards, finals), retained objects are the
// latents.
std::vector<Vec> pgrs_accept(RewardedBatch& batch, const AcceptanceRule& rule, RngStream& rng);

// Monte-Carlo estimate of the reshaped reward r_hat(x)/alpha =
// log E[A(...) | X^(1) = x], with delta-method standard error. The probe
// sample sits at index 0 of every simulated batch.
struct McEstimate {
    double value;
    double se;
};
using RewardFn = std::function<double(const Vec&)>;
using BaseSampler = std::function<Vec(RngStream&)>;
// batch_size is taken from the rule when it carries one (TopK/Preference);
// de-dup rules need it passed explicitly.
McEstimate mc_reshaped_reward(const Vec& x, const RewardFn& reward, const BaseSampler& base,
                              const AcceptanceRule& rule, long trials, RngStream& rng,
                              int batch_size = 0);

} // namespace tdm
