#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "instcache/token_model.hpp"

namespace instcache {

constexpr double kInfNll = std::numeric_limits<double>::infinity();

// Cumulative NLL of a token sequence conditioned from the root (bos), in
// nats. The sequence may end with eos, in which case the eos edge is
// included. A zero-probability token yields +infinity.
double nll(TokenModel& model, std::span<const TokenId> tokens);

// NLL of an instruction as a cacheable text: tokenize, append the eos edge.
// +infinity when the text cannot round-trip through the cache: encoding
// fails, a word maps to unk (pre-population never expands unk), or the
// sequence exceeds max_len tokens including eos (max_len = 0 disables the
// length check).
double instruction_nll(TokenModel& model, std::string_view instruction, int max_len = 0);

// Empirical CDF of instruction NLLs over a validation set.
struct NllDistribution {
    std::vector<double> samples; // ascending; +inf entries are permitted

    size_t count() const { return samples.size(); }
    // P(N <= x), weak inequality, matching the cache membership rule.
    double cdf(double x) const;
    double quantile(double q) const; // q in [0,1]
};

NllDistribution empirical_cdf(TokenModel& model, std::span<const std::string> instructions,
                              int max_len = 0);

// Eq-1 style hit-rate prediction: F_N(sigma).
double predict_hit_rate(const NllDistribution& dist, double sigma);

struct RankProbSample {
    int32_t rank = 0; // 1-based rank within a sorted next-token distribution
    double prob = 0.0;
};

struct PowerLawFit {
    double alpha = 0.0;
    double beta = 0.0;
    double fit_r2 = 0.0;
    size_t ranks_used = 0;
    std::string source;
};

// Log-log least squares on per-rank mean probabilities: ln p = ln beta -
// alpha ln rank. Needs >= 3 distinct ranks with positive mean.
PowerLawFit fit_power_law(std::span<const RankProbSample> samples);

// Walks each instruction's token path and records (rank, probability) for
// every entry of the sorted distribution at every position. max_positions
// (0 = unlimited) caps the number of positions visited.
std::vector<RankProbSample> collect_rank_probs(TokenModel& model,
                                               std::span<const std::string> instructions,
                                               size_t max_positions = 0);

struct CountEstimate {
    double sigma = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    int length = 0;
    double n_simplified = 0.0; // e^(s/a) (s/a)^(L-1) / (L-1)!
    double n_full = 0.0;       // b^(L/a) e^(s/a) / (L-1)! (ln b/a + s/a)(L ln b/a + s/a)^(L-2)
    double ln_simplified = 0.0;
    double ln_full = 0.0;
};

// Both count forms, computed in log space. For L = 1 the full form falls back
// to the closed form I_1 = e^(s/a) b^(1/a); when a log factor of the full
// form is non-positive the estimate collapses to 0.
CountEstimate estimate_count(double alpha, double beta, double sigma, int length);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

LinearFit linear_least_squares(std::span<const double> xs, std::span<const double> ys);

struct PredictRow {
    double sigma = 0.0;
    double predicted_hit_rate = 0.0;
    double predicted_count_full = 0.0;
    double predicted_count_simplified = 0.0;
};

std::vector<PredictRow> predict_report(const NllDistribution& dist, std::span<const double> sigmas,
                                       const PowerLawFit& fit, int length);

// NDJSON rows plus an optional CSV mirror next to it (same stem, .csv).
void write_predict_report(const std::string& path, std::span<const PredictRow> rows,
                          const std::map<std::string, std::string>& config_echo,
                          bool csv_mirror = false);

} // namespace instcache
