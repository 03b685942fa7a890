#include "instcache/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "json_util.hpp"

namespace instcache {

double nll(TokenModel& model, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw InvalidArgument("nll: empty token sequence");
    const ModelSpec& spec = model.spec();
    const StateId root = model.root_state();

    StateId state = root;
    double total = 0.0;
    bool infinite = false;

    for (size_t i = 0; i < tokens.size(); ++i) {
        const TokenId tok = tokens[i];
        const double p = model.token_prob(state, tok);
        if (p <= 0.0) {
            infinite = true;
            break;
        }
        total -= std::log(p);
        if (tok == spec.eos_id) {
            if (i + 1 != tokens.size()) {
                if (state != root) model.release(state);
                throw InvalidArgument("nll: eos before end of sequence");
            }
            break; // eos edge included, nothing to extend
        }
        if (i + 1 < tokens.size()) {
            const StateId next = model.extend(state, tok);
            if (state != root) model.release(state);
            state = next;
        }
    }
    if (state != root) model.release(state);
    return infinite ? kInfNll : total;
}

double instruction_nll(TokenModel& model, std::string_view instruction, int max_len) {
    const ModelSpec& spec = model.spec();
    auto tokens = model.encode(instruction);
    if (!tokens.has_value()) return kInfNll;
    if (spec.unk_id >= 0) {
        for (TokenId t : *tokens) {
            if (t == spec.unk_id) return kInfNll; // not reachable as exact text
        }
    }
    if (max_len > 0 && static_cast<int>(tokens->size()) + 1 > max_len) return kInfNll;
    tokens->push_back(spec.eos_id);
    return nll(model, *tokens);
}

double NllDistribution::cdf(double x) const {
    if (samples.empty()) throw InvalidArgument("empty NLL distribution");
    const auto it = std::upper_bound(samples.begin(), samples.end(), x);
    return static_cast<double>(it - samples.begin()) / static_cast<double>(samples.size());
}

double NllDistribution::quantile(double q) const {
    if (samples.empty()) throw InvalidArgument("empty NLL distribution");
    if (q <= 0.0) return samples.front();
    if (q >= 1.0) return samples.back();
    const size_t idx = std::min(samples.size() - 1,
                                static_cast<size_t>(q * static_cast<double>(samples.size())));
    return samples[idx];
}

NllDistribution empirical_cdf(TokenModel& model, std::span<const std::string> instructions,
                              int max_len) {
    if (instructions.empty()) throw InvalidArgument("empirical_cdf: empty validation set");
    NllDistribution dist;
    dist.samples.reserve(instructions.size());
    for (const auto& s : instructions) {
        dist.samples.push_back(instruction_nll(model, s, max_len));
    }
    std::sort(dist.samples.begin(), dist.samples.end());
    return dist;
}

double predict_hit_rate(const NllDistribution& dist, double sigma) { return dist.cdf(sigma); }

PowerLawFit fit_power_law(std::span<const RankProbSample> samples) {
    std::unordered_map<int32_t, std::pair<double, int64_t>> acc; // rank -> (sum, n)
    for (const auto& s : samples) {
        if (s.rank < 1) throw InvalidArgument("fit_power_law: ranks must be >= 1");
        if (s.prob > 0.0) {
            auto& a = acc[s.rank];
            a.first += s.prob;
            a.second += 1;
        }
    }
    std::vector<double> xs, ys;
    xs.reserve(acc.size());
    ys.reserve(acc.size());
    std::vector<int32_t> ranks;
    ranks.reserve(acc.size());
    for (const auto& [rank, a] : acc) ranks.push_back(rank);
    std::sort(ranks.begin(), ranks.end());
    for (int32_t rank : ranks) {
        const auto& a = acc.at(rank);
        const double mean = a.first / static_cast<double>(a.second);
        if (mean <= 0.0) continue;
        xs.push_back(std::log(static_cast<double>(rank)));
        ys.push_back(std::log(mean));
    }
    if (xs.size() < 3) {
        throw InvalidArgument("fit_power_law: need >= 3 distinct ranks with positive mean");
    }
    const LinearFit lf = linear_least_squares(xs, ys);
    PowerLawFit fit;
    fit.alpha = -lf.slope;
    fit.beta = std::exp(lf.intercept);
    fit.fit_r2 = lf.r2;
    fit.ranks_used = xs.size();
    return fit;
}

std::vector<RankProbSample> collect_rank_probs(TokenModel& model,
                                               std::span<const std::string> instructions,
                                               size_t max_positions) {
    const ModelSpec& spec = model.spec();
    const StateId root = model.root_state();
    std::vector<RankProbSample> out;
    size_t positions = 0;

    for (const auto& instr : instructions) {
        auto tokens = model.encode(instr);
        if (!tokens.has_value()) continue;
        tokens->push_back(spec.eos_id);

        StateId state = root;
        for (TokenId tok : *tokens) {
            if (max_positions > 0 && positions >= max_positions) break;
            const TokenDistribution dist = model.distribution(state, kAllTokens);
            for (size_t i = 0; i < dist.entries.size(); ++i) {
                out.push_back({static_cast<int32_t>(i + 1), dist.entries[i].prob});
            }
            ++positions;
            if (tok == spec.eos_id) break;
            const StateId next = model.extend(state, tok);
            if (state != root) model.release(state);
            state = next;
        }
        if (state != root) model.release(state);
        if (max_positions > 0 && positions >= max_positions) break;
    }
    return out;
}

CountEstimate estimate_count(double alpha, double beta, double sigma, int length) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw InvalidArgument("estimate_count: alpha must be > 0");
    }
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw InvalidArgument("estimate_count: beta must be > 0");
    }
    if (sigma < 0.0 || !std::isfinite(sigma)) {
        throw InvalidArgument("estimate_count: sigma must be finite and >= 0");
    }
    if (length < 1) throw InvalidArgument("estimate_count: length must be >= 1");

    CountEstimate est;
    est.sigma = sigma;
    est.alpha = alpha;
    est.beta = beta;
    est.length = length;

    const double lnb = std::log(beta);
    const double s_over_a = sigma / alpha;

    // Simplified form, log space. L = 1 reduces to e^(s/a); the sigma = 0,
    // L = 1 corner is 1 by the 0^0 = 1 convention.
    if (length == 1) {
        est.ln_simplified = s_over_a;
    } else if (sigma == 0.0) {
        est.ln_simplified = -kInfNll;
    } else {
        est.ln_simplified = s_over_a + (length - 1) * std::log(s_over_a) - std::lgamma(length);
    }
    est.n_simplified = std::exp(est.ln_simplified);

    // Full form from the count derivation; L = 1 uses the closed form I_1.
    if (length == 1) {
        est.ln_full = s_over_a + lnb / alpha;
    } else {
        const double t1 = (sigma + lnb) / alpha;
        const double t2 = (sigma + length * lnb) / alpha;
        if (t1 <= 0.0 || (length >= 3 && t2 <= 0.0)) {
            est.ln_full = -kInfNll;
        } else {
            est.ln_full = (length / alpha) * lnb + s_over_a - std::lgamma(length) + std::log(t1);
            if (length >= 3) est.ln_full += (length - 2) * std::log(t2);
        }
    }
    est.n_full = std::exp(est.ln_full);
    return est;
}

LinearFit linear_least_squares(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw InvalidArgument("linear_least_squares: need >= 2 paired samples");
    }
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
        syy += ys[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw InvalidArgument("linear_least_squares: degenerate x values");
    LinearFit fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double pred = fit.intercept + fit.slope * xs[i];
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    fit.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    return fit;
}

std::vector<PredictRow> predict_report(const NllDistribution& dist, std::span<const double> sigmas,
                                       const PowerLawFit& fit, int length) {
    std::vector<PredictRow> rows;
    rows.reserve(sigmas.size());
    for (double sigma : sigmas) {
        const CountEstimate est = estimate_count(fit.alpha, fit.beta, sigma, length);
        PredictRow row;
        row.sigma = sigma;
        row.predicted_hit_rate = predict_hit_rate(dist, sigma);
        row.predicted_count_full = est.n_full;
        row.predicted_count_simplified = est.n_simplified;
        rows.push_back(row);
    }
    return rows;
}

void write_predict_report(const std::string& path, std::span<const PredictRow> rows,
                          const std::map<std::string, std::string>& config_echo,
                          bool csv_mirror) {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    json header;
    header["format"] = "instcache-predict";
    header["version"] = 1;
    header["rows"] = rows.size();
    if (!config_echo.empty()) {
        json cfg;
        for (const auto& [k, v] : config_echo) cfg[k] = v;
        header["config"] = std::move(cfg);
    }
    out << header.dump() << '\n';
    for (const auto& row : rows) {
        json r;
        r["sigma"] = row.sigma;
        r["predicted_hit_rate"] = row.predicted_hit_rate;
        r["predicted_count_full"] = row.predicted_count_full;
        r["predicted_count_simplified"] = row.predicted_count_simplified;
        out << r.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);

    if (csv_mirror) {
        std::string csv_path = path;
        const size_t dot = csv_path.rfind('.');
        csv_path = (dot == std::string::npos ? csv_path : csv_path.substr(0, dot)) + ".csv";
        std::ofstream csv = jsonio::open_out(csv_path);
        csv << "sigma,predicted_hit_rate,predicted_count_full,predicted_count_simplified\n";
        for (const auto& row : rows) {
            csv << json(row.sigma).dump() << ',' << json(row.predicted_hit_rate).dump() << ','
                << json(row.predicted_count_full).dump() << ','
                << json(row.predicted_count_simplified).dump() << '\n';
        }
        if (!csv) throw Error("failed writing " + csv_path);
    }
}

} // namespace instcache
