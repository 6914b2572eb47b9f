#include "shapex/attribution.hpp"
#include "shapex/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace shapex {

using nlohmann::json;

namespace {

bool intervals_adjacent(const Segment& a, const Segment& b, std::size_t tol) {
    // gap <= 0 means overlap or touching half-open intervals.
    const auto gap = std::ptrdiff_t(std::max(a.start, b.start)) - std::ptrdiff_t(std::min(a.end, b.end));
    return gap <= std::ptrdiff_t(tol);
}

// 1 / (m * C(m-1, s)) = s! (m-s-1)! / m!
double coalition_weight(std::size_t m, std::size_t s) {
    double binom = 1.0;
    for (std::size_t k = 1; k <= s; ++k) binom = binom * double(m - 1 - s + k) / double(k);
    return 1.0 / (double(m) * binom);
}

std::size_t uniform_below(std::mt19937_64& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

void validate_for_series(const SegmentSet& segs, std::size_t T) {
    for (const auto& s : segs.segments) {
        if (!(s.start < s.end && s.end <= T)) throw ShapeError("segment interval outside the series");
    }
}

} // namespace

SegmentSet make_segment_set(std::vector<Segment> segments, std::size_t T, std::size_t gap_tolerance) {
    SegmentSet out;
    out.series_length = T;
    out.segments = std::move(segments);
    validate_for_series(out, T);
    const std::size_t n = out.segments.size();
    out.adjacency.assign(n, std::vector<std::uint8_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
        out.adjacency[i][i] = 1;
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool adj = intervals_adjacent(out.segments[i], out.segments[j], gap_tolerance);
            out.adjacency[i][j] = out.adjacency[j][i] = adj ? 1 : 0;
        }
    }
    return out;
}

SegmentSet make_complete_segment_set(std::vector<Segment> segments, std::size_t T) {
    SegmentSet out;
    out.series_length = T;
    out.segments = std::move(segments);
    validate_for_series(out, T);
    const std::size_t n = out.segments.size();
    out.adjacency.assign(n, std::vector<std::uint8_t>(n, 1));
    return out;
}

SegmentSet segment_activation(const ActivationMap& A, const SegmentConfig& cfg) {
    const std::size_t T = A.rows;
    const std::size_t N = A.cols;
    const double omega = cfg.threshold > 0.0 ? cfg.threshold : 1.5 / double(N);
    if (!(omega > 0.0 && omega < 1.0)) throw ConfigError("segment threshold must lie in (0, 1)");

    std::vector<Segment> segs;
    for (std::size_t n = 0; n < N; ++n) {
        if (cfg.mode == SegmentMode::peak_run) {
            const std::size_t peak = peak_index(A, n);
            if (!(A(peak, n) > omega)) continue;
            std::size_t start = peak;
            while (start > 0 && A(start - 1, n) > omega) --start;
            std::size_t end = peak + 1;
            while (end < T && A(end, n) > omega) ++end;
            segs.push_back({int(n), start, end, peak});
        } else {
            std::size_t t = 0;
            while (t < T) {
                if (!(A(t, n) > omega)) {
                    ++t;
                    continue;
                }
                Segment s{int(n), t, t, t};
                while (t < T && A(t, n) > omega) {
                    if (A(t, n) > A(s.peak, n)) s.peak = t;
                    ++t;
                }
                s.end = t;
                segs.push_back(s);
            }
        }
    }
    return make_segment_set(std::move(segs), T, cfg.gap_tolerance);
}

SegmentSet segment(std::span<const double> x, const ShapeletBank& bank, const SegmentConfig& cfg) {
    const Matrix S = encode_shapelets(bank);
    return segment_activation(activate(describe(x, S, bank.bias)), cfg);
}

PerturbationMask build_mask(std::size_t T, const SegmentSet& segs, std::span<const std::size_t> subset) {
    auto mask = PerturbationMask::zeros(T);
    for (std::size_t idx : subset) {
        const auto& s = segs.segments.at(idx);
        if (s.end > T) throw ShapeError("segment extends past the series");
        std::fill(mask.bits.begin() + std::ptrdiff_t(s.start), mask.bits.begin() + std::ptrdiff_t(s.end), 1);
    }
    return mask;
}

std::vector<double> perturb_linear(std::span<const double> x, const PerturbationMask& mask) {
    const std::size_t T = x.size();
    if (mask.length() != T) throw ShapeError("mask length differs from series length");
    std::vector<double> out(x.begin(), x.end());
    if (std::none_of(mask.bits.begin(), mask.bits.end(), [](auto b) { return b != 0; })) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    std::size_t t = 0;
    while (t < T) {
        if (mask.bits[t]) {
            ++t;
            continue;
        }
        const std::size_t a = t;  // first masked step
        while (t < T && !mask.bits[t]) ++t;
        const std::size_t b = t;  // one past the run
        if (a == 0) {
            std::fill(out.begin(), out.begin() + std::ptrdiff_t(b), x[b]);
        } else if (b == T) {
            std::fill(out.begin() + std::ptrdiff_t(a), out.end(), x[a - 1]);
        } else {
            const double left = x[a - 1];
            const double right = x[b];
            const double span = double(b - (a - 1));
            for (std::size_t u = a; u < b; ++u) out[u] = left + double(u - (a - 1)) / span * (right - left);
        }
    }
    return out;
}

std::vector<double> perturb(std::span<const double> x, const PerturbationMask& mask, Baseline baseline) {
    if (baseline == Baseline::linear) return perturb_linear(x, mask);
    if (mask.length() != x.size()) throw ShapeError("mask length differs from series length");
    double fill = 0.0;
    if (baseline == Baseline::mean && !x.empty()) fill = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t t = 0; t < out.size(); ++t) {
        if (!mask.bits[t]) out[t] = fill;
    }
    return out;
}

std::vector<std::vector<std::size_t>> connected_components(const SegmentSet& segs) {
    const std::size_t n = segs.size();
    std::vector<int> comp(n, -1);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] >= 0) continue;
        std::vector<std::size_t> members;
        std::vector<std::size_t> stack{s};
        comp[s] = int(out.size());
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            members.push_back(u);
            for (std::size_t v = 0; v < n; ++v) {
                if (comp[v] < 0 && segs.adjacency[u][v]) {
                    comp[v] = int(out.size());
                    stack.push_back(v);
                }
            }
        }
        std::sort(members.begin(), members.end());
        out.push_back(std::move(members));
    }
    return out;
}

std::vector<std::size_t> connected_universe(const SegmentSet& segs, std::size_t n) {
    if (n >= segs.size()) throw ShapeError("segment index out of range");
    for (auto& members : connected_components(segs)) {
        if (std::binary_search(members.begin(), members.end(), n)) {
            members.erase(std::find(members.begin(), members.end(), n));
            return members;
        }
    }
    return {};
}

ShapleyMode ShapleyResult::mode() const noexcept {
    return std::any_of(modes.begin(), modes.end(), [](ShapleyMode m) { return m == ShapleyMode::sampled; })
               ? ShapleyMode::sampled
               : ShapleyMode::exact;
}

ShapleyResult shapley_values(const SegmentSet& segs, const CoalitionValues& v, const ShapleyConfig& cfg) {
    const std::size_t n = segs.size();
    if (n == 0) throw ShapeError("shapley: empty segment set");

    std::vector<std::vector<std::size_t>> games;
    if (cfg.restrict_to_component) {
        games = connected_components(segs);
    } else {
        games.emplace_back(n);
        std::iota(games.front().begin(), games.front().end(), std::size_t{0});
    }

    // Every coalition needed is collected first, deduplicated, then evaluated
    // in one batch in a fixed order.
    std::map<Coalition, std::size_t> index;
    std::vector<Coalition> requests;
    auto request = [&](Coalition c) {
        auto [it, inserted] = index.emplace(std::move(c), requests.size());
        if (inserted) requests.push_back(it->first);
        return it->second;
    };

    Coalition all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::size_t empty_id = request({});
    const std::size_t full_id = request(all);

    struct ExactGame {
        const std::vector<std::size_t>* members;
        std::vector<std::size_t> ids;  // request id per subset mask
    };
    struct SampledPlayer {
        std::size_t player;
        std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (with, without)
    };
    std::vector<ExactGame> exact;
    std::vector<SampledPlayer> sampled;

    ShapleyResult res;
    res.phi.assign(n, 0.0);
    res.modes.assign(n, ShapleyMode::exact);
    res.samples_used.assign(n, 0);

    for (const auto& members : games) {
        const std::size_t m = members.size();
        if (m - 1 <= cfg.k_exact && m < 63) {
            ExactGame g{&members, {}};
            const std::uint64_t count = std::uint64_t{1} << m;
            g.ids.reserve(count);
            for (std::uint64_t mask = 0; mask < count; ++mask) {
                Coalition c;
                for (std::size_t k = 0; k < m; ++k) {
                    if (mask >> k & 1U) c.push_back(members[k]);
                }
                g.ids.push_back(request(std::move(c)));
            }
            exact.push_back(std::move(g));
        } else {
            if (cfg.num_samples == 0) throw ConfigError("num_samples must be positive for sampled Shapley values");
            for (std::size_t player : members) {
                std::seed_seq seq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), std::uint32_t(player)};
                std::mt19937_64 rng(seq);
                SampledPlayer sp{player, {}};
                std::vector<std::size_t> perm = members;
                for (std::size_t s = 0; s < cfg.num_samples; ++s) {
                    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[uniform_below(rng, i + 1)]);
                    const auto pos = std::size_t(std::find(perm.begin(), perm.end(), player) - perm.begin());
                    Coalition before(perm.begin(), perm.begin() + std::ptrdiff_t(pos));
                    std::sort(before.begin(), before.end());
                    Coalition with = before;
                    with.insert(std::upper_bound(with.begin(), with.end(), player), player);
                    sp.pairs.emplace_back(request(std::move(with)), request(std::move(before)));
                }
                sampled.push_back(std::move(sp));
            }
        }
    }

    const std::vector<double> values = v(requests);
    if (values.size() != requests.size()) throw ShapeError("value function returned the wrong number of values");
    for (double val : values) {
        if (!std::isfinite(val)) throw NumericalError("value function");
    }

    res.value_at_empty = values[empty_id];
    res.value_at_full = values[full_id];

    for (const auto& g : exact) {
        const auto& members = *g.members;
        const std::size_t m = members.size();
        const std::uint64_t count = std::uint64_t{1} << m;
        std::vector<double> weight(m);
        for (std::size_t s = 0; s < m; ++s) weight[s] = coalition_weight(m, s);
        for (std::size_t k = 0; k < m; ++k) {
            const std::uint64_t bit = std::uint64_t{1} << k;
            double phi = 0.0;
            for (std::uint64_t mask = 0; mask < count; ++mask) {
                if (mask & bit) continue;
                const auto size = std::size_t(std::popcount(mask));
                phi += weight[size] * (values[g.ids[mask | bit]] - values[g.ids[mask]]);
            }
            res.phi[members[k]] = phi;
            res.modes[members[k]] = ShapleyMode::exact;
            res.samples_used[members[k]] = std::size_t(count >> 1);
        }
    }
    for (const auto& sp : sampled) {
        double sum = 0.0;
        for (const auto& [with, without] : sp.pairs) sum += values[with] - values[without];
        res.phi[sp.player] = sum / double(sp.pairs.size());
        res.modes[sp.player] = ShapleyMode::sampled;
        res.samples_used[sp.player] = sp.pairs.size();
    }
    return res;
}

ShapleyResult shapley(std::span<const double> x, const SegmentSet& segs, const Classifier& f, std::size_t target,
                      const ShapleyConfig& cfg) {
    const std::size_t T = x.size();
    if (segs.series_length != T) throw ShapeError("segment set was built for a different series length");
    const std::size_t C = f.num_classes();
    if (C != 0 && target >= C) throw ShapeError("target class out of range");
    auto values = [&](std::span<const Coalition> coalitions) {
        std::vector<std::vector<double>> inputs;
        inputs.reserve(coalitions.size());
        for (const auto& c : coalitions) inputs.push_back(perturb_linear(x, build_mask(T, segs, c)));
        const auto probs = f.predict_batch(inputs);
        std::vector<double> out;
        out.reserve(probs.size());
        for (const auto& p : probs) {
            if (target >= p.size()) throw ShapeError("target class out of range");
            out.push_back(p[target]);
        }
        return out;
    };
    return shapley_values(segs, values, cfg);
}

SaliencyMap to_saliency(const ShapleyResult& res, const SegmentSet& segs, std::size_t T) {
    if (res.phi.size() != segs.size()) throw ShapeError("one Shapley value per segment required");
    SaliencyMap map{std::vector<double>(T, 0.0)};
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto& s = segs.segments[i];
        if (s.end > T) throw ShapeError("segment extends past the series");
        const double share = std::abs(res.phi[i]) / double(s.length());
        for (std::size_t t = s.start; t < s.end; ++t) map.scores[t] += share;
    }
    const double mx = *std::max_element(map.scores.begin(), map.scores.end());
    if (mx > 0.0) {
        for (auto& r : map.scores) r /= mx;
    } else {
        std::fill(map.scores.begin(), map.scores.end(), 0.0);
    }
    return map;
}

SegmentSet equal_length_segments(std::size_t T, std::size_t seg_len) {
    if (T == 0 || seg_len == 0) throw ConfigError("segment length and series length must be positive");
    std::vector<Segment> segs;
    for (std::size_t start = 0; start < T; start += seg_len) {
        const std::size_t end = std::min(T, start + seg_len);
        segs.push_back({-1, start, end, start});
    }
    return make_complete_segment_set(std::move(segs), T);
}

SaliencyMap equal_length_shapley(std::span<const double> x, const Classifier& f, std::size_t target,
                                 std::size_t seg_len, const ShapleyConfig& cfg, ShapleyResult* result) {
    const auto segs = equal_length_segments(x.size(), seg_len);
    auto res = shapley(x, segs, f, target, cfg);
    auto map = to_saliency(res, segs, x.size());
    if (result) *result = std::move(res);
    return map;
}

Explanation explain(std::span<const double> x, const ShapeletBank& bank, const Classifier& f,
                    const ExplainConfig& cfg) {
    if (bank.series_length != 0 && x.size() != bank.series_length) {
        throw ShapeError("shapelet bank was trained on length " + std::to_string(bank.series_length) +
                         ", series has length " + std::to_string(x.size()));
    }
    Explanation e;
    e.target = cfg.target ? *cfg.target : argmax(f.predict_proba(x));
    e.segments = segment(x, bank, cfg.segment);
    if (e.segments.empty()) {
        e.empty_segments = true;
        e.saliency.scores.assign(x.size(), 0.0);
        return e;
    }
    e.result = shapley(x, e.segments, f, e.target, cfg.shapley);
    e.saliency = to_saliency(e.result, e.segments, x.size());
    return e;
}

std::vector<Explanation> explain_all(const Dataset& ds, const ShapeletBank& bank, const Classifier& f,
                                     const ExplainConfig& cfg, std::size_t threads) {
    std::vector<Explanation> out(ds.size());
    parallel_for(
        ds.size(),
        [&](std::size_t i) {
            ExplainConfig local = cfg;
            local.shapley.seed = cfg.shapley.seed + i;
            out[i] = explain(ds.instances[i].values, bank, f, local);
        },
        f.kind() == ClassifierKind::external ? 1 : threads);
    return out;
}

std::string saliency_to_csv(const SaliencyMap& map) {
    std::string out = "t,score\n";
    for (std::size_t t = 0; t < map.scores.size(); ++t) {
        out += std::to_string(t);
        out += ',';
        out += format_double(map.scores[t]);
        out += '\n';
    }
    return out;
}

json shapley_to_json(const ShapleyResult& res, const SegmentSet& segs) {
    json segments = json::array();
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto& s = segs.segments[i];
        segments.push_back({{"shapelet_id", s.shapelet_id},
                            {"start", s.start},
                            {"end", s.end},
                            {"peak", s.peak},
                            {"phi", res.phi.at(i)},
                            {"mode", res.modes.at(i) == ShapleyMode::exact ? "exact" : "sampled"},
                            {"samples_used", res.samples_used.at(i)}});
    }
    return json{{"version", 1},
                {"kind", "shapley_result"},
                {"mode", res.mode() == ShapleyMode::exact ? "exact" : "sampled"},
                {"value_at_empty", res.value_at_empty},
                {"value_at_full", res.value_at_full},
                {"segments", segments}};
}

} // namespace shapex
