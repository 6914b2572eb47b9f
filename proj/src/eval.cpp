#include "shapex/eval.hpp"

#include "shapex/error.hpp"
#include "shapex/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace shapex {

namespace {

void check_gt(std::span<const double> scores, std::span<const std::uint8_t> gt) {
    if (scores.size() != gt.size()) {
        throw ShapeError("saliency length " + std::to_string(scores.size()) + " != ground truth length " +
                         std::to_string(gt.size()));
    }
    const auto pos = std::count_if(gt.begin(), gt.end(), [](std::uint8_t g) { return g != 0; });
    if (pos == 0 || std::size_t(pos) == gt.size()) {
        throw DegenerateGroundTruth();
    }
}

} // namespace

std::vector<ThresholdPoint> threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> gt) {
    check_gt(scores, gt);
    const std::size_t T = scores.size();
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const double positives = double(std::count_if(gt.begin(), gt.end(), [](std::uint8_t g) { return g != 0; }));

    std::vector<ThresholdPoint> pts;
    std::size_t tp = 0;
    std::size_t i = 0;
    while (i < T) {
        const double tau = scores[order[i]];
        while (i < T && scores[order[i]] == tau) {
            tp += gt[order[i]] != 0;
            ++i;
        }
        pts.push_back({tau, double(tp) / double(i), double(tp) / positives});
    }
    return pts;
}

SaliencyMetrics saliency_metrics(std::span<const double> scores, std::span<const std::uint8_t> gt) {
    for (double s : scores) {
        if (!std::isfinite(s)) throw ParseError("saliency contains a non-finite score");
    }
    const auto pts = threshold_sweep(scores, gt);
    SaliencyMetrics m;

    std::vector<double> env(pts.size());
    double best = 0.0;
    for (std::size_t k = pts.size(); k-- > 0;) {
        best = std::max(best, pts[k].precision);
        env[k] = best;
    }
    double prev_r = 0.0;
    double prev_p = env.front();
    for (std::size_t k = 0; k < pts.size(); ++k) {
        m.auprc += (pts[k].recall - prev_r) * (env[k] + prev_p) / 2.0;
        prev_r = pts[k].recall;
        prev_p = env[k];
    }

    if (pts.size() == 1) {
        m.aup = pts[0].precision;
        m.aur = pts[0].recall;
    } else {
        const double lo = pts.back().tau;
        const double span = pts.front().tau - lo;
        // pts are descending in tau; walk them ascending.
        for (std::size_t k = pts.size() - 1; k-- > 0;) {
            const double width = (pts[k].tau - pts[k + 1].tau) / span;
            m.aup += width * pts[k].precision;
            m.aur += width * pts[k].recall;
        }
    }
    m.auprc = std::clamp(m.auprc, 0.0, 1.0);
    m.aup = std::clamp(m.aup, 0.0, 1.0);
    m.aur = std::clamp(m.aur, 0.0, 1.0);
    return m;
}

SaliencyMetrics saliency_metrics(const SaliencyMap& map, std::span<const std::uint8_t> gt) {
    return saliency_metrics(std::span<const double>(map.scores), gt);
}

SaliencyMetrics mean_saliency_metrics(const Dataset& ds, std::span<const SaliencyMap> maps) {
    if (maps.size() != ds.size()) {
        throw ShapeError("got " + std::to_string(maps.size()) + " saliency maps for " + std::to_string(ds.size()) +
                         " instances");
    }
    if (ds.empty()) throw EmptyDataset();
    SaliencyMetrics sum;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& gt = ds.instances[i].gt_saliency;
        if (!gt) throw ConfigError("instance " + std::to_string(i) + " has no ground-truth saliency");
        const auto m = saliency_metrics(maps[i], *gt);
        sum.auprc += m.auprc;
        sum.aup += m.aup;
        sum.aur += m.aur;
    }
    const double n = double(ds.size());
    return {sum.auprc / n, sum.aup / n, sum.aur / n};
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
    const std::size_t M = scores.size();
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average ranks over tie groups (1-based).
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < M) {
        std::size_t j = i;
        while (j < M && scores[order[j]] == scores[order[i]]) ++j;
        const double rank = (double(i + 1) + double(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) {
                pos_rank_sum += rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = M - n_pos;
    if (n_pos == 0 || n_neg == 0) return 0.5;
    const double u = pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

PerturbationMask occlusion_mask(const SaliencyMap& map, double ratio, OcclusionOrder order) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("occlusion ratio must lie in [0, 1]");
    const std::size_t T = map.length();
    const auto k = std::size_t(std::floor(ratio * double(T)));
    std::vector<std::size_t> idx(T);
    std::iota(idx.begin(), idx.end(), 0);
    const auto& s = map.scores;
    if (order == OcclusionOrder::bottom) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
    } else {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    }
    auto mask = PerturbationMask::ones(T);
    for (std::size_t i = 0; i < k; ++i) mask.bits[idx[i]] = 0;
    return mask;
}

double model_auroc(const Classifier& f, const Dataset& ds, std::span<const std::vector<double>> inputs) {
    if (inputs.size() != ds.size()) throw ShapeError("model_auroc: input count differs from dataset size");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!ds.instances[i].label) throw MissingLabel(i);
    }
    const auto probs = f.predict_batch(inputs);
    const std::size_t C = std::max<std::size_t>(ds.num_classes, probs.empty() ? 0 : probs.front().size());
    const std::size_t M = ds.size();
    auto one_vs_rest = [&](std::size_t c) {
        std::vector<double> scores(M);
        std::vector<std::uint8_t> labels(M);
        for (std::size_t i = 0; i < M; ++i) {
            if (probs[i].size() <= c) throw ShapeError("model returned fewer classes than the dataset has");
            scores[i] = probs[i][c];
            labels[i] = std::size_t(*ds.instances[i].label) == c;
        }
        return auroc(scores, labels);
    };
    if (C <= 2) return one_vs_rest(1);
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += one_vs_rest(c);
    return sum / double(C);
}

OcclusionCurve occlusion(const Dataset& test, std::span<const SaliencyMap> maps, const Classifier& f,
                         const OcclusionConfig& cfg) {
    if (maps.size() != test.size()) {
        throw ShapeError("got " + std::to_string(maps.size()) + " saliency maps for " + std::to_string(test.size()) +
                         " instances");
    }
    if (test.empty()) throw EmptyDataset();
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (maps[i].length() != test.instances[i].length()) {
            throw ShapeError("saliency map " + std::to_string(i) + " has length " +
                             std::to_string(maps[i].length()) + ", series has " +
                             std::to_string(test.instances[i].length()));
        }
    }
    OcclusionCurve curve;
    curve.ratios = cfg.ratios;
    curve.auroc.resize(cfg.ratios.size());
    for (std::size_t r = 0; r < cfg.ratios.size(); ++r) {
        std::vector<std::vector<double>> inputs(test.size());
        parallel_for(test.size(), [&](std::size_t i) {
            const auto mask = occlusion_mask(maps[i], cfg.ratios[r], cfg.order);
            inputs[i] = perturb(test.instances[i].values, mask, cfg.baseline);
        });
        curve.auroc[r] = model_auroc(f, test, inputs);
    }
    return curve;
}

std::string saliency_maps_to_csv(std::span<const SaliencyMap> maps) {
    std::string out = "instance,t,score\n";
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const auto prefix = std::to_string(i) + ",";
        for (std::size_t t = 0; t < maps[i].length(); ++t) {
            out += prefix + std::to_string(t) + "," + format_double(maps[i].scores[t]) + "\n";
        }
    }
    return out;
}

std::vector<SaliencyMap> saliency_maps_from_csv(const std::string& text) {
    std::vector<SaliencyMap> maps;
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.rfind("instance", 0) == 0) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos) throw FormatError(row, "expected instance,t,score");
        std::size_t inst = 0;
        std::size_t t = 0;
        double score = 0.0;
        try {
            inst = std::stoul(line.substr(0, c1));
            t = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
            score = std::stod(line.substr(c2 + 1));
        } catch (const std::exception&) {
            throw ParseError("bad number on saliency CSV row " + std::to_string(row));
        }
        if (inst > maps.size() || (inst == maps.size() && t != 0)) throw FormatError(row, "instances out of order");
        if (inst == maps.size()) maps.emplace_back();
        auto& m = maps[inst];
        if (t != m.scores.size()) throw FormatError(row, "timesteps out of order");
        m.scores.push_back(score);
    }
    return maps;
}

std::string metrics_csv_header() { return "auprc,aup,aur\n"; }

std::string metrics_to_csv_row(const SaliencyMetrics& m) {
    return format_double(m.auprc) + "," + format_double(m.aup) + "," + format_double(m.aur) + "\n";
}

std::string occlusion_to_csv(const OcclusionCurve& curve) {
    std::string out = "ratio,auroc\n";
    for (std::size_t i = 0; i < curve.ratios.size(); ++i) {
        out += format_double(curve.ratios[i]) + "," + format_double(curve.auroc[i]) + "\n";
    }
    return out;
}

OcclusionCurve occlusion_from_csv(const std::string& text) {
    OcclusionCurve curve;
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line.rfind("ratio", 0) == 0) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError(row, "expected ratio,auroc");
        try {
            curve.ratios.push_back(std::stod(line.substr(0, comma)));
            curve.auroc.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw ParseError("bad number on occlusion CSV row " + std::to_string(row));
        }
    }
    return curve;
}

} // namespace shapex
