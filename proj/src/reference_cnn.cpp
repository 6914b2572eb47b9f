#include "shapex/model.hpp"
#include "shapex/attribution.hpp"
#include "shapex/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace shapex {

using nlohmann::json;

namespace {

using W = ReferenceCnnWeights;
constexpr int kCnnVersion = 1;
constexpr std::ptrdiff_t kHalf1 = W::kWidth1 / 2;
constexpr std::ptrdiff_t kHalf2 = W::kWidth2 / 2;

struct CnnForward {
    std::vector<double> h1;  // kChannels1 x T, post-ReLU
    std::vector<double> h2;  // kChannels2 x T, post-ReLU
    std::vector<std::size_t> peak;  // argmax_t per stage-2 channel
    std::vector<double> features;
    std::vector<double> probs;
};

void forward(const W& w, std::span<const double> x, CnnForward& f) {
    const std::size_t T = x.size();
    f.h1.assign(W::kChannels1 * T, 0.0);
    f.h2.assign(W::kChannels2 * T, 0.0);
    for (std::size_t c = 0; c < W::kChannels1; ++c) {
        double* out = f.h1.data() + c * T;
        for (std::size_t t = 0; t < T; ++t) out[t] = w.conv1_b[c];
        for (std::size_t k = 0; k < W::kWidth1; ++k) {
            const double wk = w.conv1_w[c * W::kWidth1 + k];
            const std::ptrdiff_t off = std::ptrdiff_t(k) - kHalf1;
            const std::size_t t0 = off < 0 ? std::size_t(-off) : 0;
            const std::size_t t1 = off > 0 ? T - std::size_t(off) : T;
            for (std::size_t t = t0; t < t1; ++t) out[t] += wk * x[std::size_t(std::ptrdiff_t(t) + off)];
        }
        for (std::size_t t = 0; t < T; ++t) out[t] = std::max(0.0, out[t]);
    }
    for (std::size_t c = 0; c < W::kChannels2; ++c) {
        double* out = f.h2.data() + c * T;
        for (std::size_t t = 0; t < T; ++t) out[t] = w.conv2_b[c];
        for (std::size_t ci = 0; ci < W::kChannels1; ++ci) {
            const double* in = f.h1.data() + ci * T;
            for (std::size_t k = 0; k < W::kWidth2; ++k) {
                const double wk = w.conv2_w[(c * W::kChannels1 + ci) * W::kWidth2 + k];
                const std::ptrdiff_t off = std::ptrdiff_t(k) - kHalf2;
                const std::size_t t0 = off < 0 ? std::size_t(-off) : 0;
                const std::size_t t1 = off > 0 ? T - std::size_t(off) : T;
                for (std::size_t t = t0; t < t1; ++t) out[t] += wk * in[std::size_t(std::ptrdiff_t(t) + off)];
            }
        }
        for (std::size_t t = 0; t < T; ++t) out[t] = std::max(0.0, out[t]);
    }
    f.peak.assign(W::kChannels2, 0);
    f.features.assign(W::kFeatures, 0.0);
    for (std::size_t c = 0; c < W::kChannels2; ++c) {
        const double* h = f.h2.data() + c * T;
        std::size_t best = 0;
        double sum = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            if (h[t] > h[best]) best = t;
            sum += h[t];
        }
        f.peak[c] = best;
        f.features[c] = h[best];
        f.features[W::kChannels2 + c] = sum / double(T);
    }
    const std::size_t C = w.num_classes;
    f.probs.assign(C, 0.0);
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) {
        double s = w.dense_b[c];
        for (std::size_t k = 0; k < W::kFeatures; ++k) s += w.dense_w(c, k) * f.features[k];
        f.probs[c] = s;
        mx = std::max(mx, s);
    }
    double z = 0.0;
    for (auto& p : f.probs) {
        p = std::exp(p - mx);
        z += p;
    }
    for (auto& p : f.probs) p /= z;
}

// Accumulates gradients of scale * (-log p_y).
void backward(const W& w, std::span<const double> x, const CnnForward& f, int y, double scale, W& g) {
    const std::size_t T = x.size();
    const std::size_t C = w.num_classes;
    std::vector<double> dlogit(C);
    for (std::size_t c = 0; c < C; ++c) dlogit[c] = scale * (f.probs[c] - (c == std::size_t(y) ? 1.0 : 0.0));
    std::vector<double> dfeat(W::kFeatures, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        g.dense_b[c] += dlogit[c];
        for (std::size_t k = 0; k < W::kFeatures; ++k) {
            g.dense_w(c, k) += dlogit[c] * f.features[k];
            dfeat[k] += w.dense_w(c, k) * dlogit[c];
        }
    }

    std::vector<double> dh2(W::kChannels2 * T, 0.0);
    for (std::size_t c = 0; c < W::kChannels2; ++c) {
        double* d = dh2.data() + c * T;
        const double* h = f.h2.data() + c * T;
        const double dmean = dfeat[W::kChannels2 + c] / double(T);
        for (std::size_t t = 0; t < T; ++t) d[t] = h[t] > 0.0 ? dmean : 0.0;
        if (h[f.peak[c]] > 0.0) d[f.peak[c]] += dfeat[c];
    }

    std::vector<double> dh1(W::kChannels1 * T, 0.0);
    for (std::size_t c = 0; c < W::kChannels2; ++c) {
        const double* d = dh2.data() + c * T;
        double bsum = 0.0;
        for (std::size_t t = 0; t < T; ++t) bsum += d[t];
        g.conv2_b[c] += bsum;
        for (std::size_t ci = 0; ci < W::kChannels1; ++ci) {
            const double* in = f.h1.data() + ci * T;
            double* din = dh1.data() + ci * T;
            for (std::size_t k = 0; k < W::kWidth2; ++k) {
                const std::size_t widx = (c * W::kChannels1 + ci) * W::kWidth2 + k;
                const double wk = w.conv2_w[widx];
                const std::ptrdiff_t off = std::ptrdiff_t(k) - kHalf2;
                const std::size_t t0 = off < 0 ? std::size_t(-off) : 0;
                const std::size_t t1 = off > 0 ? T - std::size_t(off) : T;
                double gw = 0.0;
                for (std::size_t t = t0; t < t1; ++t) {
                    const std::size_t u = std::size_t(std::ptrdiff_t(t) + off);
                    gw += d[t] * in[u];
                    din[u] += wk * d[t];
                }
                g.conv2_w[widx] += gw;
            }
        }
    }

    for (std::size_t c = 0; c < W::kChannels1; ++c) {
        double* d = dh1.data() + c * T;
        const double* h = f.h1.data() + c * T;
        double bsum = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            if (h[t] <= 0.0) d[t] = 0.0;
            bsum += d[t];
        }
        g.conv1_b[c] += bsum;
        for (std::size_t k = 0; k < W::kWidth1; ++k) {
            const std::ptrdiff_t off = std::ptrdiff_t(k) - kHalf1;
            const std::size_t t0 = off < 0 ? std::size_t(-off) : 0;
            const std::size_t t1 = off > 0 ? T - std::size_t(off) : T;
            double gw = 0.0;
            for (std::size_t t = t0; t < t1; ++t) gw += d[t] * x[std::size_t(std::ptrdiff_t(t) + off)];
            g.conv1_w[c * W::kWidth1 + k] += gw;
        }
    }
}

// Background split into chunks of 1..40 steps, each flattened with a per-call
// probability drawn uniformly from [0, 1].
std::vector<double> mask_background(const TimeSeries& ts, std::mt19937_64& rng) {
    const auto& gt = *ts.gt_saliency;
    const std::size_t T = ts.length();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> chunk(1, 40);
    const double q = unit(rng);
    auto mask = PerturbationMask::ones(T);
    std::size_t t = 0;
    while (t < T) {
        if (gt[t]) {
            ++t;
            continue;
        }
        const std::size_t end = std::min(T, t + chunk(rng));
        const bool drop = unit(rng) < q;
        for (; t < end && !gt[t]; ++t) mask.bits[t] = drop ? 0 : 1;
    }
    return perturb_linear(ts.values, mask);
}

std::vector<double> gaussian_vec(std::size_t n, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

bool finite_all(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace

ReferenceCnnWeights ReferenceCnnWeights::zeros(std::size_t T, std::size_t C) {
    if (T == 0) throw ConfigError("series length must be positive");
    if (C < 1) throw ConfigError("class count must be positive");
    W w;
    w.series_length = T;
    w.num_classes = C;
    w.conv1_w.assign(kChannels1 * kWidth1, 0.0);
    w.conv1_b.assign(kChannels1, 0.0);
    w.conv2_w.assign(kChannels2 * kChannels1 * kWidth2, 0.0);
    w.conv2_b.assign(kChannels2, 0.0);
    w.dense_w = Matrix(C, kFeatures);
    w.dense_b.assign(C, 0.0);
    return w;
}

ReferenceCnnWeights ReferenceCnnWeights::random(std::size_t T, std::size_t C, std::mt19937_64& rng) {
    W w = zeros(T, C);
    w.conv1_w = gaussian_vec(w.conv1_w.size(), std::sqrt(2.0 / double(kWidth1)), rng);
    w.conv2_w = gaussian_vec(w.conv2_w.size(), std::sqrt(2.0 / double(kChannels1 * kWidth2)), rng);
    w.dense_w.data = gaussian_vec(w.dense_w.data.size(), std::sqrt(1.0 / double(kFeatures)), rng);
    // Slightly positive biases keep the ReLUs alive at the start.
    std::fill(w.conv1_b.begin(), w.conv1_b.end(), 0.01);
    std::fill(w.conv2_b.begin(), w.conv2_b.end(), 0.01);
    return w;
}

std::vector<ParamBlock> ReferenceCnnWeights::blocks() {
    return {{"conv1.weight", conv1_w}, {"conv1.bias", conv1_b}, {"conv2.weight", conv2_w},
            {"conv2.bias", conv2_b},   {"dense.weight", dense_w.data}, {"dense.bias", dense_b}};
}

void ReferenceCnnWeights::validate() const {
    if (series_length == 0 || num_classes == 0) throw ConfigError("reference CNN needs T > 0 and C > 0");
    if (conv1_w.size() != kChannels1 * kWidth1 || conv1_b.size() != kChannels1 ||
        conv2_w.size() != kChannels2 * kChannels1 * kWidth2 || conv2_b.size() != kChannels2 ||
        dense_w.rows != num_classes || dense_w.cols != kFeatures || dense_b.size() != num_classes) {
        throw ShapeError("reference CNN weight shapes are inconsistent");
    }
    const std::pair<const char*, std::span<const double>> blocks[] = {
        {"conv1.weight", conv1_w}, {"conv1.bias", conv1_b}, {"conv2.weight", conv2_w},
        {"conv2.bias", conv2_b},   {"dense.weight", dense_w.data}, {"dense.bias", dense_b}};
    for (const auto& [name, v] : blocks) {
        if (!finite_all(v)) throw NumericalError(name);
    }
}

ReferenceCnn::ReferenceCnn(ReferenceCnnWeights weights) : weights_(std::move(weights)) { weights_.validate(); }

std::string ReferenceCnn::metadata() const {
    return "builtin:reference_cnn T=" + std::to_string(weights_.series_length) +
           " C=" + std::to_string(weights_.num_classes);
}

std::vector<double> ReferenceCnn::predict_proba(std::span<const double> x) const {
    if (x.size() != weights_.series_length) {
        throw ShapeError("classifier expects series of length " + std::to_string(weights_.series_length) +
                         ", got " + std::to_string(x.size()));
    }
    CnnForward f;
    forward(weights_, x, f);
    return f.probs;
}

double reference_cnn_loss(const ReferenceCnnWeights& w, const Batch& batch, ReferenceCnnWeights* grad) {
    if (batch.series.empty()) throw EmptyBatch();
    const double scale = 1.0 / double(batch.series.size());
    double loss = 0.0;
    CnnForward f;
    for (std::size_t i = 0; i < batch.series.size(); ++i) {
        if (batch.series[i].size() != w.series_length) throw ShapeError("batch series length mismatch");
        forward(w, batch.series[i], f);
        loss -= scale * std::log(std::max(f.probs[std::size_t(batch.labels[i])], 1e-300));
        if (grad) backward(w, batch.series[i], f, batch.labels[i], scale, *grad);
    }
    return loss;
}

std::shared_ptr<const ReferenceCnn> train_reference(const Dataset& train, const CnnTrainConfig& cfg,
                                                    const Dataset* test, CnnTrainReport* report) {
    train.validate();
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (!train.instances[i].label) throw MissingLabel(i);
    }
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(cfg.background_masking >= 0.0 && cfg.background_masking <= 1.0)) {
        throw ConfigError("background masking probability must lie in [0, 1]");
    }
    if (cfg.background_masking > 0.0 && !train.has_saliency()) {
        throw ConfigError("background masking needs ground-truth saliency in the training set");
    }
    const std::size_t T = train.series_length();
    const std::size_t C = std::size_t(std::max(2, train.num_classes));

    std::mt19937_64 rng(cfg.seed);
    W w = W::random(T, C, rng);
    Adam opt(cfg.lr);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> history;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            auto batch = make_batch(train, std::span(order).subspan(begin, end - begin));
            std::vector<std::vector<double>> masked;
            if (cfg.background_masking > 0.0) {
                std::uniform_real_distribution<double> unit(0.0, 1.0);
                masked.reserve(end - begin);
                for (std::size_t k = 0; k < end - begin; ++k) {
                    if (unit(rng) >= cfg.background_masking) continue;
                    masked.push_back(mask_background(train.instances[order[begin + k]], rng));
                    batch.series[k] = masked.back();
                }
            }
            W g = W::zeros(T, C);
            const double loss = reference_cnn_loss(w, batch, &g);
            if (!std::isfinite(loss)) throw NumericalError("reference CNN loss");
            opt.step(w.blocks(), g.blocks());
            sum += loss;
            ++batches;
        }
        history.push_back(sum / double(batches));
    }
    w.validate();
    auto model = std::make_shared<const ReferenceCnn>(std::move(w));
    if (report) {
        report->loss_history = history;
        report->train_accuracy = accuracy(*model, train);
        report->test_accuracy = test ? accuracy(*model, *test) : std::nan("");
    }
    return model;
}

json cnn_to_json(const ReferenceCnnWeights& w) {
    json dense = json::array();
    for (std::size_t c = 0; c < w.dense_w.rows; ++c) {
        auto r = w.dense_w.row(c);
        dense.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return json{{"version", kCnnVersion},
                {"kind", "reference_cnn"},
                {"series_length", w.series_length},
                {"num_classes", w.num_classes},
                {"conv1", {{"weight", w.conv1_w}, {"bias", w.conv1_b}}},
                {"conv2", {{"weight", w.conv2_w}, {"bias", w.conv2_b}}},
                {"dense", {{"weight", dense}, {"bias", w.dense_b}}}};
}

ReferenceCnnWeights cnn_from_json(const json& j) {
    if (!j.is_object() || !j.contains("version") || j["version"] != kCnnVersion ||
        j.value("kind", std::string()) != "reference_cnn") {
        throw VersionError("unsupported reference CNN version");
    }
    try {
        W w = W::zeros(j.at("series_length").get<std::size_t>(), j.at("num_classes").get<std::size_t>());
        w.conv1_w = j.at("conv1").at("weight").get<std::vector<double>>();
        w.conv1_b = j.at("conv1").at("bias").get<std::vector<double>>();
        w.conv2_w = j.at("conv2").at("weight").get<std::vector<double>>();
        w.conv2_b = j.at("conv2").at("bias").get<std::vector<double>>();
        const auto& dense = j.at("dense").at("weight");
        if (dense.size() != w.num_classes) throw ShapeError("dense weight row count mismatch");
        for (std::size_t c = 0; c < w.num_classes; ++c) {
            const auto r = dense[c].get<std::vector<double>>();
            if (r.size() != W::kFeatures) throw ShapeError("dense weight column count mismatch");
            std::copy(r.begin(), r.end(), w.dense_w.row(c).begin());
        }
        w.dense_b = j.at("dense").at("bias").get<std::vector<double>>();
        w.validate();
        return w;
    } catch (const json::exception& ex) {
        throw ParseError(std::string("malformed reference CNN: ") + ex.what());
    }
}

void save_cnn(const ReferenceCnnWeights& w, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << cnn_to_json(w).dump(1) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::shared_ptr<const ReferenceCnn> load_cnn(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw ParseError(path.string() + ": " + ex.what());
    }
    try {
        return std::make_shared<const ReferenceCnn>(cnn_from_json(j));
    } catch (const VersionError&) {
        throw VersionError(path.string() + ": unsupported reference CNN version");
    }
}

} // namespace shapex
