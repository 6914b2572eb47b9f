#include "shapex/sdd.hpp"

#include "shapex/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace shapex {

using nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormFloor = 1e-12;
constexpr int kBankVersion = 1;

bool finite_span(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return rows;
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* what) {
    if (!j.is_array() || j.size() != rows) throw ShapeError(std::string("bank field ") + what + " has wrong row count");
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = j[r].get<std::vector<double>>();
        if (row.size() != cols) throw ShapeError(std::string("bank field ") + what + " has wrong column count");
        std::copy(row.begin(), row.end(), m.row(r).begin());
    }
    return m;
}

std::vector<double> vector_from_json(const json& j, std::size_t n, const char* what) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != n) throw ShapeError(std::string("bank field ") + what + " has wrong length");
    return v;
}

void softmax_inplace(std::span<double> row) {
    double mx = -INFINITY;
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : row) v /= z;
}

// Per-instance forward state, kept for the backward pass.
struct InstanceForward {
    ActivationMap A;
    std::vector<std::size_t> peaks;
    std::vector<double> pooled;
    std::vector<double> probs;
};

} // namespace

SddHyper SddHyper::resolved(std::size_t T) const {
    SddHyper h = *this;
    if (T == 0) throw ConfigError("series length must be positive");
    if (h.num_shapelets < 2) throw ConfigError("at least two shapelets are required");
    if (h.shapelet_len == 0) {
        const double base = std::max(8.0, std::round(double(T) / 10.0));
        h.shapelet_len = std::size_t(4.0 * std::max(1.0, std::round(base / 4.0)));
        if (h.shapelet_len > T) h.shapelet_len = T;
    }
    if (h.patch_len == 0) h.patch_len = (h.shapelet_len % 4 == 0) ? h.shapelet_len / 4 : 1;
    if (h.shapelet_len < 1 || h.shapelet_len > T) {
        throw ConfigError("shapelet length must lie in [1, T]");
    }
    if (h.shapelet_len % h.patch_len != 0) {
        throw ConfigError("shapelet length " + std::to_string(h.shapelet_len) +
                          " is not divisible by patch length " + std::to_string(h.patch_len));
    }
    if (h.num_heads == 0 || h.d_model == 0 || h.d_model % h.num_heads != 0) {
        throw ConfigError("d_model must be a positive multiple of num_heads");
    }
    return h;
}

ShapeletBank ShapeletBank::zeros_like() const {
    ShapeletBank z;
    z.hyper = hyper;
    z.series_length = series_length;
    z.num_classes = num_classes;
    z.raw = Matrix(raw.rows, raw.cols);
    z.bias.assign(bias.size(), 0.0);
    z.encoder = EncoderWeights::zeros(encoder.patch_len, encoder.d_model, encoder.num_heads);
    z.proj_w = Matrix(proj_w.rows, proj_w.cols);
    z.proj_b.assign(proj_b.size(), 0.0);
    return z;
}

std::vector<ParamBlock> ShapeletBank::blocks() {
    std::vector<ParamBlock> out;
    out.push_back({"raw_shapelets", raw.data});
    out.push_back({"bias", bias});
    out.push_back({"encoder.embed_w", encoder.embed_w.data});
    out.push_back({"encoder.embed_b", encoder.embed_b});
    for (std::size_t h = 0; h < encoder.num_heads; ++h) {
        const auto tag = "[" + std::to_string(h) + "]";
        out.push_back({"encoder.wq" + tag, encoder.wq[h].data});
        out.push_back({"encoder.wk" + tag, encoder.wk[h].data});
        out.push_back({"encoder.wv" + tag, encoder.wv[h].data});
    }
    out.push_back({"encoder.wo", encoder.wo.data});
    out.push_back({"encoder.out_w", encoder.out_w.data});
    out.push_back({"encoder.out_b", encoder.out_b});
    out.push_back({"projection.weight", proj_w.data});
    out.push_back({"projection.bias", proj_b});
    return out;
}

void ShapeletBank::validate() const {
    const std::size_t N = raw.rows;
    const std::size_t L = raw.cols;
    if (N < 2) throw ConfigError("a shapelet bank needs at least two shapelets");
    if (L < 1 || (series_length && L > series_length)) throw ConfigError("shapelet length must lie in [1, T]");
    if (raw.data.size() != N * L) throw ShapeError("raw shapelet storage has wrong size");
    if (bias.size() != N) throw ShapeError("bias length differs from shapelet count");
    if (encoder.patch_len == 0 || L % encoder.patch_len != 0) {
        throw ConfigError("shapelet length is not divisible by patch length");
    }
    encoder.validate();
    if (proj_w.rows != num_classes || proj_w.cols != N || proj_b.size() != num_classes) {
        throw ShapeError("projection head shape mismatch");
    }
    if (!finite_span(raw.data)) throw NumericalError("raw_shapelets");
    if (!finite_span(bias)) throw NumericalError("bias");
    if (!finite_span(proj_w.data)) throw NumericalError("projection.weight");
    if (!finite_span(proj_b)) throw NumericalError("projection.bias");
}

Matrix encode_shapelets(const ShapeletBank& bank) { return encode_shapelets(bank.raw, bank.encoder); }

Matrix describe(std::span<const double> x, const Matrix& shapelets, std::span<const double> bias) {
    const std::size_t T = x.size();
    const std::size_t N = shapelets.rows;
    const std::size_t L = shapelets.cols;
    if (T == 0) throw ShapeError("describe: empty series");
    if (bias.size() != N) throw ShapeError("describe: bias length differs from shapelet count");
    const std::ptrdiff_t half = std::ptrdiff_t(L / 2);
    Matrix I(T, N);
    for (std::size_t t = 0; t < T; ++t) {
        const std::ptrdiff_t start = std::ptrdiff_t(t) - half;
        const std::size_t j0 = start < 0 ? std::size_t(-start) : 0;
        const std::size_t j1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(L), std::ptrdiff_t(T) - start);
        for (std::size_t n = 0; n < N; ++n) {
            const double* s = shapelets.data.data() + n * L;
            double acc = 0.0;
            for (std::size_t j = j0; j < j1; ++j) acc += x[std::size_t(start + std::ptrdiff_t(j))] * s[j];
            I(t, n) = acc + bias[n];
        }
    }
    return I;
}

ActivationMap activate(const Matrix& similarity) {
    ActivationMap A = similarity;
    for (std::size_t t = 0; t < A.rows; ++t) softmax_inplace(A.row(t));
    return A;
}

std::size_t peak_index(const ActivationMap& A, std::size_t n) {
    if (n >= A.cols) throw ShapeError("shapelet index out of range");
    std::size_t best = 0;
    for (std::size_t t = 1; t < A.rows; ++t) {
        if (A(t, n) > A(best, n)) best = t;
    }
    return best;
}

Detection detect(std::span<const double> x, const ActivationMap& A, std::size_t n, std::size_t L) {
    Detection d;
    d.peak = peak_index(A, n);
    d.window.assign(L, 0.0);
    const std::ptrdiff_t start = std::ptrdiff_t(d.peak) - std::ptrdiff_t(L / 2);
    for (std::size_t j = 0; j < L; ++j) {
        const std::ptrdiff_t t = start + std::ptrdiff_t(j);
        if (t >= 0 && t < std::ptrdiff_t(x.size())) d.window[j] = x[std::size_t(t)];
    }
    return d;
}

std::vector<double> pool_activation(const ActivationMap& A, Pooling pooling) {
    std::vector<double> pooled(A.cols, 0.0);
    for (std::size_t n = 0; n < A.cols; ++n) {
        if (pooling == Pooling::max) {
            pooled[n] = A(peak_index(A, n), n);
        } else {
            double s = 0.0;
            for (std::size_t t = 0; t < A.rows; ++t) s += A(t, n);
            pooled[n] = s / double(A.rows);
        }
    }
    return pooled;
}

std::vector<double> class_probabilities(std::span<const double> pooled, const Matrix& proj_w,
                                        std::span<const double> proj_b) {
    const std::size_t C = proj_w.rows;
    std::vector<double> logits(C);
    for (std::size_t c = 0; c < C; ++c) {
        double s = proj_b[c];
        for (std::size_t n = 0; n < pooled.size(); ++n) s += proj_w(c, n) * pooled[n];
        logits[c] = s;
    }
    if (C == 2) {
        const double z = logits[1] - logits[0];
        const double p1 = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        return {1.0 - p1, p1};
    }
    softmax_inplace(logits);
    return logits;
}

double loss_cls(std::span<const ActivationMap> batch, std::span<const int> labels, const Matrix& proj_w,
                std::span<const double> proj_b, Pooling pooling) {
    if (batch.empty()) throw EmptyBatch();
    if (labels.size() != batch.size()) throw ShapeError("loss_cls: label count differs from batch size");
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto pooled = pool_activation(batch[i], pooling);
        const auto p = class_probabilities(pooled, proj_w, proj_b);
        loss -= std::log(std::max(p[std::size_t(labels[i])], kProbFloor));
    }
    return loss;
}

double loss_match(const Matrix& shapelets, const Matrix& detected) {
    if (shapelets.rows != detected.rows || shapelets.cols != detected.cols) {
        throw ShapeError("loss_match: shape mismatch");
    }
    double loss = 0.0;
    for (std::size_t n = 0; n < shapelets.rows; ++n) {
        double s = 0.0;
        for (std::size_t j = 0; j < shapelets.cols; ++j) {
            const double d = shapelets(n, j) - detected(n, j);
            s += d * d;
        }
        loss += std::sqrt(s);
    }
    return loss;
}

double loss_div(const Matrix& shapelets, double delta) {
    const std::size_t N = shapelets.rows;
    std::vector<double> norms(N);
    for (std::size_t n = 0; n < N; ++n) norms[n] = std::max(norm2(shapelets.row(n)), kNormFloor);
    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i + 1; j < N; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < shapelets.cols; ++k) dot += shapelets(i, k) * shapelets(j, k);
            loss += std::max(0.0, dot / (norms[i] * norms[j]) - delta);
        }
    }
    return loss;
}

LossBreakdown total_loss(const Batch& batch, const ShapeletBank& bank, const LossWeights& weights,
                         ShapeletBank* grad) {
    if (batch.series.empty()) throw EmptyBatch();
    if (batch.labels.size() != batch.series.size()) throw ShapeError("batch label count differs from size");
    if (weights.match < 0.0 || weights.div < 0.0) throw ConfigError("loss weights must be non-negative");

    const std::size_t N = bank.num_shapelets();
    const std::size_t L = bank.shapelet_len();
    const std::size_t C = bank.num_classes;
    const std::ptrdiff_t half = std::ptrdiff_t(L / 2);
    const Pooling pooling = bank.hyper.pooling;

    std::vector<EncoderTape> tapes;
    const Matrix S = encode_shapelets(bank.raw, bank.encoder, grad ? &tapes : nullptr);
    Matrix dS = grad ? Matrix(N, L) : Matrix();

    LossBreakdown out;
    for (std::size_t i = 0; i < batch.series.size(); ++i) {
        const auto x = batch.series[i];
        const int y = batch.labels[i];
        if (y < 0 || std::size_t(y) >= C) throw ShapeError("label outside the projection head");
        const std::size_t T = x.size();

        const ActivationMap A = activate(describe(x, S, bank.bias));
        std::vector<std::size_t> peaks(N);
        for (std::size_t n = 0; n < N; ++n) peaks[n] = peak_index(A, n);
        const auto pooled = pool_activation(A, pooling);
        const auto probs = class_probabilities(pooled, bank.proj_w, bank.proj_b);
        const double py = probs[std::size_t(y)];
        out.cls -= std::log(std::max(py, kProbFloor));

        std::vector<double> windows(N * L, 0.0);
        for (std::size_t n = 0; n < N; ++n) {
            const std::ptrdiff_t start = std::ptrdiff_t(peaks[n]) - half;
            double s = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
                const std::ptrdiff_t t = start + std::ptrdiff_t(j);
                const double w = (t >= 0 && t < std::ptrdiff_t(T)) ? x[std::size_t(t)] : 0.0;
                windows[n * L + j] = w;
                const double d = S(n, j) - w;
                s += d * d;
            }
            const double dist = std::sqrt(s);
            out.match += dist;
            if (grad && weights.match > 0.0 && dist > 0.0) {
                for (std::size_t j = 0; j < L; ++j) dS(n, j) += weights.match * (S(n, j) - windows[n * L + j]) / dist;
            }
        }

        if (!grad) continue;

        // Cross-entropy head; the clamp has zero gradient when active.
        std::vector<double> dlogit(C, 0.0);
        if (py >= kProbFloor) {
            for (std::size_t c = 0; c < C; ++c) dlogit[c] = probs[c] - (c == std::size_t(y) ? 1.0 : 0.0);
        }
        std::vector<double> dpooled(N, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            grad->proj_b[c] += dlogit[c];
            for (std::size_t n = 0; n < N; ++n) {
                grad->proj_w(c, n) += dlogit[c] * pooled[n];
                dpooled[n] += bank.proj_w(c, n) * dlogit[c];
            }
        }

        // dA is sparse under max pooling: only the peak rows carry gradient.
        std::vector<std::size_t> rows;
        if (pooling == Pooling::max) {
            rows = peaks;
            std::sort(rows.begin(), rows.end());
            rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        } else {
            rows.resize(T);
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        std::vector<double> dA(N), dI(N);
        for (std::size_t t : rows) {
            for (std::size_t n = 0; n < N; ++n) {
                if (pooling == Pooling::max) dA[n] = (peaks[n] == t) ? dpooled[n] : 0.0;
                else dA[n] = dpooled[n] / double(T);
            }
            double dot = 0.0;
            for (std::size_t n = 0; n < N; ++n) dot += A(t, n) * dA[n];
            const std::ptrdiff_t start = std::ptrdiff_t(t) - half;
            for (std::size_t n = 0; n < N; ++n) {
                dI[n] = A(t, n) * (dA[n] - dot);
                grad->bias[n] += dI[n];
                for (std::size_t j = 0; j < L; ++j) {
                    const std::ptrdiff_t u = start + std::ptrdiff_t(j);
                    if (u >= 0 && u < std::ptrdiff_t(T)) dS(n, j) += dI[n] * x[std::size_t(u)];
                }
            }
        }
    }

    // Diversity penalty on the effective shapelets.
    std::vector<double> norms(N);
    for (std::size_t n = 0; n < N; ++n) norms[n] = std::max(norm2(S.row(n)), kNormFloor);
    for (std::size_t a = 0; a < N; ++a) {
        for (std::size_t b = a + 1; b < N; ++b) {
            double dot = 0.0;
            for (std::size_t k = 0; k < L; ++k) dot += S(a, k) * S(b, k);
            const double cosv = dot / (norms[a] * norms[b]);
            const double pen = cosv - weights.margin;
            if (pen <= 0.0) continue;
            out.div += pen;
            if (!grad || weights.div == 0.0) continue;
            for (std::size_t k = 0; k < L; ++k) {
                // Clamped norms are treated as constants.
                const double ga = S(b, k) / (norms[a] * norms[b]) -
                                  (norms[a] > kNormFloor ? cosv * S(a, k) / (norms[a] * norms[a]) : 0.0);
                const double gb = S(a, k) / (norms[a] * norms[b]) -
                                  (norms[b] > kNormFloor ? cosv * S(b, k) / (norms[b] * norms[b]) : 0.0);
                dS(a, k) += weights.div * ga;
                dS(b, k) += weights.div * gb;
            }
        }
    }

    out.total = out.cls + weights.match * out.match + weights.div * out.div;
    if (!std::isfinite(out.total)) throw NumericalError("loss");

    if (grad) {
        encode_shapelets_backward(bank.encoder, tapes, dS, grad->raw, grad->encoder);
        for (const auto& blk : grad->blocks()) {
            if (!finite_span(blk.values)) throw NumericalError(blk.name);
        }
    }
    return out;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    Batch b;
    b.series.reserve(indices.size());
    b.labels.reserve(indices.size());
    for (std::size_t idx : indices) {
        const auto& ts = ds.instances.at(idx);
        if (!ts.label) throw MissingLabel(idx);
        b.series.emplace_back(ts.values);
        b.labels.push_back(*ts.label);
    }
    return b;
}

ShapeletBank init_bank(const Dataset& ds, const TrainConfig& cfg) {
    ds.validate();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!ds.instances[i].label) throw MissingLabel(i);
    }
    const std::size_t T = ds.series_length();
    if (ds.num_classes < 2) throw ConfigError("shapelet training needs at least two classes");
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");

    ShapeletBank bank;
    bank.hyper = cfg.hyper.resolved(T);
    bank.series_length = T;
    bank.num_classes = std::size_t(ds.num_classes);
    const std::size_t N = bank.hyper.num_shapelets;
    const std::size_t L = bank.hyper.shapelet_len;

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick_instance(0, ds.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_start(0, T - L);
    std::normal_distribution<double> noise(0.0, cfg.init_noise);
    bank.raw = Matrix(N, L);
    for (std::size_t n = 0; n < N; ++n) {
        const auto& src = ds.instances[pick_instance(rng)].values;
        const std::size_t start = pick_start(rng);
        for (std::size_t j = 0; j < L; ++j) bank.raw(n, j) = src[start + j] + noise(rng);
    }
    bank.bias.assign(N, 0.0);
    bank.encoder = EncoderWeights::random(bank.hyper.patch_len, bank.hyper.d_model, bank.hyper.num_heads, rng);
    std::normal_distribution<double> head(0.0, 0.1);
    bank.proj_w = Matrix(bank.num_classes, N);
    for (auto& w : bank.proj_w.data) w = head(rng);
    bank.proj_b.assign(bank.num_classes, 0.0);
    bank.validate();
    return bank;
}

ShapeletBank train_shapelets(const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    ShapeletBank bank = init_bank(ds, cfg);
    // Separate stream so init and shuffling do not interact.
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Adam opt(cfg.lr);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const auto batch = make_batch(ds, std::span(order).subspan(begin, end - begin));
            ShapeletBank grad = bank.zeros_like();
            const auto loss = total_loss(batch, bank, cfg.loss, &grad);
            opt.step(bank.blocks(), grad.blocks());
            sum += loss.total;
            ++batches;
        }
        const double mean = sum / double(batches);
        if (!std::isfinite(mean)) throw NumericalError("training loss");
        bank.loss_history.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    bank.validate();
    return bank;
}

json bank_to_json(const ShapeletBank& bank) {
    json heads = json::array();
    for (std::size_t h = 0; h < bank.encoder.num_heads; ++h) {
        heads.push_back({{"query", matrix_to_json(bank.encoder.wq[h])},
                         {"key", matrix_to_json(bank.encoder.wk[h])},
                         {"value", matrix_to_json(bank.encoder.wv[h])}});
    }
    return json{
        {"version", kBankVersion},
        {"kind", "shapelet_bank"},
        {"hyper",
         {{"num_shapelets", bank.hyper.num_shapelets},
          {"shapelet_len", bank.hyper.shapelet_len},
          {"patch_len", bank.hyper.patch_len},
          {"num_heads", bank.hyper.num_heads},
          {"d_model", bank.hyper.d_model},
          {"pooling", bank.hyper.pooling == Pooling::max ? "max" : "mean"},
          {"series_length", bank.series_length},
          {"num_classes", bank.num_classes}}},
        {"raw_shapelets", matrix_to_json(bank.raw)},
        {"bias", bank.bias},
        {"encoder",
         {{"patch_embed", {{"weight", matrix_to_json(bank.encoder.embed_w)}, {"bias", bank.encoder.embed_b}}},
          {"heads", heads},
          {"output", matrix_to_json(bank.encoder.wo)},
          {"out_map", {{"weight", matrix_to_json(bank.encoder.out_w)}, {"bias", bank.encoder.out_b}}}}},
        {"projection", {{"weight", matrix_to_json(bank.proj_w)}, {"bias", bank.proj_b}}},
        {"loss_history", bank.loss_history},
    };
}

ShapeletBank bank_from_json(const json& j) {
    if (!j.is_object() || !j.contains("version") || j["version"] != kBankVersion) {
        throw VersionError("unsupported shapelet bank version");
    }
    try {
        ShapeletBank b;
        const auto& h = j.at("hyper");
        b.hyper.num_shapelets = h.at("num_shapelets").get<std::size_t>();
        b.hyper.shapelet_len = h.at("shapelet_len").get<std::size_t>();
        b.hyper.patch_len = h.at("patch_len").get<std::size_t>();
        b.hyper.num_heads = h.at("num_heads").get<std::size_t>();
        b.hyper.d_model = h.at("d_model").get<std::size_t>();
        b.hyper.pooling = h.at("pooling").get<std::string>() == "mean" ? Pooling::mean : Pooling::max;
        b.series_length = h.at("series_length").get<std::size_t>();
        b.num_classes = h.at("num_classes").get<std::size_t>();
        const std::size_t N = b.hyper.num_shapelets;
        const std::size_t L = b.hyper.shapelet_len;
        const std::size_t P = b.hyper.patch_len;
        const std::size_t d = b.hyper.d_model;
        const std::size_t H = b.hyper.num_heads;
        if (H == 0 || d % H != 0) throw ConfigError("d_model must be divisible by num_heads");
        const std::size_t dh = d / H;

        b.raw = matrix_from_json(j.at("raw_shapelets"), N, L, "raw_shapelets");
        b.bias = vector_from_json(j.at("bias"), N, "bias");
        b.encoder = EncoderWeights::zeros(P, d, H);
        const auto& e = j.at("encoder");
        b.encoder.embed_w = matrix_from_json(e.at("patch_embed").at("weight"), d, P, "encoder.patch_embed");
        b.encoder.embed_b = vector_from_json(e.at("patch_embed").at("bias"), d, "encoder.patch_embed.bias");
        const auto& heads = e.at("heads");
        if (heads.size() != H) throw ShapeError("encoder head count mismatch");
        for (std::size_t k = 0; k < H; ++k) {
            b.encoder.wq[k] = matrix_from_json(heads[k].at("query"), dh, d, "encoder.query");
            b.encoder.wk[k] = matrix_from_json(heads[k].at("key"), dh, d, "encoder.key");
            b.encoder.wv[k] = matrix_from_json(heads[k].at("value"), dh, d, "encoder.value");
        }
        b.encoder.wo = matrix_from_json(e.at("output"), d, d, "encoder.output");
        b.encoder.out_w = matrix_from_json(e.at("out_map").at("weight"), P, d, "encoder.out_map");
        b.encoder.out_b = vector_from_json(e.at("out_map").at("bias"), P, "encoder.out_map.bias");
        b.proj_w = matrix_from_json(j.at("projection").at("weight"), b.num_classes, N, "projection.weight");
        b.proj_b = vector_from_json(j.at("projection").at("bias"), b.num_classes, "projection.bias");
        if (j.contains("loss_history")) b.loss_history = j["loss_history"].get<std::vector<double>>();
        b.validate();
        return b;
    } catch (const json::exception& ex) {
        throw ParseError(std::string("malformed shapelet bank: ") + ex.what());
    }
}

void save_bank(const ShapeletBank& bank, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << bank_to_json(bank).dump(1) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

ShapeletBank load_bank(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw ParseError(path.string() + ": " + ex.what());
    }
    try {
        return bank_from_json(j);
    } catch (const VersionError&) {
        throw VersionError(path.string() + ": unsupported shapelet bank version");
    }
}

} // namespace shapex
