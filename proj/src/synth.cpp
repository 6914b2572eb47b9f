#include "shapex/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace shapex {

namespace {

constexpr std::size_t kSmoothWindow = 5;

std::size_t insertions_for(const SynthConfig& cfg) { return cfg.variant == SynthVariant::mcc ? 2 : 1; }

std::size_t edge_margin(const SynthConfig& cfg) { return (cfg.motif_len + 1) / 2; }

std::vector<double> smoothed_noise(std::size_t T, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t half = kSmoothWindow / 2;
    std::vector<double> noise(T + 2 * half);
    for (auto& v : noise) v = gauss(rng);
    std::vector<double> out(T);
    for (std::size_t t = 0; t < T; ++t) {
        double s = 0.0;
        for (std::size_t k = 0; k < kSmoothWindow; ++k) s += noise[t + k];
        out[t] = s / double(kSmoothWindow);
    }
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / double(T);
    double var = 0.0;
    for (double v : out) var += (v - mean) * (v - mean);
    const double sd = T > 1 ? std::sqrt(var / double(T - 1)) : 1.0;
    for (auto& v : out) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return out;
}

// Uniform non-overlapping starts: sorted slack offsets plus cumulative widths.
std::vector<std::size_t> place(std::size_t count, const SynthConfig& cfg, std::mt19937_64& rng) {
    const std::size_t margin = edge_margin(cfg);
    const std::size_t usable = cfg.length - 2 * margin;
    const std::size_t slack = usable - count * cfg.motif_len;
    std::uniform_int_distribution<std::size_t> pick(0, slack);
    std::vector<std::size_t> offsets(count);
    for (auto& o : offsets) o = pick(rng);
    std::sort(offsets.begin(), offsets.end());
    std::vector<std::size_t> starts(count);
    for (std::size_t i = 0; i < count; ++i) starts[i] = margin + offsets[i] + i * cfg.motif_len;
    return starts;
}

TimeSeries make_instance(const SynthConfig& cfg, int label, std::mt19937_64& rng) {
    TimeSeries ts;
    ts.label = label;
    ts.values = smoothed_noise(cfg.length, rng);
    ts.gt_saliency = std::vector<std::uint8_t>(cfg.length, 0);

    // Base std is 1 after rescaling.
    const double amp = cfg.amplitude_mode == AmplitudeMode::high ? 3.0 : 1.0;
    std::size_t count = 1;
    MotifShape shape = MotifShape::sine_bump;
    if (cfg.variant == SynthVariant::mcc) {
        count = label == 0 ? 1 : 2;
    } else {
        shape = label == 0 ? MotifShape::sine_bump : MotifShape::triangle;
    }
    const auto motif = motif_waveform({shape, cfg.motif_len, amp});
    for (std::size_t start : place(count, cfg, rng)) {
        for (std::size_t j = 0; j < cfg.motif_len; ++j) {
            ts.values[start + j] = motif[j];
            (*ts.gt_saliency)[start + j] = 1;
        }
    }
    return ts;
}

Dataset make_split(const SynthConfig& cfg, std::size_t n, std::uint32_t split, const std::string& suffix) {
    Dataset ds;
    ds.num_classes = 2;
    ds.name = cfg.name() + "_" + suffix;
    // Exact balance; the order is then shuffled.
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = int(i % 2);
    std::seed_seq order_seq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), split, 0xffffffffU};
    std::mt19937_64 order_rng(order_seq);
    std::shuffle(labels.begin(), labels.end(), order_rng);

    ds.instances.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::seed_seq seq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), split, std::uint32_t(i)};
        std::mt19937_64 rng(seq);
        ds.instances.push_back(make_instance(cfg, labels[i], rng));
    }
    return ds;
}

} // namespace

std::vector<double> motif_waveform(const MotifSpec& spec) {
    if (spec.length < 4) throw ConfigError("motif length must be at least 4");
    if (!(spec.amplitude > 0.0)) throw ConfigError("motif amplitude must be positive");
    const std::size_t n = spec.length;
    std::vector<double> w(n);
    const double centre = double(n - 1) / 2.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (spec.shape == MotifShape::sine_bump) {
            w[j] = std::sin(std::numbers::pi * double(j) / double(n - 1));
        } else {
            w[j] = 1.0 - std::abs(double(j) - centre) / centre;
        }
    }
    // An even-length triangle misses its apex by half a step; rescale so the
    // peak is exactly the amplitude.
    const double peak = spec.shape == MotifShape::triangle ? *std::max_element(w.begin(), w.end()) : 1.0;
    for (auto& v : w) v = v / peak * spec.amplitude;
    w.front() = 0.0;
    w.back() = 0.0;
    return w;
}

std::string SynthConfig::name() const {
    std::string n = variant == SynthVariant::mcc ? "MCC" : "MTC";
    n += amplitude_mode == AmplitudeMode::high ? "-H" : "-E";
    return n;
}

void SynthConfig::validate() const {
    if (motif_len < 4) throw ConfigError("motif length must be at least 4");
    if (length == 0) throw ConfigError("series length must be positive");
    const std::size_t need = 2 * edge_margin(*this) + insertions_for(*this) * motif_len;
    if (need > length) {
        throw ConfigError("cannot fit " + std::to_string(insertions_for(*this)) + " motifs of length " +
                          std::to_string(motif_len) + " into a series of length " + std::to_string(length));
    }
}

SynthSplits generate(const SynthConfig& cfg) {
    cfg.validate();
    if (cfg.n_train == 0 || cfg.n_test == 0) throw ConfigError("split sizes must be positive");
    return {make_split(cfg, cfg.n_train, 0, "TRAIN"), make_split(cfg, cfg.n_test, 1, "TEST")};
}

} // namespace shapex
