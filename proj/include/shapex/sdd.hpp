#pragma once

#include "shapex/core.hpp"
#include "shapex/encoder.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace shapex {

// Rows are timesteps, columns shapelets; each row is a softmax over shapelets.
using ActivationMap = Matrix;

enum class Pooling { max, mean };

struct SddHyper {
    std::size_t num_shapelets = 6;
    std::size_t shapelet_len = 0;  // 0: max(8, round(T/10)) rounded to a multiple of 4
    std::size_t patch_len = 0;     // 0: shapelet_len / 4
    std::size_t num_heads = 2;
    std::size_t d_model = 16;
    Pooling pooling = Pooling::max;

    // Fills the automatic lengths for series length T and checks the bank
    // invariants. Throws ConfigError.
    SddHyper resolved(std::size_t T) const;

    bool operator==(const SddHyper&) const = default;
};

// Named view over one parameter block; used by the optimizer and gradient checks.
struct ParamBlock {
    std::string name;
    std::span<double> values;
};

struct ShapeletBank {
    SddHyper hyper;
    std::size_t series_length = 0;  // T the bank was trained on
    std::size_t num_classes = 2;

    Matrix raw;                   // N x L
    std::vector<double> bias;     // N
    EncoderWeights encoder;
    Matrix proj_w;                // C x N
    std::vector<double> proj_b;   // C

    std::vector<double> loss_history;  // mean batch loss per epoch

    std::size_t num_shapelets() const noexcept { return raw.rows; }
    std::size_t shapelet_len() const noexcept { return raw.cols; }

    // Same shapes, every parameter zero. Used as a gradient accumulator.
    ShapeletBank zeros_like() const;
    std::vector<ParamBlock> blocks();
    void validate() const;

    bool operator==(const ShapeletBank&) const = default;
};

// Residual encoder output; the shapelets every downstream stage uses.
Matrix encode_shapelets(const ShapeletBank& bank);

// I[t][n] = sum_j x[t - floor(L/2) + j] * S_n[j] + b_n, zero padded so I has T rows.
Matrix describe(std::span<const double> x, const Matrix& shapelets, std::span<const double> bias);

// Row-wise softmax with max subtraction.
ActivationMap activate(const Matrix& similarity);

// argmax_t A[t][n], lowest index on ties.
std::size_t peak_index(const ActivationMap& A, std::size_t n);

struct Detection {
    std::size_t peak = 0;
    std::vector<double> window;  // x[peak - floor(L/2), +L), zero outside [0, T)
};

Detection detect(std::span<const double> x, const ActivationMap& A, std::size_t n, std::size_t L);

// Pooled per-shapelet features: max or mean over time of A.
std::vector<double> pool_activation(const ActivationMap& A, Pooling pooling);

// Class probabilities from pooled features. For C == 2 this is the sigmoid of
// the logit difference, i.e. the binary form.
std::vector<double> class_probabilities(std::span<const double> pooled, const Matrix& proj_w,
                                        std::span<const double> proj_b);

// Summed cross-entropy over the batch, probabilities clamped at 1e-12.
double loss_cls(std::span<const ActivationMap> batch, std::span<const int> labels, const Matrix& proj_w,
                std::span<const double> proj_b, Pooling pooling = Pooling::max);

// sum_n ||S_n - detected_n||_2
double loss_match(const Matrix& shapelets, const Matrix& detected);

// sum_{i<j} max(0, cos(S_i, S_j) - delta), norms clamped at 1e-12.
double loss_div(const Matrix& shapelets, double delta);

struct LossWeights {
    double match = 1.0;
    double div = 0.5;
    double margin = 0.3;  // delta
};

struct LossBreakdown {
    double total = 0.0;
    double cls = 0.0;
    double match = 0.0;
    double div = 0.0;
};

struct Batch {
    std::vector<std::span<const double>> series;
    std::vector<int> labels;
};

// Composite objective. When grad is non-null it must come from zeros_like()
// and receives exact gradients (detector windows and argmax positions held
// fixed). Throws NumericalError naming the first non-finite block.
LossBreakdown total_loss(const Batch& batch, const ShapeletBank& bank, const LossWeights& weights,
                         ShapeletBank* grad = nullptr);

struct TrainConfig {
    SddHyper hyper;
    LossWeights loss;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double init_noise = 0.01;
};

// Random data subsequences plus N(0, init_noise^2) noise; random encoder and head.
ShapeletBank init_bank(const Dataset& ds, const TrainConfig& cfg);

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Mini-batch Adam. Deterministic for a given seed.
ShapeletBank train_shapelets(const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

nlohmann::json bank_to_json(const ShapeletBank& bank);
// Throws VersionError for an unknown "version" field.
ShapeletBank bank_from_json(const nlohmann::json& j);
void save_bank(const ShapeletBank& bank, const std::filesystem::path& path);
ShapeletBank load_bank(const std::filesystem::path& path);

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

} // namespace shapex
