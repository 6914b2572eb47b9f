#pragma once

#include "shapex/core.hpp"
#include "shapex/sdd.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <sys/types.h>
#include <vector>

#include <json.hpp>

namespace shapex {

enum class ClassifierKind { builtin, external };

// Black-box classifier f(x) -> class probabilities.
class Classifier {
public:
    virtual ~Classifier() = default;

    virtual ClassifierKind kind() const = 0;
    // 0 when not yet known (external models report C with their first reply).
    virtual std::size_t num_classes() const = 0;
    virtual std::string metadata() const = 0;

    virtual std::vector<double> predict_proba(std::span<const double> x) const = 0;
    virtual std::vector<std::vector<double>> predict_batch(std::span<const std::vector<double>> xs) const;
};

using ClassifierHandle = std::shared_ptr<const Classifier>;

std::size_t argmax(std::span<const double> v);

// Two same-padded convolution stages with ReLU (7-wide x 8 channels, then
// 5-wide x 16 channels), global max and mean pooling, dense head.
struct ReferenceCnnWeights {
    static constexpr std::size_t kWidth1 = 7;
    static constexpr std::size_t kChannels1 = 8;
    static constexpr std::size_t kWidth2 = 5;
    static constexpr std::size_t kChannels2 = 16;
    static constexpr std::size_t kFeatures = 2 * kChannels2;

    std::size_t series_length = 0;
    std::size_t num_classes = 2;

    std::vector<double> conv1_w;  // kChannels1 x kWidth1
    std::vector<double> conv1_b;  // kChannels1
    std::vector<double> conv2_w;  // kChannels2 x kChannels1 x kWidth2
    std::vector<double> conv2_b;  // kChannels2
    Matrix dense_w;               // C x kFeatures
    std::vector<double> dense_b;  // C

    static ReferenceCnnWeights zeros(std::size_t T, std::size_t C);
    static ReferenceCnnWeights random(std::size_t T, std::size_t C, std::mt19937_64& rng);

    std::vector<ParamBlock> blocks();
    void validate() const;

    bool operator==(const ReferenceCnnWeights&) const = default;
};

class ReferenceCnn final : public Classifier {
public:
    explicit ReferenceCnn(ReferenceCnnWeights weights);

    ClassifierKind kind() const override { return ClassifierKind::builtin; }
    std::size_t num_classes() const override { return weights_.num_classes; }
    std::string metadata() const override;
    // Throws ShapeError if x.size() differs from the trained length.
    std::vector<double> predict_proba(std::span<const double> x) const override;

    const ReferenceCnnWeights& weights() const noexcept { return weights_; }

private:
    ReferenceCnnWeights weights_;
};

struct CnnTrainConfig {
    double lr = 3e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 80;
    std::uint64_t seed = 0;
    // Probability that a training instance is replaced by a copy whose
    // background (steps outside gt_saliency) is partly flattened with the
    // linear baseline. Requires ground-truth saliency; label unchanged.
    double background_masking = 0.0;
};

struct CnnTrainReport {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;  // NaN without a test set
    std::vector<double> loss_history;
};

// Softmax cross-entropy, mini-batch Adam; deterministic per seed.
std::shared_ptr<const ReferenceCnn> train_reference(const Dataset& train, const CnnTrainConfig& cfg,
                                                    const Dataset* test = nullptr,
                                                    CnnTrainReport* report = nullptr);

// Mean cross-entropy and gradients over a batch; exposed for gradient checks.
double reference_cnn_loss(const ReferenceCnnWeights& w, const Batch& batch, ReferenceCnnWeights* grad);

double accuracy(const Classifier& f, const Dataset& ds);

nlohmann::json cnn_to_json(const ReferenceCnnWeights& w);
ReferenceCnnWeights cnn_from_json(const nlohmann::json& j);
void save_cnn(const ReferenceCnnWeights& w, const std::filesystem::path& path);
std::shared_ptr<const ReferenceCnn> load_cnn(const std::filesystem::path& path);

// Child process spoken to over newline-delimited JSON on its standard streams:
//   request  {"id":k,"series":[...]}
//   response {"id":k,"probs":[...]}
// One line per series; a batch of M series is M request lines. Calls are
// serialized on an internal mutex.
class ExternalClassifier final : public Classifier {
public:
    explicit ExternalClassifier(std::string command, std::size_t num_classes = 0,
                                std::chrono::milliseconds timeout = std::chrono::seconds(30));
    ~ExternalClassifier() override;

    ExternalClassifier(const ExternalClassifier&) = delete;
    ExternalClassifier& operator=(const ExternalClassifier&) = delete;

    ClassifierKind kind() const override { return ClassifierKind::external; }
    std::size_t num_classes() const override;
    std::string metadata() const override { return "external:" + command_; }

    std::vector<double> predict_proba(std::span<const double> x) const override;
    std::vector<std::vector<double>> predict_batch(std::span<const std::vector<double>> xs) const override;

private:
    void shutdown() noexcept;
    [[noreturn]] void fail_dead(const std::string& what) const;
    void drain_stderr() const;

    std::string command_;
    std::chrono::milliseconds timeout_;
    mutable std::mutex mu_;
    mutable std::size_t num_classes_;
    mutable std::uint64_t next_id_ = 0;
    mutable bool broken_ = false;
    mutable std::string stdout_buf_;
    mutable std::string stderr_buf_;
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    int err_child_ = -1;
};

// "builtin:PATH" or "external:CMD".
ClassifierHandle open_classifier(const std::string& spec, std::size_t num_classes = 0);

} // namespace shapex
