#pragma once

#include "shapex/error.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shapex {

// Dense row-major matrix used for activation maps and weight blocks.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

// Univariate series with optional class label and binary ground-truth saliency.
struct TimeSeries {
    std::vector<double> values;
    std::optional<int> label;
    std::optional<std::vector<std::uint8_t>> gt_saliency;

    std::size_t length() const noexcept { return values.size(); }

    // Throws ShapeError/ParseError when T == 0, a value is non-finite, or the
    // saliency vector is malformed.
    void validate() const;

    bool operator==(const TimeSeries&) const = default;
};

struct Dataset {
    std::vector<TimeSeries> instances;
    int num_classes = 0;
    std::string name;

    std::size_t size() const noexcept { return instances.size(); }
    bool empty() const noexcept { return instances.empty(); }
    // Common series length; 0 for an empty dataset.
    std::size_t series_length() const noexcept {
        return instances.empty() ? 0 : instances.front().length();
    }
    bool has_saliency() const noexcept;

    void validate() const;

    bool operator==(const Dataset&) const = default;
};

// bits[t] == 1 keeps x_t, bits[t] == 0 replaces it with the baseline.
struct PerturbationMask {
    std::vector<std::uint8_t> bits;

    std::size_t length() const noexcept { return bits.size(); }
    static PerturbationMask zeros(std::size_t T) { return {std::vector<std::uint8_t>(T, 0)}; }
    static PerturbationMask ones(std::size_t T) { return {std::vector<std::uint8_t>(T, 1)}; }
};

struct SaliencyMap {
    std::vector<double> scores;

    std::size_t length() const noexcept { return scores.size(); }
    // True when every score is finite and inside [0, 1].
    bool normalized() const noexcept;
};

enum class TextFormat { tsv, csv };

// How load_dataset decides whether trailing saliency columns are present.
enum class SaliencyColumns {
    absent,
    present,
    detect,  // use the header written by save_dataset, absent otherwise
};

TextFormat format_from_path(const std::filesystem::path& path);

// Row layout: label, v_1..v_T[, s_1..s_T]. A label of "?" marks an unlabeled
// instance. Lines starting with '#' are comments.
Dataset load_dataset(const std::filesystem::path& path, TextFormat format,
                     SaliencyColumns saliency = SaliencyColumns::detect);
Dataset parse_dataset(const std::string& text, TextFormat format,
                      SaliencyColumns saliency = SaliencyColumns::detect,
                      std::string name = {});

// Writes 17 significant digits so a subsequent load reproduces every double.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
std::string format_dataset(const Dataset& ds, TextFormat format);

// 17 significant digits; parsing the result reproduces v exactly.
std::string format_double(double v);

} // namespace shapex
