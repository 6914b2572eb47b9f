#pragma once

#include "shapex/core.hpp"
#include "shapex/model.hpp"
#include "shapex/sdd.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace shapex {

// Contiguous activated interval [start, end) with its activation peak.
struct Segment {
    int shapelet_id = -1;  // 0-based shapelet index; -1 for fixed partitions
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t peak = 0;

    std::size_t length() const noexcept { return end - start; }
    bool contains(std::size_t t) const noexcept { return t >= start && t < end; }
    bool operator==(const Segment&) const = default;
};

struct SegmentSet {
    std::vector<Segment> segments;
    // Symmetric, true diagonal; [i][j] iff the intervals overlap or the gap
    // between them is at most the gap tolerance.
    std::vector<std::vector<std::uint8_t>> adjacency;
    std::size_t series_length = 0;

    std::size_t size() const noexcept { return segments.size(); }
    bool empty() const noexcept { return segments.empty(); }
    bool operator==(const SegmentSet&) const = default;
};

SegmentSet make_segment_set(std::vector<Segment> segments, std::size_t T, std::size_t gap_tolerance = 0);
// Every segment connected to every other.
SegmentSet make_complete_segment_set(std::vector<Segment> segments, std::size_t T);

enum class SegmentMode {
    peak_run,  // the super-threshold run containing argmax_t A[t][n]
    all_runs,  // every super-threshold run
};

struct SegmentConfig {
    double threshold = 0.0;  // Omega; 0 selects 1.5 / N
    std::size_t gap_tolerance = 0;
    SegmentMode mode = SegmentMode::peak_run;
};

SegmentSet segment_activation(const ActivationMap& A, const SegmentConfig& cfg = {});
SegmentSet segment(std::span<const double> x, const ShapeletBank& bank, const SegmentConfig& cfg = {});

// bits[t] = 1 iff t lies in a segment of the subset.
PerturbationMask build_mask(std::size_t T, const SegmentSet& segs, std::span<const std::size_t> subset);

// Masked runs become the straight line between the kept values just outside
// the run; a run touching an edge holds its single anchor; a fully masked
// series becomes zeros.
std::vector<double> perturb_linear(std::span<const double> x, const PerturbationMask& mask);

enum class Baseline { linear, zero, mean };
// zero: masked steps set to 0; mean: masked steps set to the mean of x.
std::vector<double> perturb(std::span<const double> x, const PerturbationMask& mask, Baseline baseline);

// Connected component of n in the adjacency graph, without n, ascending.
std::vector<std::size_t> connected_universe(const SegmentSet& segs, std::size_t n);
std::vector<std::vector<std::size_t>> connected_components(const SegmentSet& segs);

enum class ShapleyMode { exact, sampled };

struct ShapleyConfig {
    std::size_t k_exact = 12;
    std::size_t num_samples = 64;
    std::uint64_t seed = 0;
    // false: every segment plays in one game regardless of adjacency.
    bool restrict_to_component = true;
};

struct ShapleyResult {
    std::vector<double> phi;
    std::vector<ShapleyMode> modes;
    std::vector<std::size_t> samples_used;  // coalitions (exact) or permutations (sampled)
    double value_at_empty = 0.0;
    double value_at_full = 0.0;

    ShapleyMode mode() const noexcept;
};

using Coalition = std::vector<std::size_t>;  // ascending segment indices
// Evaluates v on a list of coalitions; one value per coalition, same order.
using CoalitionValues = std::function<std::vector<double>(std::span<const Coalition>)>;

// Game-level engine; the classifier-backed overload feeds it perturbed inputs.
ShapleyResult shapley_values(const SegmentSet& segs, const CoalitionValues& v, const ShapleyConfig& cfg = {});

// v(G') = f(perturb_linear(x, build_mask(T, segs, G')))[target]
ShapleyResult shapley(std::span<const double> x, const SegmentSet& segs, const Classifier& f, std::size_t target,
                      const ShapleyConfig& cfg = {});

// R_t = sum over segments containing t of |phi_n| / |interval_n|, divided by
// its maximum when positive.
SaliencyMap to_saliency(const ShapleyResult& res, const SegmentSet& segs, std::size_t T);

// Consecutive intervals of seg_len (last may be shorter), fully connected.
SegmentSet equal_length_segments(std::size_t T, std::size_t seg_len);
SaliencyMap equal_length_shapley(std::span<const double> x, const Classifier& f, std::size_t target,
                                 std::size_t seg_len, const ShapleyConfig& cfg = {},
                                 ShapleyResult* result = nullptr);

struct ExplainConfig {
    SegmentConfig segment;
    ShapleyConfig shapley;
    std::optional<std::size_t> target;  // default: argmax of f(x)
};

struct Explanation {
    SegmentSet segments;
    ShapleyResult result;
    SaliencyMap saliency;
    std::size_t target = 0;
    bool empty_segments = false;  // warning: no shapelet exceeded the threshold
};

// Throws ShapeError when x does not match the bank's training length.
Explanation explain(std::span<const double> x, const ShapeletBank& bank, const Classifier& f,
                    const ExplainConfig& cfg = {});

// Explains every instance; instance i samples with seed cfg.shapley.seed + i,
// so results do not depend on the thread count.
std::vector<Explanation> explain_all(const Dataset& ds, const ShapeletBank& bank, const Classifier& f,
                                     const ExplainConfig& cfg = {}, std::size_t threads = 0);

std::string saliency_to_csv(const SaliencyMap& map);
nlohmann::json shapley_to_json(const ShapleyResult& res, const SegmentSet& segs);

} // namespace shapex
