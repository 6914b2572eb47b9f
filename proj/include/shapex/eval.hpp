#pragma once

#include "shapex/attribution.hpp"
#include "shapex/core.hpp"
#include "shapex/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace shapex {

struct SaliencyMetrics {
    double auprc = 0.0;
    double aup = 0.0;
    double aur = 0.0;
};

// One point per unique score tau (descending): predict salient iff R_t >= tau.
struct ThresholdPoint {
    double tau = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};
std::vector<ThresholdPoint> threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> gt);

// AUPRC: trapezoid over recall of the precision envelope
//   p~(r) = max_{r' >= r} p(r'),
// anchored at (0, p~ of the first point).
// AUP / AUR: tau min-max normalized to [0, 1] over the unique scores, then
//   sum_k (tau_k - tau_{k-1}) * precision(tau_k)   (resp. recall),
// with tau ascending. A constant map has one threshold and reports its
// precision and recall directly.
// Throws DegenerateGroundTruth when gt is all zeros or all ones.
SaliencyMetrics saliency_metrics(std::span<const double> scores, std::span<const std::uint8_t> gt);
SaliencyMetrics saliency_metrics(const SaliencyMap& map, std::span<const std::uint8_t> gt);

// Mean metrics over instances; throws ShapeError on count/length mismatch.
SaliencyMetrics mean_saliency_metrics(const Dataset& ds, std::span<const SaliencyMap> maps);

// Mann-Whitney; ties count 1/2. 0.5 when one class is absent.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

enum class OcclusionOrder {
    bottom,  // mask the least salient steps (the protocol)
    top,     // mask the most salient steps (contrast run)
};

struct OcclusionConfig {
    std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    Baseline baseline = Baseline::linear;
    OcclusionOrder order = OcclusionOrder::bottom;
};

struct OcclusionCurve {
    std::vector<double> ratios;
    std::vector<double> auroc;
};

// floor(r * T) steps with the lowest saliency (highest for `top`), ties by
// ascending index.
PerturbationMask occlusion_mask(const SaliencyMap& map, double ratio, OcclusionOrder order);

// Binary: score = P(class 1). C > 2: macro one-vs-rest.
double model_auroc(const Classifier& f, const Dataset& ds, std::span<const std::vector<double>> inputs);

OcclusionCurve occlusion(const Dataset& test, std::span<const SaliencyMap> maps, const Classifier& f,
                         const OcclusionConfig& cfg = {});

// instance,t,score rows, instances in order.
std::string saliency_maps_to_csv(std::span<const SaliencyMap> maps);
std::vector<SaliencyMap> saliency_maps_from_csv(const std::string& text);

std::string metrics_csv_header();
std::string metrics_to_csv_row(const SaliencyMetrics& m);
// ratio,auroc rows.
std::string occlusion_to_csv(const OcclusionCurve& curve);
OcclusionCurve occlusion_from_csv(const std::string& text);

} // namespace shapex
