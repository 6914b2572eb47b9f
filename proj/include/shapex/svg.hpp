#pragma once

#include "shapex/core.hpp"
#include "shapex/eval.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shapex {

// Series as a polyline over a heat strip coloured by saliency (white to red).
// Ground truth, when given, is drawn as a thin bar under the strip.
std::string saliency_svg(std::span<const double> series, const SaliencyMap& map,
                         std::optional<std::span<const std::uint8_t>> gt = std::nullopt,
                         const std::string& title = "");

struct NamedCurve {
    std::string label;
    OcclusionCurve curve;
};

// AUROC against masking ratio, one polyline per curve.
std::string occlusion_svg(std::span<const NamedCurve> curves, const std::string& title = "");

} // namespace shapex
