#include "shapex/svg.hpp"

#include "shapex/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace shapex {

namespace {

constexpr double kWidth = 800.0;
constexpr double kMargin = 40.0;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string header(double w, double h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
           "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string heat(double s) {
    const int g = int(std::lround(255.0 * (1.0 - std::clamp(s, 0.0, 1.0))));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#ff%02x%02x", g, g);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

} // namespace

std::string saliency_svg(std::span<const double> series, const SaliencyMap& map,
                         std::optional<std::span<const std::uint8_t>> gt, const std::string& title) {
    const std::size_t T = series.size();
    if (T == 0) throw ShapeError("cannot plot an empty series");
    if (map.length() != T) throw ShapeError("saliency length differs from series length");
    if (gt && gt->size() != T) throw ShapeError("ground truth length differs from series length");

    const double plot_h = 200.0;
    const double strip_h = 24.0;
    const double height = kMargin + plot_h + 8.0 + strip_h + (gt ? 10.0 : 0.0) + kMargin;
    const double inner_w = kWidth - 2 * kMargin;
    const double step = inner_w / double(T);
    auto [lo_it, hi_it] = std::minmax_element(series.begin(), series.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (hi - lo < 1e-12) {
        lo -= 1.0;
        hi += 1.0;
    }

    std::string out = header(kWidth, height);
    if (!title.empty()) {
        out += "<text x=\"" + num(kMargin) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" +
               escape(title) + "</text>\n";
    }
    const double strip_y = kMargin + plot_h + 8.0;
    for (std::size_t t = 0; t < T; ++t) {
        out += "<rect x=\"" + num(kMargin + double(t) * step) + "\" y=\"" + num(strip_y) + "\" width=\"" +
               num(step + 0.05) + "\" height=\"" + num(strip_h) + "\" fill=\"" + heat(map.scores[t]) + "\"/>\n";
    }
    if (gt) {
        for (std::size_t t = 0; t < T; ++t) {
            if ((*gt)[t] == 0) continue;
            out += "<rect x=\"" + num(kMargin + double(t) * step) + "\" y=\"" + num(strip_y + strip_h + 2.0) +
                   "\" width=\"" + num(step + 0.05) + "\" height=\"6\" fill=\"#333333\"/>\n";
        }
    }
    out += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\" points=\"";
    for (std::size_t t = 0; t < T; ++t) {
        const double x = kMargin + (double(t) + 0.5) * step;
        const double y = kMargin + plot_h * (1.0 - (series[t] - lo) / (hi - lo));
        out += num(x) + "," + num(y) + (t + 1 < T ? " " : "");
    }
    out += "\"/>\n</svg>\n";
    return out;
}

std::string occlusion_svg(std::span<const NamedCurve> curves, const std::string& title) {
    const double plot_h = 300.0;
    const double height = plot_h + 2 * kMargin + 20.0 * double(curves.size());
    const double inner_w = kWidth - 2 * kMargin;
    double xmax = 0.0;
    for (const auto& c : curves) {
        if (c.curve.ratios.size() != c.curve.auroc.size()) throw ShapeError("curve ratios and AUROCs differ in count");
        for (double r : c.curve.ratios) xmax = std::max(xmax, r);
    }
    if (xmax <= 0.0) xmax = 1.0;

    std::string out = header(kWidth, height);
    if (!title.empty()) {
        out += "<text x=\"" + num(kMargin) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" +
               escape(title) + "</text>\n";
    }
    // Axes: x = ratio in [0, xmax], y = AUROC in [0, 1].
    out += "<polyline fill=\"none\" stroke=\"black\" points=\"" + num(kMargin) + "," + num(kMargin) + " " +
           num(kMargin) + "," + num(kMargin + plot_h) + " " + num(kMargin + inner_w) + "," + num(kMargin + plot_h) +
           "\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = k / 4.0;
        const double y = kMargin + plot_h * (1.0 - v);
        out += "<text x=\"4\" y=\"" + num(y + 4) + "\" font-family=\"sans-serif\" font-size=\"10\">" + num(v) +
               "</text>\n";
        const double x = kMargin + inner_w * v;
        out += "<text x=\"" + num(x - 8) + "\" y=\"" + num(kMargin + plot_h + 14) +
               "\" font-family=\"sans-serif\" font-size=\"10\">" + num(v * xmax) + "</text>\n";
    }
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i].curve;
        const char* colour = kPalette[i % std::size(kPalette)];
        out += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"";
        for (std::size_t k = 0; k < c.ratios.size(); ++k) {
            const double x = kMargin + inner_w * c.ratios[k] / xmax;
            const double y = kMargin + plot_h * (1.0 - std::clamp(c.auroc[k], 0.0, 1.0));
            out += num(x) + "," + num(y) + (k + 1 < c.ratios.size() ? " " : "");
        }
        out += "\"/>\n";
        const double ly = kMargin + plot_h + 30.0 + 20.0 * double(i);
        out += "<text x=\"" + num(kMargin) + "\" y=\"" + num(ly) + "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" +
               colour + "\">" + escape(curves[i].label) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

} // namespace shapex
