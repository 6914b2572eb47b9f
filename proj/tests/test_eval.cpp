#include <doctest.h>

#include "oracles.hpp"
#include "shapex/eval.hpp"
#include "shapex/svg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace shapex;

namespace {

std::vector<std::uint8_t> random_gt(std::size_t T, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution b(p);
    std::vector<std::uint8_t> gt(T);
    do {
        for (auto& g : gt) g = b(rng);
    } while (std::count(gt.begin(), gt.end(), 1) == 0 || std::count(gt.begin(), gt.end(), 0) == 0);
    return gt;
}

double prevalence(const std::vector<std::uint8_t>& gt) {
    return double(std::count(gt.begin(), gt.end(), 1)) / double(gt.size());
}

// P(class 1) = squashed value at step 0; lets tests control the scores.
class FirstStep final : public Classifier {
public:
    ClassifierKind kind() const override { return ClassifierKind::builtin; }
    std::size_t num_classes() const override { return 2; }
    std::string metadata() const override { return "first-step"; }
    std::vector<double> predict_proba(std::span<const double> x) const override {
        const double p = 1.0 / (1.0 + std::exp(-x[0]));
        return {1.0 - p, p};
    }
};

} // namespace

TEST_CASE("auroc examples and pairwise oracle") {
    CHECK(auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
    CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<std::uint8_t>{1, 1, 0, 0}) == 0.0);
    CHECK(auroc(std::vector<double>(6, 0.3), std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0}) == 0.5);
    CHECK(auroc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}) == 0.5);

    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t M = 100;
        std::vector<double> s(M);
        // Coarse scores force plenty of ties.
        for (auto& v : s) v = double(rng() % 20) / 19.0;
        const auto y = random_gt(M, 0.4, rng);
        CHECK(std::abs(auroc(s, y) - oracle::auroc_pairwise(s, y)) <= 1e-12);
    }
}

TEST_CASE("saliency metrics on perfect and inverted maps") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto gt = random_gt(64 + rng() % 200, 0.2 + 0.05 * (trial % 10), rng);
        std::vector<double> R(gt.begin(), gt.end());
        const auto perfect = saliency_metrics(R, gt);
        CHECK(perfect.auprc == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(perfect.aup == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(perfect.aur == doctest::Approx(1.0).epsilon(1e-12));

        for (auto& v : R) v = 1.0 - v;
        const auto wrong = saliency_metrics(R, gt);
        CHECK(std::abs(wrong.auprc - prevalence(gt)) <= 0.01);
        const auto o = oracle::saliency_sweep(R, gt);
        CHECK(std::abs(wrong.auprc - o.auprc) <= 1e-9);
    }
    const std::vector<std::uint8_t> constant(10, 1);
    CHECK_THROWS_AS(saliency_metrics(std::vector<double>(10, 0.5), constant), DegenerateGroundTruth);
    CHECK_THROWS_AS(saliency_metrics(std::vector<double>(9, 0.5), random_gt(10, 0.5, rng)), ShapeError);
    CHECK_THROWS_AS(saliency_metrics(std::vector<double>{NAN, 0.0}, std::vector<std::uint8_t>{1, 0}), ParseError);
}

TEST_CASE("saliency metrics match a brute-force sweep") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t T = 2 + rng() % 511;
        const auto gt = random_gt(T, 0.05 + 0.9 * double(rng() % 100) / 100.0, rng);
        std::vector<double> R(T);
        const bool coarse = trial % 2 == 0;
        for (auto& v : R) v = coarse ? double(rng() % 8) / 7.0 : std::uniform_real_distribution<double>(0, 1)(rng);
        const auto m = saliency_metrics(R, gt);
        const auto o = oracle::saliency_sweep(R, gt);
        CHECK(std::abs(m.auprc - o.auprc) <= 1e-9);
        CHECK(std::abs(m.aup - o.aup) <= 1e-9);
        CHECK(std::abs(m.aur - o.aur) <= 1e-9);
        for (double v : {m.auprc, m.aup, m.aur}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    const auto flat = saliency_metrics(std::vector<double>(4, 0.2), std::vector<std::uint8_t>{1, 0, 0, 0});
    CHECK(flat.aup == 0.25);
    CHECK(flat.aur == 1.0);
}

TEST_CASE("random maps score near prevalence") {
    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> u(0, 1);
    for (double p : {0.1, 0.2, 0.5}) {
        double sum = 0.0, prev = 0.0;
        const int trials = 200;
        for (int i = 0; i < trials; ++i) {
            const auto gt = random_gt(512, p, rng);
            std::vector<double> R(512);
            for (auto& v : R) v = u(rng);
            sum += saliency_metrics(R, gt).auprc;
            prev += prevalence(gt);
        }
        INFO("prevalence " << prev / trials << " mean auprc " << sum / trials);
        CHECK(std::abs(sum / trials - prev / trials) <= 0.05);
    }
}

TEST_CASE("mean metrics over a dataset") {
    Dataset ds;
    ds.num_classes = 2;
    ds.instances.push_back({{1, 2, 3, 4}, 0, std::vector<std::uint8_t>{0, 1, 1, 0}});
    ds.instances.push_back({{1, 2, 3, 4}, 1, std::vector<std::uint8_t>{1, 0, 0, 0}});
    const std::vector<SaliencyMap> maps{{{0, 1, 1, 0}}, {{0, 1, 1, 1}}};
    const auto m = mean_saliency_metrics(ds, maps);
    const auto a = saliency_metrics(maps[0], *ds.instances[0].gt_saliency);
    const auto b = saliency_metrics(maps[1], *ds.instances[1].gt_saliency);
    CHECK(m.auprc == doctest::Approx((a.auprc + b.auprc) / 2));
    CHECK_THROWS_AS(mean_saliency_metrics(ds, std::span(maps).first(1)), ShapeError);
    ds.instances[1].gt_saliency.reset();
    CHECK_THROWS_AS(mean_saliency_metrics(ds, maps), ConfigError);
}

TEST_CASE("occlusion masks") {
    const SaliencyMap map{{0.5, 0.1, 0.1, 0.9, 0.0}};
    CHECK(occlusion_mask(map, 0.0, OcclusionOrder::bottom).bits == PerturbationMask::ones(5).bits);
    CHECK(occlusion_mask(map, 0.4, OcclusionOrder::bottom).bits == std::vector<std::uint8_t>{1, 0, 1, 1, 0});
    CHECK(occlusion_mask(map, 0.6, OcclusionOrder::bottom).bits == std::vector<std::uint8_t>{1, 0, 0, 1, 0});
    CHECK(occlusion_mask(map, 0.4, OcclusionOrder::top).bits == std::vector<std::uint8_t>{0, 1, 1, 0, 1});
    CHECK(occlusion_mask(map, 1.0, OcclusionOrder::bottom).bits == PerturbationMask::zeros(5).bits);
    // Ties go to the lower index first.
    const SaliencyMap flat{{0.0, 0.0, 0.0, 0.0}};
    CHECK(occlusion_mask(flat, 0.5, OcclusionOrder::bottom).bits == std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK_THROWS_AS(occlusion_mask(map, 1.5, OcclusionOrder::bottom), ConfigError);
}

TEST_CASE("occlusion curve") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0, 1);
    Dataset ds;
    ds.num_classes = 2;
    std::vector<SaliencyMap> maps;
    for (int i = 0; i < 80; ++i) {
        const int y = i % 2;
        std::vector<double> x(10);
        for (auto& v : x) v = nd(rng);
        x[0] = (y ? 1.5 : -1.5) + nd(rng);
        ds.instances.push_back({x, y, std::nullopt});
        std::vector<double> s(10, 0.0);
        s[0] = 1.0;
        maps.push_back({s});
    }
    FirstStep f;
    std::vector<std::vector<double>> raw;
    for (const auto& ts : ds.instances) raw.push_back(ts.values);
    const double clean = model_auroc(f, ds, raw);

    OcclusionConfig cfg;
    cfg.ratios = {0.0, 0.5, 0.9};
    const auto bottom = occlusion(ds, maps, f, cfg);
    CHECK(bottom.auroc[0] == clean);
    // Step 0 is the most salient, so masking the bottom 90% keeps it.
    CHECK(bottom.auroc[2] == clean);

    cfg.order = OcclusionOrder::top;
    cfg.baseline = Baseline::zero;
    cfg.ratios = {0.0, 0.1};
    const auto top = occlusion(ds, maps, f, cfg);
    CHECK(top.auroc[0] == clean);
    CHECK(top.auroc[1] == 0.5);

    auto short_maps = maps;
    short_maps[3].scores.pop_back();
    CHECK_THROWS_AS(occlusion(ds, short_maps, f), ShapeError);
    CHECK_THROWS_AS(occlusion(ds, std::span(maps).first(10), f), ShapeError);
    auto unlabeled = ds;
    unlabeled.instances[0].label.reset();
    CHECK_THROWS_AS(occlusion(unlabeled, maps, f), MissingLabel);
}

TEST_CASE("csv round trips") {
    const std::vector<SaliencyMap> maps{{{0.0, 0.25, 1.0 / 3.0}}, {{1.0, 0.5, 0.1}}};
    const auto text = saliency_maps_to_csv(maps);
    CHECK(text.rfind("instance,t,score\n0,0,0\n", 0) == 0);
    const auto back = saliency_maps_from_csv(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].scores == maps[0].scores);
    CHECK(back[1].scores == maps[1].scores);
    CHECK_THROWS_AS(saliency_maps_from_csv("instance,t,score\n0,1,0.5\n"), FormatError);
    CHECK_THROWS_AS(saliency_maps_from_csv("instance,t,score\n0,0,abc\n"), ParseError);

    OcclusionCurve c{{0.0, 0.1, 0.2}, {0.99, 0.9, 0.75}};
    const auto oc = occlusion_from_csv(occlusion_to_csv(c));
    CHECK(oc.ratios == c.ratios);
    CHECK(oc.auroc == c.auroc);
    CHECK(metrics_csv_header() == "auprc,aup,aur\n");
    CHECK(metrics_to_csv_row({0.5, 0.25, 1.0}) == "0.5,0.25,1\n");
}

TEST_CASE("svg output") {
    const std::vector<double> series{0, 1, 0, -1, 0};
    const SaliencyMap map{{0, 0.5, 1, 0.5, 0}};
    const std::vector<std::uint8_t> gt{0, 1, 1, 1, 0};
    const auto svg = saliency_svg(series, map, std::span<const std::uint8_t>(gt), "a < b");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("a &lt; b") != std::string::npos);
    CHECK(svg.find("#ff0000") != std::string::npos);
    CHECK_THROWS_AS(saliency_svg(series, SaliencyMap{{0, 1}}), ShapeError);

    const std::vector<NamedCurve> curves{{"bottom", {{0, 0.5}, {1, 0.9}}}, {"top", {{0, 0.5}, {1, 0.6}}}};
    const auto plot = occlusion_svg(curves, "occlusion");
    CHECK(plot.find(">bottom<") != std::string::npos);
    CHECK(plot.find(">top<") != std::string::npos);
}
