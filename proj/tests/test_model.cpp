#include <doctest.h>

#include "shapex/model.hpp"
#include "shapex/synth.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

using namespace shapex;

namespace {

const std::string kScripts = SHAPEX_TEST_SCRIPTS;

std::string script(const std::string& name) { return "python3 " + kScripts + "/" + name; }

std::vector<double> random_series(std::size_t T, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<double> v(T);
    for (auto& x : v) x = nd(rng);
    return v;
}

bool is_distribution(const std::vector<double>& p, std::size_t C) {
    if (p.size() != C) return false;
    double s = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) return false;
        s += v;
    }
    return std::abs(s - 1.0) <= 1e-6;
}

SynthSplits mini(std::uint64_t seed, std::size_t n_train = 1000, std::size_t n_test = 400) {
    SynthConfig cfg;
    cfg.length = 200;
    cfg.n_train = n_train;
    cfg.n_test = n_test;
    cfg.seed = seed;
    return generate(cfg);
}

} // namespace

TEST_CASE("zero weights give the uniform distribution") {
    for (std::size_t C : {2u, 3u, 5u}) {
        ReferenceCnn f(ReferenceCnnWeights::zeros(40, C));
        std::mt19937_64 rng(C);
        const auto p = f.predict_proba(random_series(40, rng));
        for (double v : p) CHECK(v == doctest::Approx(1.0 / double(C)).epsilon(1e-15));
    }
}

TEST_CASE("builtin outputs are distributions and pure") {
    std::mt19937_64 rng(8);
    auto w = ReferenceCnnWeights::random(64, 3, rng);
    for (auto& v : w.dense_w.data) v *= 10.0;
    ReferenceCnn f(w);
    for (int i = 0; i < 1000; ++i) {
        const auto x = random_series(64, rng, 5.0);
        const auto p = f.predict_proba(x);
        CHECK(is_distribution(p, 3));
        if (i % 100 == 0) CHECK(f.predict_proba(x) == p);
    }
    CHECK_THROWS_AS(f.predict_proba(random_series(63, rng)), ShapeError);

    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 20; ++i) xs.push_back(random_series(64, rng));
    const auto batch = f.predict_batch(xs);
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(batch[i] == f.predict_proba(xs[i]));
}

TEST_CASE("cnn gradients match central differences") {
    std::mt19937_64 rng(77);
    const double h = 1e-5;
    std::size_t checked = 0, bad = 0;
    for (int point = 0; point < 5; ++point) {
        auto w = ReferenceCnnWeights::random(20, 2, rng);
        std::vector<std::vector<double>> xs;
        Batch batch;
        for (int k = 0; k < 3; ++k) xs.push_back(random_series(20, rng));
        for (int k = 0; k < 3; ++k) {
            batch.series.emplace_back(xs[std::size_t(k)]);
            batch.labels.push_back(k % 2);
        }
        auto grad = ReferenceCnnWeights::zeros(20, 2);
        reference_cnn_loss(w, batch, &grad);
        auto params = w.blocks();
        auto grads = grad.blocks();
        for (std::size_t b = 0; b < params.size(); ++b) {
            for (std::size_t i = 0; i < params[b].values.size(); ++i) {
                double& p = params[b].values[i];
                const double keep = p;
                p = keep + h;
                const double up = reference_cnn_loss(w, batch, nullptr);
                p = keep - h;
                const double down = reference_cnn_loss(w, batch, nullptr);
                p = keep;
                const double fd = (up - down) / (2 * h);
                const double g = grads[b].values[i];
                ++checked;
                // ReLU and max-pool kinks may sit inside the stencil; allow a few.
                if (std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8}) > 1e-4) ++bad;
            }
        }
    }
    CHECK(bad * 100 <= checked);
}

TEST_CASE("reference training") {
    const auto small = mini(5, 200, 50);
    CnnTrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 12;
    const auto a = train_reference(small.train, cfg);
    const auto b = train_reference(small.train, cfg);
    CHECK(a->weights() == b->weights());

    cfg.epochs = 0;
    const auto untrained = train_reference(small.train, cfg);
    CHECK(std::abs(accuracy(*untrained, small.test) - 0.5) <= 0.1);

    auto unlabeled = small.train;
    unlabeled.instances[0].label.reset();
    CHECK_THROWS_AS(train_reference(unlabeled, cfg), MissingLabel);

    cfg.background_masking = 1.5;
    CHECK_THROWS_AS(train_reference(small.train, cfg), ConfigError);
    auto no_gt = small.train;
    for (auto& ts : no_gt.instances) ts.gt_saliency.reset();
    cfg.background_masking = 0.5;
    CHECK_THROWS_AS(train_reference(no_gt, cfg), ConfigError);
}

TEST_CASE("reference classifier separates MCC-H mini") {
    const auto splits = mini(7);
    CnnTrainConfig cfg;
    cfg.seed = 7;
    CnnTrainReport report;
    const auto f = train_reference(splits.train, cfg, &splits.test, &report);
    MESSAGE("train accuracy " << report.train_accuracy << ", test accuracy " << report.test_accuracy);
    CHECK(report.test_accuracy >= 0.90);
    CHECK(report.loss_history.size() == cfg.epochs);
}

TEST_CASE("cnn serialization") {
    std::mt19937_64 rng(9);
    const auto w = ReferenceCnnWeights::random(33, 3, rng);
    CHECK(cnn_from_json(nlohmann::json::parse(cnn_to_json(w).dump())) == w);
    auto stale = cnn_to_json(w);
    stale["version"] = 2;
    CHECK_THROWS_AS(cnn_from_json(stale), VersionError);

    const auto path = std::filesystem::temp_directory_path() / "shapex_test_cnn.json";
    save_cnn(w, path);
    const auto f = open_classifier("builtin:" + path.string());
    CHECK(f->kind() == ClassifierKind::builtin);
    CHECK(f->num_classes() == 3);
    const auto x = random_series(33, rng);
    CHECK(f->predict_proba(x) == ReferenceCnn(w).predict_proba(x));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(open_classifier("tensorflow:model.pb"), ConfigError);
}

TEST_CASE("external adapter echo") {
    ExternalClassifier f(script("echo_model.py"));
    const auto p = f.predict_proba(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(p == std::vector<double>{0.2, 0.8});
    CHECK(f.num_classes() == 2);
    CHECK(f.kind() == ClassifierKind::external);
}

TEST_CASE("external adapter matches a local softmax of the mean") {
    const auto f = open_classifier("external:" + script("mean_softmax.py"));
    std::mt19937_64 rng(4);
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 50; ++i) xs.push_back(random_series(1 + rng() % 30, rng, 2.0));
    const auto batch = f->predict_batch(xs);
    REQUIRE(batch.size() == xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double m = std::accumulate(xs[i].begin(), xs[i].end(), 0.0) / double(xs[i].size());
        const double p1 = 1.0 / (1.0 + std::exp(-m));
        CHECK(std::abs(batch[i][1] - p1) <= 1e-9);
        CHECK(std::abs(batch[i][0] - (1.0 - p1)) <= 1e-9);
        CHECK(is_distribution(batch[i], 2));
    }
    const auto single = f->predict_proba(xs[3]);
    CHECK(std::abs(single[1] - batch[3][1]) <= 1e-15);
}

TEST_CASE("external adapter failure paths") {
    {
        ExternalClassifier f(script("crash_model.py"));
        try {
            f.predict_proba(std::vector<double>{1.0});
            FAIL("expected AdapterError");
        } catch (const AdapterTimeout&) {
            FAIL("crash reported as timeout");
        } catch (const AdapterError& e) {
            CHECK(std::string(e.what()).find("model exploded") != std::string::npos);
        }
        CHECK_THROWS_AS(f.predict_proba(std::vector<double>{1.0}), AdapterError);
    }
    {
        ExternalClassifier f(script("empty_reply.py"));
        CHECK_THROWS_AS(f.predict_proba(std::vector<double>{1.0}), ProtocolError);
    }
    {
        ExternalClassifier f(script("slow_model.py"), 2, std::chrono::milliseconds(300));
        const auto start = std::chrono::steady_clock::now();
        CHECK_THROWS_AS(f.predict_proba(std::vector<double>{1.0}), AdapterTimeout);
        CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
    }
    {
        ExternalClassifier f(script("echo_model.py"), 3);
        CHECK_THROWS_AS(f.predict_proba(std::vector<double>{1.0}), ProtocolError);
    }
}
