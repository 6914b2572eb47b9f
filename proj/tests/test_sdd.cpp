#include <doctest.h>

#include "shapex/sdd.hpp"
#include "shapex/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace shapex;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    Matrix m(r, c);
    for (auto& v : m.data) v = nd(rng);
    return m;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

double conv_oracle(const std::vector<double>& x, const Matrix& S, const std::vector<double>& b, std::size_t t,
                   std::size_t n) {
    const long L = long(S.cols);
    double s = b[n];
    for (long j = 0; j < L; ++j) {
        const long idx = long(t) - L / 2 + j;
        if (idx < 0 || idx >= long(x.size())) continue;
        s += x[std::size_t(idx)] * S(n, std::size_t(j));
    }
    return s;
}

// Straight-line encoder: one shapelet at a time, plain loops.
Matrix encoder_oracle(const Matrix& raw, const EncoderWeights& w) {
    const std::size_t N = raw.rows, L = raw.cols, P = w.patch_len, d = w.d_model, H = w.num_heads;
    const std::size_t np = L / P, dh = d / H;
    Matrix out = raw;
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<std::vector<double>> e(np, std::vector<double>(d));
        for (std::size_t i = 0; i < np; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                double s = w.embed_b[k];
                for (std::size_t p = 0; p < P; ++p) s += w.embed_w(k, p) * raw(n, i * P + p);
                const double freq = std::pow(10000.0, -double(2 * (k / 2)) / double(d));
                s += (k % 2 == 0) ? std::sin(double(i) * freq) : std::cos(double(i) * freq);
                e[i][k] = s;
            }
        }
        std::vector<std::vector<double>> cat(np, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < H; ++h) {
            auto proj = [&](const Matrix& m, std::size_t i, std::size_t a) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += m(a, k) * e[i][k];
                return s;
            };
            for (std::size_t i = 0; i < np; ++i) {
                std::vector<double> score(np);
                for (std::size_t j = 0; j < np; ++j) {
                    double s = 0.0;
                    for (std::size_t a = 0; a < dh; ++a) s += proj(w.wq[h], i, a) * proj(w.wk[h], j, a);
                    score[j] = s / std::sqrt(double(dh));
                }
                const double mx = *std::max_element(score.begin(), score.end());
                double z = 0.0;
                for (auto& s : score) z += (s = std::exp(s - mx));
                for (std::size_t a = 0; a < dh; ++a) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < np; ++j) acc += score[j] / z * proj(w.wv[h], j, a);
                    cat[i][h * dh + a] = acc;
                }
            }
        }
        for (std::size_t i = 0; i < np; ++i) {
            std::vector<double> z(d, 0.0);
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t k = 0; k < d; ++k) z[a] += w.wo(a, k) * cat[i][k];
            }
            for (std::size_t p = 0; p < P; ++p) {
                double y = w.out_b[p];
                for (std::size_t a = 0; a < d; ++a) y += w.out_w(p, a) * z[a];
                out(n, i * P + p) += y;
            }
        }
    }
    return out;
}

double xent_oracle(const std::vector<ActivationMap>& As, const std::vector<int>& labels, const Matrix& W,
                   const std::vector<double>& b) {
    double loss = 0.0;
    for (std::size_t k = 0; k < As.size(); ++k) {
        const auto& A = As[k];
        std::vector<double> pooled(A.cols, -1.0);
        for (std::size_t t = 0; t < A.rows; ++t) {
            for (std::size_t n = 0; n < A.cols; ++n) pooled[n] = std::max(pooled[n], A(t, n));
        }
        double z0 = b[0], z1 = b[1];
        for (std::size_t n = 0; n < A.cols; ++n) {
            z0 += W(0, n) * pooled[n];
            z1 += W(1, n) * pooled[n];
        }
        const double p1 = 1.0 / (1.0 + std::exp(-(z1 - z0)));
        loss -= std::log(labels[k] == 1 ? p1 : 1.0 - p1);
    }
    return loss;
}

ShapeletBank random_bank(std::mt19937_64& rng, std::size_t T, std::size_t N, std::size_t L, std::size_t P,
                         std::size_t H, std::size_t d, std::size_t C) {
    ShapeletBank bank;
    bank.hyper.num_shapelets = N;
    bank.hyper.shapelet_len = L;
    bank.hyper.patch_len = P;
    bank.hyper.num_heads = H;
    bank.hyper.d_model = d;
    bank.series_length = T;
    bank.num_classes = C;
    bank.raw = random_matrix(N, L, rng);
    bank.bias = random_vector(N, rng, 0.3);
    bank.encoder = EncoderWeights::random(P, d, H, rng);
    // Larger output map than the training init so the encoder gradients are not tiny.
    bank.encoder.out_w = random_matrix(P, d, rng, 0.3);
    bank.encoder.out_b = random_vector(P, rng, 0.3);
    bank.encoder.embed_b = random_vector(d, rng, 0.3);
    bank.proj_w = random_matrix(C, N, rng);
    bank.proj_b = random_vector(C, rng);
    return bank;
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

TEST_CASE("describe hand examples") {
    Matrix S(2, 3, 0.0);
    const std::vector<double> b{0.5, -1.0};
    const auto I = describe(std::vector<double>(6, 0.0), S, b);
    REQUIRE(I.rows == 6);
    for (std::size_t t = 0; t < 6; ++t) {
        CHECK(I(t, 0) == 0.5);
        CHECK(I(t, 1) == -1.0);
    }

    Matrix ones(1, 3, 1.0);
    const auto J = describe(std::vector<double>{0, 0, 1, 0, 0}, ones, std::vector<double>{0.0});
    CHECK(std::vector<double>(J.data) == std::vector<double>{0, 1, 1, 1, 0});
}

TEST_CASE("describe matches a nested-loop convolution") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t T = 1 + rng() % 256;
        const std::size_t N = 1 + rng() % 8;
        const std::size_t L = 1 + rng() % 16;
        const auto x = random_vector(T, rng);
        const auto S = random_matrix(N, L, rng);
        const auto b = random_vector(N, rng);
        const auto I = describe(x, S, b);
        REQUIRE(I.rows == T);
        REQUIRE(I.cols == N);
        double worst = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) worst = std::max(worst, std::abs(I(t, n) - conv_oracle(x, S, b, t, n)));
        }
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("activate rows are distributions") {
    Matrix I(3, 2);
    I(0, 0) = 7.0; I(0, 1) = 7.0;
    I(1, 0) = std::log(3.0); I(1, 1) = 0.0;
    I(2, 0) = 1000.0; I(2, 1) = 0.0;
    const auto A = activate(I);
    CHECK(A(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(A(1, 0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(A(1, 1) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(std::isfinite(A(2, 0)));
    CHECK(A(2, 0) == doctest::Approx(1.0));
    CHECK(A(2, 1) < 1e-300);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto M = random_matrix(1 + rng() % 50, 1 + rng() % 10, rng, 20.0);
        const auto P = activate(M);
        for (std::size_t t = 0; t < P.rows; ++t) {
            const auto row = P.row(t);
            CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("detect window arithmetic and ties") {
    std::vector<double> x(100);
    std::iota(x.begin(), x.end(), 1.0);
    ActivationMap A(100, 2, 0.0);
    A(10, 0) = 1.0;
    auto d = detect(x, A, 0, 4);
    CHECK(d.peak == 10);
    CHECK(d.window == std::vector<double>{9, 10, 11, 12});

    ActivationMap B(100, 1, 0.0);
    B(0, 0) = 1.0;
    d = detect(x, B, 0, 4);
    CHECK(d.peak == 0);
    CHECK(d.window == std::vector<double>{0, 0, 1, 2});

    ActivationMap C(10, 1, 0.1);
    C(3, 0) = 0.5;
    C(7, 0) = 0.5;
    CHECK(peak_index(C, 0) == 3);
}

TEST_CASE("loss_cls closed forms and oracle") {
    // Zero head: every probability is 1/2.
    ActivationMap A(5, 3, 1.0 / 3.0);
    const std::vector<ActivationMap> two{A, A};
    const std::vector<int> labels{0, 1};
    const Matrix W0(2, 3, 0.0);
    const std::vector<double> b0(2, 0.0);
    CHECK(loss_cls(two, labels, W0, b0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));

    // Overwhelming logits: clamped at 1e-12 per instance.
    const std::vector<double> big{-1e6, 1e6};
    const std::vector<int> ones{1, 1};
    CHECK(loss_cls(two, ones, W0, big) <= 2 * 1e-11);

    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ActivationMap> batch;
        std::vector<int> ys;
        for (int k = 0; k < 8; ++k) {
            batch.push_back(activate(random_matrix(12, 4, rng)));
            ys.push_back(int(rng() % 2));
        }
        const auto W = random_matrix(2, 4, rng);
        const auto b = random_vector(2, rng);
        CHECK(std::abs(loss_cls(batch, ys, W, b) - xent_oracle(batch, ys, W, b)) <= 1e-10);
    }
    CHECK_THROWS_AS(loss_cls(std::vector<ActivationMap>{}, std::vector<int>{}, W0, b0), EmptyBatch);
}

TEST_CASE("loss_match and loss_div") {
    Matrix S(1, 2, 0.0);
    Matrix D(1, 2);
    D(0, 0) = 3.0;
    D(0, 1) = 4.0;
    CHECK(loss_match(S, D) == 5.0);
    CHECK(loss_match(D, D) == 0.0);

    std::mt19937_64 rng(23);
    const auto A = random_matrix(5, 8, rng);
    const auto B = random_matrix(5, 8, rng);
    double want = 0.0;
    for (std::size_t n = 0; n < 5; ++n) {
        double s = 0.0;
        for (std::size_t j = 0; j < 8; ++j) s += (A(n, j) - B(n, j)) * (A(n, j) - B(n, j));
        want += std::sqrt(s);
    }
    CHECK(std::abs(loss_match(A, B) - want) <= 1e-12);

    Matrix orth(2, 2, 0.0);
    orth(0, 0) = 1.0;
    orth(1, 1) = 1.0;
    CHECK(loss_div(orth, 0.5) == 0.0);
    Matrix same(2, 3, 1.0);
    CHECK(loss_div(same, 0.5) == doctest::Approx(0.5).epsilon(1e-14));

    const auto R = random_matrix(4, 6, rng);
    double div = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) {
            double dot = 0.0, ni = 0.0, nj = 0.0;
            for (std::size_t k = 0; k < 6; ++k) {
                dot += R(i, k) * R(j, k);
                ni += R(i, k) * R(i, k);
                nj += R(j, k) * R(j, k);
            }
            div += std::max(0.0, dot / (std::sqrt(ni) * std::sqrt(nj)) + 0.5);
        }
    }
    CHECK(std::abs(loss_div(R, -0.5) - div) <= 1e-12);

    auto scaled = R;
    for (std::size_t k = 0; k < 6; ++k) scaled(2, k) *= 7.5;
    CHECK(loss_div(scaled, -0.5) == doctest::Approx(loss_div(R, -0.5)).epsilon(1e-12));
}

TEST_CASE("encoder identities and oracle") {
    std::mt19937_64 rng(31);
    const auto raw = random_matrix(3, 8, rng);
    const auto zero = EncoderWeights::zeros(4, 8, 2);
    CHECK(encode_shapelets(raw, zero) == raw);

    // Single patch, one head: attention returns the value projection.
    auto single = EncoderWeights::random(8, 4, 1, rng);
    single.out_w = random_matrix(8, 4, rng);
    const auto got = encode_shapelets(raw, single);
    const auto want = encoder_oracle(raw, single);
    for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) <= 1e-9);

    for (int trial = 0; trial < 5; ++trial) {
        auto w = EncoderWeights::random(4, 8, 2, rng);
        w.out_w = random_matrix(4, 8, rng);
        w.embed_b = random_vector(8, rng);
        w.out_b = random_vector(4, rng);
        const auto r = random_matrix(4, 16, rng);
        const auto a = encode_shapelets(r, w);
        const auto o = encoder_oracle(r, w);
        double worst = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - o.data[i]));
        CHECK(worst <= 1e-9);
    }
    CHECK_THROWS_AS(encode_shapelets(random_matrix(2, 10, rng), zero), ConfigError);
}

TEST_CASE("hyperparameter resolution") {
    SddHyper h;
    auto r = h.resolved(200);
    CHECK(r.shapelet_len == 20);
    CHECK(r.patch_len == 5);
    r = h.resolved(800);
    CHECK(r.shapelet_len == 80);
    CHECK(r.patch_len == 20);
    r = h.resolved(30);
    CHECK(r.shapelet_len == 8);
    CHECK(r.patch_len == 2);

    SddHyper bad;
    bad.num_shapelets = 1;
    CHECK_THROWS_AS(bad.resolved(100), ConfigError);
    bad = {};
    bad.shapelet_len = 10;
    bad.patch_len = 4;
    CHECK_THROWS_AS(bad.resolved(100), ConfigError);
    bad = {};
    bad.shapelet_len = 120;
    CHECK_THROWS_AS(bad.resolved(100), ConfigError);
}

TEST_CASE("total_loss weights") {
    std::mt19937_64 rng(41);
    const auto bank = random_bank(rng, 30, 3, 8, 4, 2, 4, 2);
    std::vector<std::vector<double>> xs;
    Batch batch;
    for (int k = 0; k < 4; ++k) xs.push_back(random_vector(30, rng));
    for (int k = 0; k < 4; ++k) {
        batch.series.emplace_back(xs[std::size_t(k)]);
        batch.labels.push_back(k % 2);
    }
    const auto cls_only = total_loss(batch, bank, {0.0, 0.0, 0.3});
    CHECK(cls_only.total == cls_only.cls);

    const auto one = total_loss(batch, bank, {1.0, 0.5, 0.3});
    const auto two = total_loss(batch, bank, {2.0, 0.5, 0.3});
    const double r1 = one.total - one.cls - 0.5 * one.div;
    const double r2 = two.total - two.cls - 0.5 * two.div;
    CHECK(r2 == doctest::Approx(2.0 * r1).epsilon(1e-12));

    auto broken = bank;
    broken.bias[1] = NAN;
    CHECK_THROWS_AS(total_loss(batch, broken, {}), NumericalError);
    CHECK_THROWS_AS(total_loss(Batch{}, bank, {}), EmptyBatch);
}

TEST_CASE("total_loss gradients match central differences") {
    std::mt19937_64 rng(2024);
    const double h = 1e-5;
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) {
        auto bank = random_bank(rng, 24, 3, 8, 4, 2, 4, point % 4 == 3 ? 3 : 2);
        std::vector<std::vector<double>> xs;
        Batch batch;
        for (int k = 0; k < 3; ++k) xs.push_back(random_vector(24, rng));
        for (int k = 0; k < 3; ++k) {
            batch.series.emplace_back(xs[std::size_t(k)]);
            batch.labels.push_back(int(rng() % bank.num_classes));
        }
        if (point % 2 == 1) bank.hyper.pooling = Pooling::mean;
        const LossWeights lw{1.0, 0.5, 0.3};
        auto grad = bank.zeros_like();
        total_loss(batch, bank, lw, &grad);
        auto params = bank.blocks();
        auto grads = grad.blocks();
        REQUIRE(params.size() == grads.size());
        for (std::size_t b = 0; b < params.size(); ++b) {
            for (std::size_t i = 0; i < params[b].values.size(); ++i) {
                double& p = params[b].values[i];
                const double keep = p;
                p = keep + h;
                const double up = total_loss(batch, bank, lw).total;
                p = keep - h;
                const double down = total_loss(batch, bank, lw).total;
                p = keep;
                const double fd = (up - down) / (2.0 * h);
                const double g = grads[b].values[i];
                const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
                if (rel > 1e-4) {
                    INFO("point " << point << " block " << params[b].name << "[" << i << "] analytic " << g
                                  << " numeric " << fd);
                    CHECK(rel <= 1e-4);
                }
                worst = std::max(worst, rel);
            }
        }
    }
    MESSAGE("max relative gradient error " << worst);
}

TEST_CASE("bank serialization") {
    std::mt19937_64 rng(5);
    auto bank = random_bank(rng, 50, 4, 8, 4, 2, 8, 3);
    bank.loss_history = {1.5, 1.25};
    const auto j = bank_to_json(bank);
    CHECK(bank_from_json(j) == bank);
    auto parsed = nlohmann::json::parse(j.dump());
    CHECK(bank_from_json(parsed) == bank);

    auto stale = j;
    stale["version"] = 99;
    CHECK_THROWS_AS(bank_from_json(stale), VersionError);

    const auto path = std::filesystem::temp_directory_path() / "shapex_test_bank.json";
    save_bank(bank, path);
    CHECK(load_bank(path) == bank);
    std::filesystem::remove(path);
}

TEST_CASE("training contract") {
    const auto splits = mini(7);
    TrainConfig cfg;
    cfg.epochs = 21;
    cfg.seed = 7;
    const auto bank = train_shapelets(splits.train, cfg);
    REQUIRE(bank.loss_history.size() == 21);
    auto ma = [&](std::size_t end) {
        double s = 0.0;
        for (std::size_t e = end - 4; e <= end; ++e) s += bank.loss_history[e];
        return s / 5.0;
    };
    MESSAGE("loss epoch 0 " << bank.loss_history.front() << ", epoch 20 " << bank.loss_history.back());
    CHECK(bank.loss_history[20] < bank.loss_history[0]);
    CHECK(ma(20) < ma(4));

    const auto small = mini(3, 64, 8);
    TrainConfig quick;
    quick.epochs = 2;
    quick.seed = 99;
    CHECK(train_shapelets(small.train, quick) == train_shapelets(small.train, quick));

    quick.epochs = 0;
    CHECK(train_shapelets(small.train, quick) == init_bank(small.train, quick));

    auto unlabeled = small.train;
    unlabeled.instances[5].label.reset();
    CHECK_THROWS_AS(train_shapelets(unlabeled, quick), MissingLabel);
}
