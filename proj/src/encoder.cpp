#include "shapex/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace shapex {

namespace {

// out (r x m) = a (r x k) * b^T where b is (m x k)
void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out) {
    out = Matrix(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
            out(i, j) = s;
        }
    }
}

Matrix gaussian(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(r, c);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace

EncoderWeights EncoderWeights::zeros(std::size_t patch_len, std::size_t d_model, std::size_t num_heads) {
    if (num_heads == 0 || d_model % num_heads != 0) {
        throw ConfigError("d_model must be divisible by num_heads");
    }
    EncoderWeights w;
    w.patch_len = patch_len;
    w.d_model = d_model;
    w.num_heads = num_heads;
    const std::size_t dh = d_model / num_heads;
    w.embed_w = Matrix(d_model, patch_len);
    w.embed_b.assign(d_model, 0.0);
    w.wq.assign(num_heads, Matrix(dh, d_model));
    w.wk.assign(num_heads, Matrix(dh, d_model));
    w.wv.assign(num_heads, Matrix(dh, d_model));
    w.wo = Matrix(d_model, d_model);
    w.out_w = Matrix(patch_len, d_model);
    w.out_b.assign(patch_len, 0.0);
    return w;
}

EncoderWeights EncoderWeights::random(std::size_t patch_len, std::size_t d_model, std::size_t num_heads,
                                      std::mt19937_64& rng) {
    auto w = zeros(patch_len, d_model, num_heads);
    const std::size_t dh = w.d_head();
    w.embed_w = gaussian(d_model, patch_len, 1.0 / std::sqrt(double(patch_len)), rng);
    for (std::size_t h = 0; h < num_heads; ++h) {
        w.wq[h] = gaussian(dh, d_model, 1.0 / std::sqrt(double(d_model)), rng);
        w.wk[h] = gaussian(dh, d_model, 1.0 / std::sqrt(double(d_model)), rng);
        w.wv[h] = gaussian(dh, d_model, 1.0 / std::sqrt(double(d_model)), rng);
    }
    w.wo = gaussian(d_model, d_model, 1.0 / std::sqrt(double(d_model)), rng);
    w.out_w = gaussian(patch_len, d_model, 0.02 / std::sqrt(double(d_model)), rng);
    return w;
}

void EncoderWeights::validate() const {
    if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0) {
        throw ConfigError("d_model must be a positive multiple of num_heads");
    }
    if (patch_len == 0) throw ConfigError("patch_len must be positive");
    const std::size_t dh = d_head();
    auto check = [](const Matrix& m, std::size_t r, std::size_t c, const char* what) {
        if (m.rows != r || m.cols != c || m.data.size() != r * c) {
            throw ShapeError(std::string("encoder block ") + what + " has wrong shape");
        }
        if (!all_finite(m.data)) throw NumericalError(std::string("encoder.") + what);
    };
    check(embed_w, d_model, patch_len, "embed_w");
    if (embed_b.size() != d_model || !all_finite(embed_b)) throw ShapeError("encoder block embed_b invalid");
    if (wq.size() != num_heads || wk.size() != num_heads || wv.size() != num_heads) {
        throw ShapeError("encoder head count mismatch");
    }
    for (std::size_t h = 0; h < num_heads; ++h) {
        check(wq[h], dh, d_model, "wq");
        check(wk[h], dh, d_model, "wk");
        check(wv[h], dh, d_model, "wv");
    }
    check(wo, d_model, d_model, "wo");
    check(out_w, patch_len, d_model, "out_w");
    if (out_b.size() != patch_len || !all_finite(out_b)) throw ShapeError("encoder block out_b invalid");
}

Matrix positional_encoding(std::size_t num_patches, std::size_t d_model) {
    Matrix pe(num_patches, d_model);
    for (std::size_t i = 0; i < num_patches; ++i) {
        for (std::size_t k = 0; k < d_model; ++k) {
            const double freq = std::pow(10000.0, -double(k - k % 2) / double(d_model));
            pe(i, k) = (k % 2 == 0) ? std::sin(double(i) * freq) : std::cos(double(i) * freq);
        }
    }
    return pe;
}

Matrix encode_shapelets(const Matrix& raw, const EncoderWeights& enc, std::vector<EncoderTape>* tapes) {
    const std::size_t N = raw.rows;
    const std::size_t L = raw.cols;
    const std::size_t P = enc.patch_len;
    if (P == 0 || L % P != 0) {
        throw ConfigError("shapelet length " + std::to_string(L) + " is not divisible by patch length " +
                          std::to_string(P));
    }
    const std::size_t np = L / P;
    const std::size_t d = enc.d_model;
    const std::size_t H = enc.num_heads;
    const std::size_t dh = enc.d_head();
    const double scale = 1.0 / std::sqrt(double(dh));
    const Matrix pe = positional_encoding(np, d);

    if (tapes) tapes->assign(N, EncoderTape{});
    Matrix out = raw;
    for (std::size_t n = 0; n < N; ++n) {
        EncoderTape local;
        EncoderTape& tp = tapes ? (*tapes)[n] : local;

        tp.patches = Matrix(np, P);
        for (std::size_t i = 0; i < np; ++i)
            for (std::size_t j = 0; j < P; ++j) tp.patches(i, j) = raw(n, i * P + j);

        matmul_bt(tp.patches, enc.embed_w, tp.embedded);
        for (std::size_t i = 0; i < np; ++i)
            for (std::size_t k = 0; k < d; ++k) tp.embedded(i, k) += enc.embed_b[k] + pe(i, k);

        tp.q.resize(H);
        tp.k.resize(H);
        tp.v.resize(H);
        tp.attn.resize(H);
        tp.concat = Matrix(np, d);
        for (std::size_t h = 0; h < H; ++h) {
            matmul_bt(tp.embedded, enc.wq[h], tp.q[h]);
            matmul_bt(tp.embedded, enc.wk[h], tp.k[h]);
            matmul_bt(tp.embedded, enc.wv[h], tp.v[h]);
            matmul_bt(tp.q[h], tp.k[h], tp.attn[h]);
            for (std::size_t i = 0; i < np; ++i) {
                auto row = tp.attn[h].row(i);
                double mx = -INFINITY;
                for (auto& s : row) {
                    s *= scale;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (auto& s : row) {
                    s = std::exp(s - mx);
                    z += s;
                }
                for (auto& s : row) s /= z;
            }
            for (std::size_t i = 0; i < np; ++i) {
                for (std::size_t c = 0; c < dh; ++c) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < np; ++j) s += tp.attn[h](i, j) * tp.v[h](j, c);
                    tp.concat(i, h * dh + c) = s;
                }
            }
        }
        matmul_bt(tp.concat, enc.wo, tp.projected);

        for (std::size_t i = 0; i < np; ++i) {
            for (std::size_t j = 0; j < P; ++j) {
                double s = enc.out_b[j];
                for (std::size_t k = 0; k < d; ++k) s += enc.out_w(j, k) * tp.projected(i, k);
                out(n, i * P + j) += s;
            }
        }
    }
    return out;
}

void encode_shapelets_backward(const EncoderWeights& enc, const std::vector<EncoderTape>& tapes,
                               const Matrix& grad_eff, Matrix& grad_raw, EncoderWeights& grad_enc) {
    const std::size_t N = grad_eff.rows;
    const std::size_t P = enc.patch_len;
    const std::size_t np = grad_eff.cols / P;
    const std::size_t d = enc.d_model;
    const std::size_t H = enc.num_heads;
    const std::size_t dh = enc.d_head();
    const double scale = 1.0 / std::sqrt(double(dh));

    for (std::size_t n = 0; n < N; ++n) {
        const EncoderTape& tp = tapes[n];

        // Residual path.
        for (std::size_t j = 0; j < grad_eff.cols; ++j) grad_raw(n, j) += grad_eff(n, j);

        // out map
        Matrix d_proj(np, d);
        for (std::size_t i = 0; i < np; ++i) {
            for (std::size_t j = 0; j < P; ++j) {
                const double g = grad_eff(n, i * P + j);
                grad_enc.out_b[j] += g;
                for (std::size_t k = 0; k < d; ++k) {
                    grad_enc.out_w(j, k) += g * tp.projected(i, k);
                    d_proj(i, k) += enc.out_w(j, k) * g;
                }
            }
        }

        // W_o
        Matrix d_concat(np, d);
        for (std::size_t i = 0; i < np; ++i) {
            for (std::size_t r = 0; r < d; ++r) {
                const double g = d_proj(i, r);
                for (std::size_t c = 0; c < d; ++c) {
                    grad_enc.wo(r, c) += g * tp.concat(i, c);
                    d_concat(i, c) += enc.wo(r, c) * g;
                }
            }
        }

        Matrix d_embed(np, d);
        for (std::size_t h = 0; h < H; ++h) {
            const Matrix& a = tp.attn[h];
            Matrix dq(np, dh), dk(np, dh), dv(np, dh);
            for (std::size_t i = 0; i < np; ++i) {
                std::vector<double> da(np, 0.0);
                for (std::size_t j = 0; j < np; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        const double g = d_concat(i, h * dh + c);
                        s += g * tp.v[h](j, c);
                        dv(j, c) += a(i, j) * g;
                    }
                    da[j] = s;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < np; ++j) dot += a(i, j) * da[j];
                for (std::size_t j = 0; j < np; ++j) {
                    const double ds = a(i, j) * (da[j] - dot) * scale;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dq(i, c) += ds * tp.k[h](j, c);
                        dk(j, c) += ds * tp.q[h](i, c);
                    }
                }
            }
            auto back_linear = [&](const Matrix& dout, const Matrix& w, Matrix& gw) {
                for (std::size_t i = 0; i < np; ++i) {
                    for (std::size_t r = 0; r < dh; ++r) {
                        const double g = dout(i, r);
                        for (std::size_t c = 0; c < d; ++c) {
                            gw(r, c) += g * tp.embedded(i, c);
                            d_embed(i, c) += w(r, c) * g;
                        }
                    }
                }
            };
            back_linear(dq, enc.wq[h], grad_enc.wq[h]);
            back_linear(dk, enc.wk[h], grad_enc.wk[h]);
            back_linear(dv, enc.wv[h], grad_enc.wv[h]);
        }

        // patch embedding
        for (std::size_t i = 0; i < np; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                const double g = d_embed(i, k);
                grad_enc.embed_b[k] += g;
                for (std::size_t j = 0; j < P; ++j) {
                    grad_enc.embed_w(k, j) += g * tp.patches(i, j);
                    grad_raw(n, i * P + j) += enc.embed_w(k, j) * g;
                }
            }
        }
    }
}

} // namespace shapex
