#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "progip/errors.hpp"
#include "progip/nn/adam.hpp"
#include "progip/nn/backbone.hpp"
#include "progip/nn/checkpoint.hpp"
#include "support/gradcheck.hpp"

using namespace progip;
using namespace progip::nn;

namespace {

using Dense = std::vector<std::vector<double>>;

BackboneConfig tiny_config() {
    BackboneConfig c;
    c.in_dim = 4;
    c.out_dim = 2;
    c.d_model = 8;
    c.tf_layers = 2;
    c.heads = 2;
    c.ffn_dim = 12;
    c.rnn_layers = 2;
    c.rnn_width = 3;
    c.decoder_hidden = 5;
    c.window = 3;
    c.global_decoder = false;
    return c;
}

// Randomizes every tensor (biases and norm gains included) so no path is trivially zero.
template <typename T>
void randomize(ParamSet<T>& p, std::uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& x : p.flat()) x = static_cast<T>(u(rng));
}

template <typename T>
Mat<T> random_input(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat<T> x(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) x(i, j) = static_cast<T>(n(rng));
    }
    return x;
}

// ---------------------------------------------------------------------------
// Straight-line dense oracle: one window at a time, explicit loops only.

struct Oracle {
    const BackboneConfig& cfg;
    const ParamSet<double>& w;

    double at(int id, int i, int j) const { return w.tensor(id)(i, j); }

    Dense affine(const Dense& x, int wid, int bid) const {
        const auto& info = w.layout().tensors[wid];
        Dense y(x.size(), std::vector<double>(info.cols));
        for (std::size_t t = 0; t < x.size(); ++t) {
            for (int o = 0; o < info.cols; ++o) {
                double s = at(bid, 0, o);
                for (int i = 0; i < info.rows; ++i) s += x[t][i] * at(wid, i, o);
                y[t][o] = s;
            }
        }
        return y;
    }

    Dense norm(const Dense& x, int gid, int bid) const {
        Dense y = x;
        for (std::size_t t = 0; t < x.size(); ++t) {
            const double n = static_cast<double>(x[t].size());
            double mu = 0;
            for (double v : x[t]) mu += v;
            mu /= n;
            double var = 0;
            for (double v : x[t]) var += (v - mu) * (v - mu);
            var /= n;
            for (std::size_t i = 0; i < x[t].size(); ++i) {
                y[t][i] = (x[t][i] - mu) / std::sqrt(var + cfg.ln_eps) * at(gid, 0, i) + at(bid, 0, i);
            }
        }
        return y;
    }

    static Dense add(const Dense& a, const Dense& b) {
        Dense y = a;
        for (std::size_t t = 0; t < a.size(); ++t) {
            for (std::size_t i = 0; i < a[t].size(); ++i) y[t][i] += b[t][i];
        }
        return y;
    }

    static Dense relu(Dense x) {
        for (auto& row : x) {
            for (auto& v : row) v = v > 0 ? v : 0;
        }
        return x;
    }

    Dense attention(const Dense& x, const AttnIds& a) const {
        const int m = cfg.window;
        const int d = cfg.d_model;
        const int dh = d / cfg.heads;
        const Dense qkv = affine(x, a.qkv_w, a.qkv_b);
        Dense out(m, std::vector<double>(d, 0.0));
        for (int h = 0; h < cfg.heads; ++h) {
            for (int i = 0; i < m; ++i) {
                std::vector<double> s(m);
                double mx = -1e300;
                for (int j = 0; j < m; ++j) {
                    double dot = 0;
                    for (int k = 0; k < dh; ++k) dot += qkv[i][h * dh + k] * qkv[j][d + h * dh + k];
                    s[j] = dot / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0;
                for (int j = 0; j < m; ++j) z += std::exp(s[j] - mx);
                for (int j = 0; j < m; ++j) {
                    const double p = std::exp(s[j] - mx) / z;
                    for (int k = 0; k < dh; ++k) out[i][h * dh + k] += p * qkv[j][2 * d + h * dh + k];
                }
            }
        }
        return affine(out, a.out_w, a.out_b);
    }

    Dense lstm(const Dense& x, const RnnIds& ids, bool reverse) const {
        const int m = cfg.window;
        const int r = cfg.rnn_width;
        const Dense gx = affine(x, ids.w_ih, ids.bias);
        std::vector<double> h(r, 0.0), c(r, 0.0);
        Dense out(m, std::vector<double>(r));
        for (int s = 0; s < m; ++s) {
            const int t = reverse ? m - 1 - s : s;
            std::vector<double> g = gx[t];
            for (int o = 0; o < 4 * r; ++o) {
                for (int k = 0; k < r; ++k) g[o] += h[k] * at(ids.w_hh, k, o);
            }
            for (int k = 0; k < r; ++k) {
                const double i = 1 / (1 + std::exp(-g[k]));
                const double f = 1 / (1 + std::exp(-g[r + k]));
                const double gg = std::tanh(g[2 * r + k]);
                const double o = 1 / (1 + std::exp(-g[3 * r + k]));
                c[k] = f * c[k] + i * gg;
                h[k] = o * std::tanh(c[k]);
            }
            out[t] = h;
        }
        return out;
    }

    Dense run(const Dense& input) const {
        const auto& L = w.layout();
        Dense x = affine(input, L.in_w, L.in_b);
        for (int t = 0; t < cfg.window; ++t) {
            for (int i = 0; i < cfg.d_model; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / cfg.d_model);
                x[t][i] += i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq);
            }
        }
        for (const auto& a : L.tf) {
            x = norm(add(x, attention(x, a)), a.ln1_g, a.ln1_b);
            x = norm(add(x, affine(relu(affine(x, a.ff1_w, a.ff1_b)), a.ff2_w, a.ff2_b)), a.ln2_g, a.ln2_b);
        }
        for (const auto& dirs : L.rnn) {
            const Dense f = lstm(x, dirs[0], false);
            const Dense b = lstm(x, dirs[1], true);
            for (int t = 0; t < cfg.window; ++t) {
                x[t] = f[t];
                x[t].insert(x[t].end(), b[t].begin(), b[t].end());
            }
        }
        Dense out(cfg.window);
        if (L.dec_global) {
            const Dense g = affine(relu(affine(x, L.dec_global->fc1_w, L.dec_global->fc1_b)), L.dec_global->fc2_w,
                                   L.dec_global->fc2_b);
            for (int t = 0; t < cfg.window; ++t) out[t] = g[t];
        }
        const Dense p = affine(relu(affine(x, L.dec_pose.fc1_w, L.dec_pose.fc1_b)), L.dec_pose.fc2_w, L.dec_pose.fc2_b);
        for (int t = 0; t < cfg.window; ++t) out[t].insert(out[t].end(), p[t].begin(), p[t].end());
        return out;
    }
};

void run_gradient_check(const BackboneConfig& cfg, std::uint64_t seed) {
    const auto res = progip::testing::gradient_check(cfg, seed);
    for (const auto& t : res.tensors) {
        INFO(t.name);
        CHECK(t.rel_error <= 1e-4);
    }
    CHECK(res.input_rel_error <= 1e-4);
}

}  // namespace

TEST_CASE("init_weights is deterministic and bounded") {
    BackboneConfig cfg = tiny_config();
    cfg.d_model = 16;
    cfg.rnn_width = 8;
    const auto a = init_weights<float>(cfg, 10);
    const auto b = init_weights<float>(cfg, 10);
    const auto c = init_weights<float>(cfg, 11);
    CHECK(std::equal(a.flat().begin(), a.flat().end(), b.flat().begin()));
    CHECK(!std::equal(a.flat().begin(), a.flat().end(), c.flat().begin()));

    for (int id = 0; id < static_cast<int>(a.layout().tensors.size()); ++id) {
        const auto& info = a.layout().tensors[id];
        const auto t = a.tensor(id);
        INFO(info.name);
        switch (info.init) {
            case TensorInfo::Init::Xavier:
                CHECK(t.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (info.rows + info.cols)));
                CHECK(t.cwiseAbs().maxCoeff() > 0.0f);
                break;
            case TensorInfo::Init::Orthogonal:
                for (int blk = 0; blk < 4; ++blk) {
                    const Eigen::MatrixXf q = t.block(0, blk * info.rows, info.rows, info.rows);
                    CHECK((q.transpose() * q - Eigen::MatrixXf::Identity(info.rows, info.rows)).cwiseAbs().maxCoeff() <
                          1e-5f);
                }
                break;
            case TensorInfo::Init::Zero: CHECK(t.cwiseAbs().maxCoeff() == 0.0f); break;
            case TensorInfo::Init::One: CHECK((t.array() == 1.0f).all()); break;
        }
    }
}

TEST_CASE("config validation") {
    BackboneConfig c = tiny_config();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ShapeMismatch);
    c = tiny_config();
    c.global_decoder = true;
    c.out_dim = 6;
    CHECK_THROWS_AS(c.validate(), ShapeMismatch);
    c = tiny_config();
    CHECK(BackboneConfig::from_json(c.to_json()) == c);
}

TEST_CASE("forward shapes and trivial cases") {
    SUBCASE("zero input and zero weights give zero output") {
        BackboneConfig cfg = tiny_config();
        cfg.global_decoder = true;
        cfg.out_dim = 9;
        ParamSet<float> w(cfg);
        const Mat<float> x = Mat<float>::Zero(cfg.window, cfg.in_dim);
        const Mat<float> y = backbone_forward(cfg, w, x, 1);
        CHECK(y.rows() == cfg.window);
        CHECK(y.cols() == 9);
        CHECK(y.cwiseAbs().maxCoeff() == 0.0f);
    }

    SUBCASE("full-size second-stage instance emits 40 x 42") {
        BackboneConfig cfg;
        cfg.in_dim = 165;
        cfg.out_dim = 42;
        const auto w = init_weights<float>(cfg, 10);
        const Mat<float> x = random_input<float>(40, 165, 1);
        const Mat<float> y = backbone_forward(cfg, w, x, 1);
        CHECK(y.rows() == 40);
        CHECK(y.cols() == 42);
        CHECK(y.allFinite());
    }

    SUBCASE("shape mismatch") {
        const BackboneConfig cfg = tiny_config();
        const auto w = init_weights<float>(cfg, 1);
        CHECK_THROWS_AS(backbone_forward(cfg, w, Mat<float>(Mat<float>::Zero(cfg.window, cfg.in_dim + 1)), 1), ShapeMismatch);
        CHECK_THROWS_AS(backbone_forward(cfg, w, Mat<float>(Mat<float>::Zero(cfg.window + 1, cfg.in_dim)), 1), ShapeMismatch);
    }
}

TEST_CASE("forward matches the straight-line oracle") {
    for (bool global : {false, true}) {
        BackboneConfig cfg = tiny_config();
        cfg.global_decoder = global;
        cfg.out_dim = global ? 8 : 2;
        auto w = init_weights<double>(cfg, 3);
        randomize(w, 4);
        const Mat<double> x = random_input<double>(cfg.window, cfg.in_dim, 5);
        const Mat<double> y = backbone_forward(cfg, w, x, 1);

        Dense in(cfg.window, std::vector<double>(cfg.in_dim));
        for (int t = 0; t < cfg.window; ++t) {
            for (int i = 0; i < cfg.in_dim; ++i) in[t][i] = x(t, i);
        }
        const Dense expect = Oracle{cfg, w}.run(in);
        for (int t = 0; t < cfg.window; ++t) {
            for (int o = 0; o < cfg.out_dim; ++o) CHECK(std::abs(y(t, o) - expect[t][o]) <= 1e-6);
        }

        // Float path agrees with the double oracle to single precision.
        const Mat<float> yf = backbone_forward(cfg, w.cast<float>(), x.cast<float>().eval(), 1);
        CHECK((yf.cast<double>() - y).cwiseAbs().maxCoeff() <= 1e-4);
    }
}

TEST_CASE("batched forward equals per-window forward") {
    BackboneConfig cfg = tiny_config();
    cfg.window = 5;
    const auto w = init_weights<double>(cfg, 6);
    const Mat<double> x = random_input<double>(3 * cfg.window, cfg.in_dim, 7);
    const Mat<double> y = backbone_forward(cfg, w, x, 3);
    for (int b = 0; b < 3; ++b) {
        const Mat<double> yb = backbone_forward(cfg, w, Mat<double>(x.middleRows(b * cfg.window, cfg.window)), 1);
        CHECK((yb - y.middleRows(b * cfg.window, cfg.window)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("forward is bit-deterministic") {
    BackboneConfig cfg = tiny_config();
    const auto w = init_weights<float>(cfg, 8);
    const Mat<float> x = random_input<float>(cfg.window, cfg.in_dim, 9);
    const Mat<float> a = backbone_forward(cfg, w, x, 1);
    const Mat<float> b = backbone_forward(cfg, w, x, 1);
    CHECK((a.array() == b.array()).all());
}

TEST_CASE("attention rows are distributions") {
    BackboneConfig cfg = tiny_config();
    cfg.window = 7;
    auto w = init_weights<double>(cfg, 12);
    randomize(w, 13, 1.0);
    ForwardCache<double> cache;
    backbone_forward(cfg, w, random_input<double>(2 * cfg.window, cfg.in_dim, 14), 2, &cache);
    for (const auto& layer : cache.tf) {
        CHECK(layer.probs.size() == static_cast<std::size_t>(2 * cfg.heads));
        for (const auto& p : layer.probs) {
            CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
            CHECK(p.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("forward LSTM direction is causal") {
    const int window = 6;
    const int r = 4;
    Mat<double> gx = random_input<double>(2 * window, 4 * r, 20);
    const Mat<double> whh = random_input<double>(r, 4 * r, 21);
    ForwardCache<double>::RnnDir base;
    detail::lstm_direction_forward<double>(gx, whh, 2, window, false, base);
    const int t0 = 2;
    for (int b = 0; b < 2; ++b) {
        for (int t = t0 + 1; t < window; ++t) gx.row(b * window + t).setRandom();
    }
    ForwardCache<double>::RnnDir changed;
    detail::lstm_direction_forward<double>(gx, whh, 2, window, false, changed);
    for (int b = 0; b < 2; ++b) {
        for (int t = 0; t <= t0; ++t) CHECK(base.h.row(b * window + t) == changed.h.row(b * window + t));
        CHECK(base.h.row(b * window + window - 1) != changed.h.row(b * window + window - 1));
    }
}

TEST_CASE("backward: zero upstream gives zero gradients") {
    const BackboneConfig cfg = tiny_config();
    const auto w = init_weights<float>(cfg, 30);
    ForwardCache<float> cache;
    const Mat<float> y = backbone_forward(cfg, w, random_input<float>(cfg.window, cfg.in_dim, 31), 1, &cache);
    Gradients g(cfg);
    backbone_backward(cfg, w, cache, Mat<float>(Mat<float>::Zero(y.rows(), y.cols())), g);
    for (float v : g.flat()) REQUIRE(v == 0.0f);
}

TEST_CASE("backward: every tensor matches central differences") {
    SUBCASE("post-norm, pose decoder only") { run_gradient_check(tiny_config(), 40); }
    SUBCASE("post-norm, both decoders") {
        BackboneConfig cfg = tiny_config();
        cfg.global_decoder = true;
        cfg.out_dim = 8;
        run_gradient_check(cfg, 50);
    }
    SUBCASE("pre-norm") {
        BackboneConfig cfg = tiny_config();
        cfg.norm = NormPlacement::Pre;
        run_gradient_check(cfg, 60);
    }
}

TEST_CASE("backward: linear-only config matches the least-squares gradient") {
    BackboneConfig cfg = tiny_config();
    cfg.tf_layers = 0;
    cfg.rnn_layers = 0;
    cfg.window = 4;
    auto w = init_weights<double>(cfg, 70);
    randomize(w, 71);
    const Mat<double> x = random_input<double>(cfg.window, cfg.in_dim, 72);
    const Mat<double> target = random_input<double>(cfg.window, cfg.out_dim, 73);

    ForwardCache<double> cache;
    const Mat<double> y = backbone_forward(cfg, w, x, 1, &cache);
    ParamSet<double> g(w.layout_ptr(), std::vector<double>(w.size(), 0.0));
    backbone_backward(cfg, w, cache, Mat<double>(2.0 * (y - target)), g);

    // L = ||A W + b - Y||^2 with A the decoder's hidden activations.
    const auto& ids = w.layout().dec_pose;
    const Mat<double>& a = cache.dec_pose.act;
    const Mat<double> resid = (a * w.tensor(ids.fc2_w)).rowwise() + w.tensor(ids.fc2_b).row(0) - target;
    const Mat<double> dw = 2.0 * a.transpose() * resid;
    const Mat<double> db = 2.0 * resid.colwise().sum();
    CHECK((g.tensor(ids.fc2_w) - dw).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((g.tensor(ids.fc2_b) - db).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("checkpoint round trip") {
    const BackboneConfig cfg = tiny_config();
    const auto w = init_weights<float>(cfg, 80);
    const auto dir = std::filesystem::temp_directory_path() / "progip_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "net.ckpt";
    save_checkpoint(path, cfg, w);
    const auto [cfg2, w2] = load_checkpoint(path);
    CHECK(cfg2 == cfg);
    CHECK(std::equal(w.flat().begin(), w.flat().end(), w2.flat().begin(), w2.flat().end()));

    // Truncated blob.
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    // Bad magic.
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOTACKPTxxxxxxxxxxxx";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("adam") {
    SUBCASE("first step on one parameter") {
        const AdamConfig cfg{1e-3, 0.9, 0.999, 1e-8};
        Adam opt(1, cfg);
        std::vector<float> p = {0.5f};
        const std::vector<float> g = {0.2f};
        opt.step(p, g);
        // m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        const double expect = 0.5 - 1e-3 * 0.2 / (0.2 + 1e-8);
        CHECK(p[0] == doctest::Approx(expect).epsilon(1e-6));
    }
    SUBCASE("second step by hand") {
        const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
        Adam opt(1, cfg);
        std::vector<float> p = {1.0f};
        opt.step(p, std::vector<float>{1.0f});
        opt.step(p, std::vector<float>{-0.5f});
        const double m = 0.9 * 0.1 * 1.0 + 0.1 * -0.5;
        const double v = 0.999 * 0.001 * 1.0 + 0.001 * 0.25;
        const double mh = m / (1 - 0.81);
        const double vh = v / (1 - 0.999 * 0.999);
        const double expect = 1.0 - 0.01 - 0.01 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p[0] == doctest::Approx(expect).epsilon(1e-5));
    }
    SUBCASE("zero learning rate leaves parameters untouched") {
        Adam opt(3, AdamConfig{0.0});
        std::vector<float> p = {1.5f, -2.25f, 3.0f};
        const auto before = p;
        opt.step(p, std::vector<float>{0.3f, -0.1f, 9.0f});
        CHECK(p == before);
    }
}
