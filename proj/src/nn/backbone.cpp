#include "progip/nn/backbone.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/QR>

#include "progip/errors.hpp"

namespace progip::nn {

// ---------------------------------------------------------------------------
// Config

void BackboneConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ShapeMismatch("backbone config: " + msg); };
    if (in_dim <= 0 || out_dim <= 0 || d_model <= 0 || window <= 0) fail("dimensions must be positive");
    if (tf_layers < 0 || rnn_layers < 0) fail("layer counts must be non-negative");
    if (tf_layers > 0 && (heads <= 0 || d_model % heads != 0)) fail("d_model must be divisible by heads");
    if (tf_layers > 0 && ffn_dim <= 0) fail("ffn_dim must be positive");
    if (rnn_layers > 0 && rnn_width <= 0) fail("rnn_width must be positive");
    if (decoder_hidden <= 0) fail("decoder_hidden must be positive");
    if (global_decoder && out_dim <= 6) fail("out_dim must exceed the 6 pelvis outputs");
}

nlohmann::json BackboneConfig::to_json() const {
    return {{"in_dim", in_dim},
            {"out_dim", out_dim},
            {"d_model", d_model},
            {"tf_layers", tf_layers},
            {"heads", heads},
            {"ffn_dim", ffn_dim},
            {"rnn_layers", rnn_layers},
            {"rnn_width", rnn_width},
            {"decoder_hidden", decoder_hidden},
            {"window", window},
            {"global_decoder", global_decoder},
            {"norm", norm == NormPlacement::Post ? "post" : "pre"},
            {"ln_eps", ln_eps}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.in_dim = j.at("in_dim").get<int>();
    c.out_dim = j.at("out_dim").get<int>();
    c.d_model = j.value("d_model", c.d_model);
    c.tf_layers = j.value("tf_layers", c.tf_layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.rnn_layers = j.value("rnn_layers", c.rnn_layers);
    c.rnn_width = j.value("rnn_width", c.rnn_width);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    c.window = j.value("window", c.window);
    c.global_decoder = j.value("global_decoder", c.global_decoder);
    const std::string norm = j.value("norm", std::string("post"));
    if (norm == "post") {
        c.norm = NormPlacement::Post;
    } else if (norm == "pre") {
        c.norm = NormPlacement::Pre;
    } else {
        throw FormatError("backbone config: unknown norm placement " + norm);
    }
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Layout

int ParamLayout::add(std::string name, int rows, int cols, TensorInfo::Init init) {
    tensors.push_back(TensorInfo{std::move(name), rows, cols, total, init});
    total += static_cast<std::size_t>(rows) * cols;
    return static_cast<int>(tensors.size()) - 1;
}

ParamLayout::ParamLayout(const BackboneConfig& cfg) {
    using I = TensorInfo::Init;
    cfg.validate();
    const int d = cfg.d_model;
    in_w = add("in_proj.weight", cfg.in_dim, d, I::Xavier);
    in_b = add("in_proj.bias", 1, d, I::Zero);
    for (int l = 0; l < cfg.tf_layers; ++l) {
        const std::string p = "tf" + std::to_string(l) + ".";
        AttnIds a{};
        a.qkv_w = add(p + "qkv.weight", d, 3 * d, I::Xavier);
        a.qkv_b = add(p + "qkv.bias", 1, 3 * d, I::Zero);
        a.out_w = add(p + "out.weight", d, d, I::Xavier);
        a.out_b = add(p + "out.bias", 1, d, I::Zero);
        a.ln1_g = add(p + "ln1.gamma", 1, d, I::One);
        a.ln1_b = add(p + "ln1.beta", 1, d, I::Zero);
        a.ff1_w = add(p + "ff1.weight", d, cfg.ffn_dim, I::Xavier);
        a.ff1_b = add(p + "ff1.bias", 1, cfg.ffn_dim, I::Zero);
        a.ff2_w = add(p + "ff2.weight", cfg.ffn_dim, d, I::Xavier);
        a.ff2_b = add(p + "ff2.bias", 1, d, I::Zero);
        a.ln2_g = add(p + "ln2.gamma", 1, d, I::One);
        a.ln2_b = add(p + "ln2.beta", 1, d, I::Zero);
        tf.push_back(a);
    }
    if (cfg.tf_layers > 0 && cfg.norm == NormPlacement::Pre) {
        final_ln_g = add("tf.final_ln.gamma", 1, d, I::One);
        final_ln_b = add("tf.final_ln.beta", 1, d, I::Zero);
    }
    int rnn_in = d;
    const int r = cfg.rnn_width;
    for (int l = 0; l < cfg.rnn_layers; ++l) {
        std::array<RnnIds, 2> dirs{};
        for (int dir = 0; dir < 2; ++dir) {
            const std::string p = "rnn" + std::to_string(l) + (dir == 0 ? ".fwd." : ".bwd.");
            dirs[dir].w_ih = add(p + "w_ih", rnn_in, 4 * r, I::Xavier);
            dirs[dir].w_hh = add(p + "w_hh", r, 4 * r, I::Orthogonal);
            dirs[dir].bias = add(p + "bias", 1, 4 * r, I::Zero);
        }
        rnn.push_back(dirs);
        rnn_in = 2 * r;
    }
    const int enc = cfg.encoder_dim();
    const int h = cfg.decoder_hidden;
    if (cfg.global_decoder) {
        DecoderIds g{};
        g.fc1_w = add("dec_global.fc1.weight", enc, h, I::Xavier);
        g.fc1_b = add("dec_global.fc1.bias", 1, h, I::Zero);
        g.fc2_w = add("dec_global.fc2.weight", h, 6, I::Xavier);
        g.fc2_b = add("dec_global.fc2.bias", 1, 6, I::Zero);
        dec_global = g;
    }
    dec_pose.fc1_w = add("dec_pose.fc1.weight", enc, h, I::Xavier);
    dec_pose.fc1_b = add("dec_pose.fc1.bias", 1, h, I::Zero);
    dec_pose.fc2_w = add("dec_pose.fc2.weight", h, cfg.pose_out_dim(), I::Xavier);
    dec_pose.fc2_b = add("dec_pose.fc2.bias", 1, cfg.pose_out_dim(), I::Zero);
}

// ---------------------------------------------------------------------------
// ParamSet

template <typename T>
ParamSet<T>::ParamSet(const BackboneConfig& cfg)
    : layout_(std::make_shared<const ParamLayout>(cfg)), data_(layout_->total, T(0)) {}

template <typename T>
ParamSet<T>::ParamSet(std::shared_ptr<const ParamLayout> layout, std::vector<T> data)
    : layout_(std::move(layout)), data_(data.begin(), data.end()) {
    if (data_.size() != layout_->total) {
        throw ShapeMismatch("parameter blob size differs from layout");
    }
}

template <typename T>
MatMap<T> ParamSet<T>::tensor(int id) {
    const auto& t = layout_->tensors.at(id);
    return MatMap<T>(data_.data() + t.offset, t.rows, t.cols);
}

template <typename T>
ConstMatMap<T> ParamSet<T>::tensor(int id) const {
    const auto& t = layout_->tensors.at(id);
    return ConstMatMap<T>(data_.data() + t.offset, t.rows, t.cols);
}

template <typename T>
void ParamSet<T>::set_zero() {
    std::fill(data_.begin(), data_.end(), T(0));
}

template <typename T>
template <typename U>
ParamSet<U> ParamSet<T>::cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return ParamSet<U>(layout_, std::move(out));
}

// ---------------------------------------------------------------------------
// Init

namespace {

// Platform-independent uniform in [0, 1) from 53 random bits.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

template <typename T>
ParamSet<T> init_weights(const BackboneConfig& cfg, std::uint64_t seed) {
    ParamSet<T> p(cfg);
    std::mt19937_64 rng(seed);
    for (int id = 0; id < static_cast<int>(p.layout().tensors.size()); ++id) {
        const auto& info = p.layout().tensors[id];
        auto w = p.tensor(id);
        switch (info.init) {
            case TensorInfo::Init::Zero: w.setZero(); break;
            case TensorInfo::Init::One: w.setOnes(); break;
            case TensorInfo::Init::Xavier: {
                const double bound = std::sqrt(6.0 / (info.rows + info.cols));
                for (int i = 0; i < info.rows; ++i) {
                    for (int j = 0; j < info.cols; ++j) {
                        w(i, j) = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
                    }
                }
                break;
            }
            case TensorInfo::Init::Orthogonal: {
                // rows x (4 * rows): one square orthogonal block per gate.
                const int n = info.rows;
                for (int blk = 0; blk < info.cols / n; ++blk) {
                    Eigen::MatrixXd a(n, n);
                    for (int i = 0; i < n; ++i) {
                        for (int j = 0; j < n; ++j) a(i, j) = standard_normal(rng);
                    }
                    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
                    Eigen::MatrixXd q = qr.householderQ();
                    const Eigen::MatrixXd rmat = qr.matrixQR().template triangularView<Eigen::Upper>();
                    for (int j = 0; j < n; ++j) {
                        if (rmat(j, j) < 0) q.col(j) = -q.col(j);
                    }
                    w.block(0, blk * n, n, n) = q.cast<T>();
                }
                break;
            }
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Building blocks

template <typename T>
Mat<T> positional_encoding(int window, int d_model) {
    Mat<T> pe(window, d_model);
    for (int t = 0; t < window; ++t) {
        for (int i = 0; i < d_model; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
            pe(t, i) = static_cast<T>(std::sin(t * freq));
            if (i + 1 < d_model) pe(t, i + 1) = static_cast<T>(std::cos(t * freq));
        }
    }
    return pe;
}

namespace {

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T, typename W, typename B>
Mat<T> linear(const Mat<T>& x, const W& w, const B& b) {
    Mat<T> y(x.rows(), w.cols());
    y.noalias() = x * w;
    y.rowwise() += b.row(0);
    return y;
}

// dW += x^T dy; db += colsum(dy); returns dx = dy W^T when requested.
template <typename T, typename W>
void linear_backward(const Mat<T>& x, const W& w, const Mat<T>& dy, MatMap<T> dw, MatMap<T> db, Mat<T>* dx) {
    dw.noalias() += x.transpose() * dy;
    db.row(0) += dy.colwise().sum();
    if (dx != nullptr) {
        dx->resize(dy.rows(), w.rows());
        dx->noalias() = dy * w.transpose();
    }
}

template <typename T, typename G, typename B>
Mat<T> layer_norm(const Mat<T>& x, const G& gamma, const B& beta, double eps, typename ForwardCache<T>::Ln& c) {
    const Eigen::Index d = x.cols();
    c.xhat.resize(x.rows(), d);
    c.inv_std.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T mu = x.row(r).mean();
        const auto centered = (x.row(r).array() - mu).matrix();
        const T var = centered.squaredNorm() / static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        c.inv_std(r) = inv;
        c.xhat.row(r) = centered * inv;
    }
    Mat<T> y = c.xhat.array().rowwise() * gamma.row(0).array();
    y.rowwise() += beta.row(0);
    return y;
}

template <typename T, typename G>
Mat<T> layer_norm_backward(const Mat<T>& dy, const G& gamma, const typename ForwardCache<T>::Ln& c, MatMap<T> dgamma,
                           MatMap<T> dbeta) {
    dgamma.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    dbeta.row(0) += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * gamma.row(0).array();
    const T d = static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T s1 = dxhat.row(r).sum();
        const T s2 = dxhat.row(r).dot(c.xhat.row(r));
        dx.row(r) = (c.inv_std(r) / d) * (d * dxhat.row(r).array() - s1 - c.xhat.row(r).array() * s2).matrix();
    }
    return dx;
}

template <typename T>
void attention_forward(const BackboneConfig& cfg, int batch, typename ForwardCache<T>::Tf& c) {
    const int m = cfg.window;
    const int d = cfg.d_model;
    const int dh = d / cfg.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    c.concat.resize(static_cast<Eigen::Index>(batch) * m, d);
    c.probs.resize(static_cast<std::size_t>(batch) * cfg.heads);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            const auto q = c.qkv.block(b * m, h * dh, m, dh);
            const auto k = c.qkv.block(b * m, d + h * dh, m, dh);
            const auto v = c.qkv.block(b * m, 2 * d + h * dh, m, dh);
            Mat<T>& a = c.probs[b * cfg.heads + h];
            a.resize(m, m);
            a.noalias() = q * k.transpose();
            a *= scale;
            for (int i = 0; i < m; ++i) {
                const T mx = a.row(i).maxCoeff();
                a.row(i) = (a.row(i).array() - mx).exp().matrix();
                a.row(i) /= a.row(i).sum();
            }
            c.concat.block(b * m, h * dh, m, dh).noalias() = a * v;
        }
    }
}

template <typename T>
Mat<T> attention_backward(const BackboneConfig& cfg, int batch, const typename ForwardCache<T>::Tf& c,
                          const Mat<T>& d_concat) {
    const int m = cfg.window;
    const int d = cfg.d_model;
    const int dh = d / cfg.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> d_qkv(c.qkv.rows(), c.qkv.cols());
    Mat<T> da(m, m);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            const auto q = c.qkv.block(b * m, h * dh, m, dh);
            const auto k = c.qkv.block(b * m, d + h * dh, m, dh);
            const auto v = c.qkv.block(b * m, 2 * d + h * dh, m, dh);
            const Mat<T>& a = c.probs[b * cfg.heads + h];
            const auto d_o = d_concat.block(b * m, h * dh, m, dh);
            // O = A V
            d_qkv.block(b * m, 2 * d + h * dh, m, dh).noalias() = a.transpose() * d_o;
            da.noalias() = d_o * v.transpose();
            // softmax rows
            for (int i = 0; i < m; ++i) {
                const T dot = da.row(i).dot(a.row(i));
                da.row(i) = (a.row(i).array() * (da.row(i).array() - dot)).matrix();
            }
            da *= scale;
            // S = Q K^T
            d_qkv.block(b * m, h * dh, m, dh).noalias() = da * k;
            d_qkv.block(b * m, d + h * dh, m, dh).noalias() = da.transpose() * q;
        }
    }
    return d_qkv;
}

template <typename T>
void lstm_direction_backward(const Mat<T>& d_h, const Mat<T>& w_hh, int batch, int window, bool reverse,
                             const typename ForwardCache<T>::RnnDir& c, Mat<T>& d_gx) {
    const int r = static_cast<int>(w_hh.rows());
    d_gx.resize(static_cast<Eigen::Index>(batch) * window, 4 * r);
    Mat<T> dh_next = Mat<T>::Zero(batch, r);
    Mat<T> dc_next = Mat<T>::Zero(batch, r);
    Mat<T> dg(batch, 4 * r);
    Mat<T> dh(batch, r);
    for (int s = window - 1; s >= 0; --s) {
        const int t = reverse ? window - 1 - s : s;
        const int tp = reverse ? t + 1 : t - 1;
        const auto rows = Eigen::seqN(t, batch, window);
        dh = d_h(rows, Eigen::all) + dh_next;
        for (int b = 0; b < batch; ++b) {
            const Eigen::Index row = static_cast<Eigen::Index>(b) * window + t;
            for (int k = 0; k < r; ++k) {
                const T ig = c.gates(row, k);
                const T fg = c.gates(row, r + k);
                const T gg = c.gates(row, 2 * r + k);
                const T og = c.gates(row, 3 * r + k);
                const T tc = std::tanh(c.c(row, k));
                const T c_prev = s > 0 ? c.c(static_cast<Eigen::Index>(b) * window + tp, k) : T(0);
                const T dhv = dh(b, k);
                const T d_o = dhv * tc;
                const T dc = dc_next(b, k) + dhv * og * (T(1) - tc * tc);
                dg(b, k) = dc * gg * ig * (T(1) - ig);
                dg(b, r + k) = dc * c_prev * fg * (T(1) - fg);
                dg(b, 2 * r + k) = dc * ig * (T(1) - gg * gg);
                dg(b, 3 * r + k) = d_o * og * (T(1) - og);
                dc_next(b, k) = dc * fg;
            }
        }
        d_gx(rows, Eigen::all) = dg;
        dh_next.noalias() = dg * w_hh.transpose();
    }
}

}  // namespace

namespace detail {

template <typename T>
void lstm_direction_forward(const Mat<T>& gx, const Mat<T>& w_hh, int batch, int window, bool reverse,
                            typename ForwardCache<T>::RnnDir& out) {
    const int r = static_cast<int>(w_hh.rows());
    const Eigen::Index n = static_cast<Eigen::Index>(batch) * window;
    out.gates.resize(n, 4 * r);
    out.c.resize(n, r);
    out.h.resize(n, r);
    Mat<T> h_prev = Mat<T>::Zero(batch, r);
    Mat<T> c_prev = Mat<T>::Zero(batch, r);
    Mat<T> g(batch, 4 * r);
    for (int s = 0; s < window; ++s) {
        const int t = reverse ? window - 1 - s : s;
        const auto rows = Eigen::seqN(t, batch, window);
        g = gx(rows, Eigen::all);
        g.noalias() += h_prev * w_hh;
        for (int b = 0; b < batch; ++b) {
            for (int k = 0; k < r; ++k) {
                const T ig = sigmoid(g(b, k));
                const T fg = sigmoid(g(b, r + k));
                const T gg = std::tanh(g(b, 2 * r + k));
                const T og = sigmoid(g(b, 3 * r + k));
                const T cv = fg * c_prev(b, k) + ig * gg;
                g(b, k) = ig;
                g(b, r + k) = fg;
                g(b, 2 * r + k) = gg;
                g(b, 3 * r + k) = og;
                c_prev(b, k) = cv;
                h_prev(b, k) = og * std::tanh(cv);
            }
        }
        out.gates(rows, Eigen::all) = g;
        out.c(rows, Eigen::all) = c_prev;
        out.h(rows, Eigen::all) = h_prev;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward

template <typename T>
Mat<T> backbone_forward(const BackboneConfig& cfg, const ParamSet<T>& w, const Mat<T>& input, int batch,
                        ForwardCache<T>* cache) {
    const auto& L = w.layout();
    if (batch <= 0 || input.rows() != static_cast<Eigen::Index>(batch) * cfg.window || input.cols() != cfg.in_dim) {
        throw ShapeMismatch("backbone_forward: expected (" + std::to_string(batch) + "*" +
                            std::to_string(cfg.window) + ") x " + std::to_string(cfg.in_dim) + " input, got " +
                            std::to_string(input.rows()) + " x " + std::to_string(input.cols()));
    }
    ForwardCache<T> local;
    ForwardCache<T>& c = cache != nullptr ? *cache : local;
    c.batch = batch;
    c.input = input;
    const int m = cfg.window;

    c.embedded = linear<T>(input, w.tensor(L.in_w), w.tensor(L.in_b));
    const Mat<T> pe = positional_encoding<T>(m, cfg.d_model);
    for (int b = 0; b < batch; ++b) c.embedded.middleRows(b * m, m) += pe;

    Mat<T> x = c.embedded;
    c.tf.resize(cfg.tf_layers);
    for (int l = 0; l < cfg.tf_layers; ++l) {
        const AttnIds& a = L.tf[l];
        auto& tc = c.tf[l];
        tc.in = x;
        if (cfg.norm == NormPlacement::Post) {
            tc.attn_in = x;
        } else {
            tc.attn_in = layer_norm<T>(x, w.tensor(a.ln1_g), w.tensor(a.ln1_b), cfg.ln_eps, tc.ln1);
        }
        tc.qkv = linear<T>(tc.attn_in, w.tensor(a.qkv_w), w.tensor(a.qkv_b));
        attention_forward<T>(cfg, batch, tc);
        Mat<T> r1 = linear<T>(tc.concat, w.tensor(a.out_w), w.tensor(a.out_b));
        r1 += x;
        if (cfg.norm == NormPlacement::Post) {
            tc.h1 = layer_norm<T>(r1, w.tensor(a.ln1_g), w.tensor(a.ln1_b), cfg.ln_eps, tc.ln1);
            tc.ffn_in = tc.h1;
        } else {
            tc.h1 = std::move(r1);
            tc.ffn_in = layer_norm<T>(tc.h1, w.tensor(a.ln2_g), w.tensor(a.ln2_b), cfg.ln_eps, tc.ln2);
        }
        tc.ff_pre = linear<T>(tc.ffn_in, w.tensor(a.ff1_w), w.tensor(a.ff1_b));
        tc.ff_act = tc.ff_pre.cwiseMax(T(0));
        Mat<T> r2 = linear<T>(tc.ff_act, w.tensor(a.ff2_w), w.tensor(a.ff2_b));
        r2 += tc.h1;
        if (cfg.norm == NormPlacement::Post) {
            x = layer_norm<T>(r2, w.tensor(a.ln2_g), w.tensor(a.ln2_b), cfg.ln_eps, tc.ln2);
        } else {
            x = std::move(r2);
        }
    }
    if (L.final_ln_g >= 0) {
        x = layer_norm<T>(x, w.tensor(L.final_ln_g), w.tensor(L.final_ln_b), cfg.ln_eps, c.final_ln);
    }
    c.tf_out = x;

    c.rnn_in.resize(cfg.rnn_layers);
    c.rnn.resize(cfg.rnn_layers);
    for (int l = 0; l < cfg.rnn_layers; ++l) {
        c.rnn_in[l] = x;
        Mat<T> y(x.rows(), 2 * cfg.rnn_width);
        for (int dir = 0; dir < 2; ++dir) {
            const RnnIds& ids = L.rnn[l][dir];
            const Mat<T> gx = linear<T>(x, w.tensor(ids.w_ih), w.tensor(ids.bias));
            const Mat<T> whh = w.tensor(ids.w_hh);
            detail::lstm_direction_forward<T>(gx, whh, batch, m, dir == 1, c.rnn[l][dir]);
            y.middleCols(dir * cfg.rnn_width, cfg.rnn_width) = c.rnn[l][dir].h;
        }
        x = std::move(y);
    }
    c.encoded = x;

    Mat<T> out(x.rows(), cfg.out_dim);
    int col = 0;
    if (L.dec_global) {
        const DecoderIds& g = *L.dec_global;
        c.dec_global.pre = linear<T>(x, w.tensor(g.fc1_w), w.tensor(g.fc1_b));
        c.dec_global.act = c.dec_global.pre.cwiseMax(T(0));
        out.leftCols(6) = linear<T>(c.dec_global.act, w.tensor(g.fc2_w), w.tensor(g.fc2_b));
        col = 6;
    }
    const DecoderIds& p = L.dec_pose;
    c.dec_pose.pre = linear<T>(x, w.tensor(p.fc1_w), w.tensor(p.fc1_b));
    c.dec_pose.act = c.dec_pose.pre.cwiseMax(T(0));
    out.rightCols(cfg.out_dim - col) = linear<T>(c.dec_pose.act, w.tensor(p.fc2_w), w.tensor(p.fc2_b));
    return out;
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
void backbone_backward(const BackboneConfig& cfg, const ParamSet<T>& w, const ForwardCache<T>& c, const Mat<T>& d_out,
                       ParamSet<T>& g, Mat<T>* d_input) {
    const auto& L = w.layout();
    const int batch = c.batch;
    const int m = cfg.window;
    if (d_out.rows() != c.encoded.rows() || d_out.cols() != cfg.out_dim) {
        throw ShapeMismatch("backbone_backward: upstream gradient shape differs from forward output");
    }

    // Decoders
    Mat<T> d_x = Mat<T>::Zero(c.encoded.rows(), c.encoded.cols());
    Mat<T> tmp;
    int col = 0;
    auto decoder_back = [&](const DecoderIds& ids, const typename ForwardCache<T>::Dec& dc, const Mat<T>& dy) {
        Mat<T> d_act;
        linear_backward<T>(dc.act, w.tensor(ids.fc2_w), dy, g.tensor(ids.fc2_w), g.tensor(ids.fc2_b), &d_act);
        d_act = (dc.pre.array() > T(0)).select(d_act, T(0));
        linear_backward<T>(c.encoded, w.tensor(ids.fc1_w), d_act, g.tensor(ids.fc1_w), g.tensor(ids.fc1_b), &tmp);
        d_x += tmp;
    };
    if (L.dec_global) {
        decoder_back(*L.dec_global, c.dec_global, d_out.leftCols(6));
        col = 6;
    }
    decoder_back(L.dec_pose, c.dec_pose, d_out.rightCols(cfg.out_dim - col));

    // biLSTM, top layer first
    for (int l = cfg.rnn_layers - 1; l >= 0; --l) {
        const Mat<T>& u = c.rnn_in[l];
        Mat<T> d_u = Mat<T>::Zero(u.rows(), u.cols());
        for (int dir = 0; dir < 2; ++dir) {
            const RnnIds& ids = L.rnn[l][dir];
            const auto& rc = c.rnn[l][dir];
            const Mat<T> whh = w.tensor(ids.w_hh);
            const Mat<T> d_h = d_x.middleCols(dir * cfg.rnn_width, cfg.rnn_width);
            Mat<T> d_gx;
            lstm_direction_backward<T>(d_h, whh, batch, m, dir == 1, rc, d_gx);
            // Recurrent weight gradient: previous hidden state for every step.
            Mat<T> h_prev = Mat<T>::Zero(rc.h.rows(), rc.h.cols());
            for (int b = 0; b < batch; ++b) {
                if (dir == 0) {
                    h_prev.middleRows(b * m + 1, m - 1) = rc.h.middleRows(b * m, m - 1);
                } else {
                    h_prev.middleRows(b * m, m - 1) = rc.h.middleRows(b * m + 1, m - 1);
                }
            }
            g.tensor(ids.w_hh).noalias() += h_prev.transpose() * d_gx;
            linear_backward<T>(u, w.tensor(ids.w_ih), d_gx, g.tensor(ids.w_ih), g.tensor(ids.bias), &tmp);
            d_u += tmp;
        }
        d_x = std::move(d_u);
    }

    // Transformer, last layer first
    if (L.final_ln_g >= 0) {
        d_x = layer_norm_backward<T>(d_x, w.tensor(L.final_ln_g), c.final_ln, g.tensor(L.final_ln_g),
                                     g.tensor(L.final_ln_b));
    }
    for (int l = cfg.tf_layers - 1; l >= 0; --l) {
        const AttnIds& a = L.tf[l];
        const auto& tc = c.tf[l];
        Mat<T> d_r2;
        if (cfg.norm == NormPlacement::Post) {
            d_r2 = layer_norm_backward<T>(d_x, w.tensor(a.ln2_g), tc.ln2, g.tensor(a.ln2_g), g.tensor(a.ln2_b));
        } else {
            d_r2 = d_x;
        }
        // r2 = h1 + FFN(ffn_in)
        Mat<T> d_act;
        linear_backward<T>(tc.ff_act, w.tensor(a.ff2_w), d_r2, g.tensor(a.ff2_w), g.tensor(a.ff2_b), &d_act);
        d_act = (tc.ff_pre.array() > T(0)).select(d_act, T(0));
        Mat<T> d_ffn_in;
        linear_backward<T>(tc.ffn_in, w.tensor(a.ff1_w), d_act, g.tensor(a.ff1_w), g.tensor(a.ff1_b), &d_ffn_in);
        Mat<T> d_h1;
        Mat<T> d_r1;
        if (cfg.norm == NormPlacement::Post) {
            d_h1 = d_r2 + d_ffn_in;
            d_r1 = layer_norm_backward<T>(d_h1, w.tensor(a.ln1_g), tc.ln1, g.tensor(a.ln1_g), g.tensor(a.ln1_b));
        } else {
            d_h1 = d_r2 + layer_norm_backward<T>(d_ffn_in, w.tensor(a.ln2_g), tc.ln2, g.tensor(a.ln2_g),
                                                 g.tensor(a.ln2_b));
            d_r1 = std::move(d_h1);
        }
        // r1 = in + Attn(attn_in)
        Mat<T> d_concat;
        linear_backward<T>(tc.concat, w.tensor(a.out_w), d_r1, g.tensor(a.out_w), g.tensor(a.out_b), &d_concat);
        const Mat<T> d_qkv = attention_backward<T>(cfg, batch, tc, d_concat);
        Mat<T> d_attn_in;
        linear_backward<T>(tc.attn_in, w.tensor(a.qkv_w), d_qkv, g.tensor(a.qkv_w), g.tensor(a.qkv_b), &d_attn_in);
        if (cfg.norm == NormPlacement::Post) {
            d_x = d_r1 + d_attn_in;
        } else {
            d_x = d_r1 + layer_norm_backward<T>(d_attn_in, w.tensor(a.ln1_g), tc.ln1, g.tensor(a.ln1_g),
                                                g.tensor(a.ln1_b));
        }
    }

    // Input projection (positional encoding is constant)
    linear_backward<T>(c.input, w.tensor(L.in_w), d_x, g.tensor(L.in_w), g.tensor(L.in_b), d_input);
}

// ---------------------------------------------------------------------------
// Explicit instantiations

template class ParamSet<float>;
template class ParamSet<double>;
template ParamSet<double> ParamSet<float>::cast<double>() const;
template ParamSet<float> ParamSet<double>::cast<float>() const;
template ParamSet<float> ParamSet<float>::cast<float>() const;
template ParamSet<double> ParamSet<double>::cast<double>() const;
template ParamSet<float> init_weights<float>(const BackboneConfig&, std::uint64_t);
template ParamSet<double> init_weights<double>(const BackboneConfig&, std::uint64_t);
template Mat<float> positional_encoding<float>(int, int);
template Mat<double> positional_encoding<double>(int, int);
template Mat<float> backbone_forward<float>(const BackboneConfig&, const ParamSet<float>&, const Mat<float>&, int,
                                            ForwardCache<float>*);
template Mat<double> backbone_forward<double>(const BackboneConfig&, const ParamSet<double>&, const Mat<double>&, int,
                                              ForwardCache<double>*);
template void backbone_backward<float>(const BackboneConfig&, const ParamSet<float>&, const ForwardCache<float>&,
                                       const Mat<float>&, ParamSet<float>&, Mat<float>*);
template void backbone_backward<double>(const BackboneConfig&, const ParamSet<double>&, const ForwardCache<double>&,
                                        const Mat<double>&, ParamSet<double>&, Mat<double>*);
template void detail::lstm_direction_forward<float>(const Mat<float>&, const Mat<float>&, int, int, bool,
                                                    ForwardCache<float>::RnnDir&);
template void detail::lstm_direction_forward<double>(const Mat<double>&, const Mat<double>&, int, int, bool,
                                                     ForwardCache<double>::RnnDir&);

}  // namespace progip::nn
