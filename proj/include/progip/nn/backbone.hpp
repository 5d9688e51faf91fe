#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace progip::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

enum class NormPlacement { Post, Pre };

/// One encoder/decoder network instance. Defaults are the full-size network.
struct BackboneConfig {
    int in_dim = 45;
    int out_dim = 96;
    int d_model = 256;
    int tf_layers = 3;
    int heads = 8;
    int ffn_dim = 1024;
    int rnn_layers = 2;
    int rnn_width = 256;
    int decoder_hidden = 256;
    int window = 40;
    /// When false only the pose decoder exists and it emits all out_dim values.
    bool global_decoder = true;
    NormPlacement norm = NormPlacement::Post;
    double ln_eps = 1e-5;

    void validate() const;
    [[nodiscard]] int encoder_dim() const { return rnn_layers > 0 ? 2 * rnn_width : d_model; }
    [[nodiscard]] int pose_out_dim() const { return global_decoder ? out_dim - 6 : out_dim; }

    [[nodiscard]] nlohmann::json to_json() const;
    static BackboneConfig from_json(const nlohmann::json& j);
    bool operator==(const BackboneConfig&) const = default;
};

struct TensorInfo {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;  // in elements
    enum class Init { Xavier, Orthogonal, Zero, One } init = Init::Zero;
};

struct AttnIds {
    int qkv_w, qkv_b, out_w, out_b, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
};
struct RnnIds {
    int w_ih, w_hh, bias;
};
struct DecoderIds {
    int fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Deterministic flat layout of every learnable tensor for a config.
struct ParamLayout {
    explicit ParamLayout(const BackboneConfig& cfg);

    std::vector<TensorInfo> tensors;
    std::size_t total = 0;

    int in_w = -1, in_b = -1;
    std::vector<AttnIds> tf;
    int final_ln_g = -1, final_ln_b = -1;  // pre-norm only
    std::vector<std::array<RnnIds, 2>> rnn;  // [layer][direction]
    std::optional<DecoderIds> dec_global;
    DecoderIds dec_pose{};

private:
    int add(std::string name, int rows, int cols, TensorInfo::Init init);
};

/// Flat parameter (or gradient) storage with named tensor views.
template <typename T>
class ParamSet {
public:
    ParamSet() = default;
    explicit ParamSet(const BackboneConfig& cfg);
    ParamSet(std::shared_ptr<const ParamLayout> layout, std::vector<T> data);

    [[nodiscard]] const ParamLayout& layout() const { return *layout_; }
    [[nodiscard]] std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }
    [[nodiscard]] std::span<T> flat() { return data_; }
    [[nodiscard]] std::span<const T> flat() const { return data_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    MatMap<T> tensor(int id);
    [[nodiscard]] ConstMatMap<T> tensor(int id) const;

    void set_zero();
    template <typename U>
    [[nodiscard]] ParamSet<U> cast() const;

private:
    std::shared_ptr<const ParamLayout> layout_;
    // Aligned so every copy gets the same SIMD peeling, hence bit-identical results.
    std::vector<T, Eigen::aligned_allocator<T>> data_;
};

using BackboneWeights = ParamSet<float>;
using Gradients = ParamSet<float>;

/// Xavier-uniform linear weights, orthogonal recurrent blocks (per gate),
/// zero biases, unit layer-norm gains. Bit-identical for equal (config, seed).
template <typename T>
ParamSet<T> init_weights(const BackboneConfig& cfg, std::uint64_t seed);

/// Activations kept for the backward pass.
template <typename T>
struct ForwardCache {
    int batch = 0;
    Mat<T> input;
    Mat<T> embedded;  // projection + positional encoding

    struct Ln {
        Mat<T> xhat;
        Vec<T> inv_std;
    };
    struct Tf {
        Mat<T> in;
        Ln ln1, ln2;
        Mat<T> attn_in;  // = in (post) or LN1(in) (pre)
        Mat<T> qkv;
        std::vector<Mat<T>> probs;  // [b * heads + h], M x M
        Mat<T> concat;
        Mat<T> h1;
        Mat<T> ffn_in;  // = h1 (post) or LN2(h1) (pre)
        Mat<T> ff_pre;  // before ReLU
        Mat<T> ff_act;
    };
    std::vector<Tf> tf;
    Ln final_ln;
    Mat<T> tf_out;

    struct RnnDir {
        Mat<T> gates;  // i, f, g, o after activation
        Mat<T> c;
        Mat<T> h;
    };
    std::vector<Mat<T>> rnn_in;
    std::vector<std::array<RnnDir, 2>> rnn;
    Mat<T> encoded;

    struct Dec {
        Mat<T> pre;
        Mat<T> act;
    };
    Dec dec_global, dec_pose;
};

/// Runs `batch` windows stacked batch-major: row b * window + t.
/// Returns (batch * window) x out_dim, with [pelvis 6D | remaining joints] per row.
template <typename T>
Mat<T> backbone_forward(const BackboneConfig& cfg, const ParamSet<T>& weights, const Mat<T>& input, int batch,
                        ForwardCache<T>* cache = nullptr);

/// Accumulates dLoss/dweights into `grads` for upstream gradient `d_out`
/// (same shape as the forward output). Optionally returns dLoss/dinput.
template <typename T>
void backbone_backward(const BackboneConfig& cfg, const ParamSet<T>& weights, const ForwardCache<T>& cache,
                       const Mat<T>& d_out, ParamSet<T>& grads, Mat<T>* d_input = nullptr);

/// Sinusoidal positional encoding, window x d_model.
template <typename T>
Mat<T> positional_encoding(int window, int d_model);

namespace detail {

/// One LSTM direction over batch-major rows. Gates stored as [i f g o].
template <typename T>
void lstm_direction_forward(const Mat<T>& gx, const Mat<T>& w_hh, int batch, int window, bool reverse,
                            typename ForwardCache<T>::RnnDir& out);

}  // namespace detail

}  // namespace progip::nn
