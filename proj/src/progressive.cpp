#include "progip/progressive.hpp"

#include <cstdio>
#include <fstream>

#include "progip/errors.hpp"
#include "progip/nn/checkpoint.hpp"

namespace progip {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Mat;

namespace {

constexpr int kPipelineVersion = 1;

/// Columns [a, b) of `m`, materialised.
Mat<float> cols(const Mat<float>& m, int a, int b) { return m.middleCols(a, b - a); }

Mat<float> hcat(std::initializer_list<const Mat<float>*> parts) {
    Eigen::Index rows = (*parts.begin())->rows();
    Eigen::Index width = 0;
    for (const auto* p : parts) {
        if (p->rows() != rows) throw ShapeMismatch("stage input parts disagree on frame count");
        width += p->cols();
    }
    Mat<float> out(rows, width);
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        out.middleCols(at, p->cols()) = *p;
        at += p->cols();
    }
    return out;
}

std::string recipe_name(Stage3Recipe r) { return r == Stage3Recipe::Fig1 ? "fig1" : "text"; }

Stage3Recipe recipe_from(const std::string& s) {
    if (s == "fig1") return Stage3Recipe::Fig1;
    if (s == "text") return Stage3Recipe::Text;
    throw FormatError("unknown stage3_input recipe '" + s + "'");
}

}  // namespace

std::string net_name(int net) {
    if (net == 0) return "global";
    if (net >= 1 && net < kNumNets) return "stage" + std::to_string(net);
    throw std::out_of_range("net index");
}

NetSize NetSize::desk() {
    NetSize s;
    s.d_model = 64;
    s.ffn_dim = 256;
    s.rnn_width = 64;
    s.decoder_hidden = 64;
    return s;
}

NetSize NetSize::preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw std::invalid_argument("unknown preset '" + name + "' (expected paper or desk)");
}

void PipelineConfig::validate() const {
    if (window < 1) throw ShapeMismatch("window must be >= 1");
    if (supervise_frame < 1 || supervise_frame > window) throw ShapeMismatch("supervise frame must lie in [1, window]");
    if (!(acc_scale > 0.0)) throw ShapeMismatch("acc_scale must be positive");
}

nn::BackboneConfig net_config(const PipelineConfig& cfg, int net) {
    nn::BackboneConfig c;
    c.in_dim = kNetInDim.at(net);
    c.out_dim = kNetOutDim.at(net);
    c.d_model = cfg.net.d_model;
    c.tf_layers = cfg.net.tf_layers;
    c.heads = cfg.net.heads;
    c.ffn_dim = cfg.net.ffn_dim;
    c.rnn_layers = cfg.net.rnn_layers;
    c.rnn_width = cfg.net.rnn_width;
    c.decoder_hidden = cfg.net.decoder_hidden;
    c.window = cfg.window;
    c.global_decoder = net != 4;
    c.norm = cfg.net.norm;
    c.validate();
    return c;
}

std::string skeleton_hash(const SkeletonModel& skel) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : skel.to_json_text()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ProgIPModel ProgIPModel::create(const SkeletonModel& skel, const PipelineConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (!skel.has_smpl_topology()) throw ShapeMismatch("model requires an SMPL-topology skeleton");
    ProgIPModel m{skel, cfg, {}, {}};
    for (int i = 0; i < kNumNets; ++i) {
        m.nets[i] = net_config(cfg, i);
        m.weights[i] = nn::init_weights<float>(m.nets[i], seed + static_cast<std::uint64_t>(i));
    }
    return m;
}

json pipeline_to_json(const PipelineConfig& cfg) {
    return {{"format_version", kPipelineVersion},
            {"window", cfg.window},
            {"supervise_frame", cfg.supervise_frame},
            {"acc_scale", cfg.acc_scale},
            {"stage3_input", recipe_name(cfg.stage3)},
            {"sensors", cfg.placement.joints}};
}

PipelineConfig pipeline_from_json(const json& j) {
    PipelineConfig cfg;
    try {
        if (j.at("format_version").get<int>() != kPipelineVersion) throw FormatError("unsupported pipeline.json version");
        cfg.window = j.at("window").get<int>();
        cfg.supervise_frame = j.at("supervise_frame").get<int>();
        cfg.acc_scale = j.at("acc_scale").get<double>();
        cfg.stage3 = recipe_from(j.value("stage3_input", std::string("fig1")));
        if (j.contains("sensors")) cfg.placement.joints = j.at("sensors").get<std::array<std::string, kSensors>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("pipeline.json: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void ProgIPModel::save(const fs::path& dir) const {
    audit();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (int i = 0; i < kNumNets; ++i) nn::save_checkpoint(dir / (net_name(i) + ".ckpt"), nets[i], weights[i]);
    json j = pipeline_to_json(cfg);
    j["skeleton_hash"] = skeleton_hash(skel);
    std::ofstream out(dir / "pipeline.json", std::ios::trunc);
    if (!out) throw IoError("cannot write pipeline.json in " + dir.string());
    out << j.dump(2) << '\n';
}

ProgIPModel ProgIPModel::load(const fs::path& dir, const SkeletonModel& skel) {
    std::ifstream in(dir / "pipeline.json");
    if (!in) throw FormatError("model bundle lacks pipeline.json: " + dir.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(std::string("pipeline.json: ") + e.what());
    }
    ProgIPModel m{skel, pipeline_from_json(j), {}, {}};
    const std::string expect = j.value("skeleton_hash", std::string());
    if (expect != skeleton_hash(skel)) {
        throw FormatError("model was trained with a different skeleton (hash " + expect + ", given " +
                          skeleton_hash(skel) + ")");
    }
    for (int i = 0; i < kNumNets; ++i) {
        auto [c, w] = nn::load_checkpoint(dir / (net_name(i) + ".ckpt"));
        m.nets[i] = c;
        m.weights[i] = std::move(w);
    }
    const auto& g = m.nets[0];
    m.cfg.net = {g.d_model, g.tf_layers, g.heads, g.ffn_dim, g.rnn_layers, g.rnn_width, g.decoder_hidden, g.norm};
    m.audit();
    return m;
}

void ProgIPModel::audit() const {
    for (int i = 0; i < kNumNets; ++i) {
        const auto& c = nets[i];
        if (c.in_dim != kNetInDim[i] || c.out_dim != kNetOutDim[i]) {
            throw ShapeMismatch(net_name(i) + ": expected " + std::to_string(kNetInDim[i]) + " -> " +
                                std::to_string(kNetOutDim[i]) + ", found " + std::to_string(c.in_dim) + " -> " +
                                std::to_string(c.out_dim));
        }
        if (c.window != cfg.window) throw ShapeMismatch(net_name(i) + ": window differs from pipeline");
        if (c.global_decoder != (i != 4)) throw ShapeMismatch(net_name(i) + ": unexpected decoder set");
        if (weights[i].size() != nn::ParamLayout(c).total) throw ShapeMismatch(net_name(i) + ": weight count mismatch");
    }
}

Mat<float> compose_input(const PipelineConfig& cfg, int net, const Mat<float>& x,
                         const std::array<Mat<float>, kNumNets>& outputs) {
    if (x.cols() != kInputDim) throw ShapeMismatch("IMU features must have 45 columns");
    Mat<float> in;
    switch (net) {
        case 0: in = x; break;
        case 1: in = hcat({&x, &outputs[0]}); break;
        case 2: in = hcat({&x, &outputs[0], &outputs[1]}); break;
        case 3:
            if (cfg.stage3 == Stage3Recipe::Fig1) {
                in = hcat({&x, &outputs[0], &outputs[2]});
            } else {
                const Mat<float> d2 = cols(outputs[2], 24, 42);
                in = hcat({&x, &outputs[0], &outputs[1], &d2});
            }
            break;
        case 4: {
            const Mat<float> pelvis = cols(outputs[1], 0, 6);
            in = hcat({&x, &outputs[0], &pelvis});
            break;
        }
        default: throw std::out_of_range("net index");
    }
    if (in.cols() != kNetInDim[net]) {
        throw ShapeMismatch(net_name(net) + " input has " + std::to_string(in.cols()) + " columns, expected " +
                            std::to_string(kNetInDim[net]));
    }
    return in;
}

PipelineActivations run_pipeline(const ProgIPModel& model, const Mat<float>& x, int batch,
                                 std::array<nn::ForwardCache<float>, kNumNets>* caches) {
    PipelineActivations a;
    for (int i = 0; i < kNumNets; ++i) {
        a.inputs[i] = compose_input(model.cfg, i, x, a.outputs);
        a.outputs[i] = nn::backbone_forward(model.nets[i], model.weights[i], a.inputs[i], batch,
                                            caches ? &(*caches)[i] : nullptr);
        if (a.outputs[i].cols() != kNetOutDim[i]) throw ShapeMismatch(net_name(i) + " emitted the wrong width");
    }
    return a;
}

Mat<float> estimate_global(const ProgIPModel& model, const Mat<float>& window) {
    if (window.rows() != model.cfg.window || window.cols() != kInputDim) {
        throw ShapeMismatch("estimate_global expects an M x 45 window");
    }
    return nn::backbone_forward(model.nets[0], model.weights[0], window, 1);
}

ReducedPose fuse(const Eigen::Ref<const Eigen::RowVectorXf>& stage3, const Eigen::Ref<const Eigen::RowVectorXf>& stage4) {
    if (stage3.size() != kNetOutDim[3] || stage4.size() != kNetOutDim[4]) throw ShapeMismatch("fuse: bad stage widths");
    ReducedPose p;
    p.v.head<72>() = stage3.transpose().cast<double>();
    p.v.tail<24>() = stage4.transpose().cast<double>();
    return p;
}

ReducedPose run_stages(const ProgIPModel& model, const Mat<float>& window) {
    if (window.rows() != model.cfg.window || window.cols() != kInputDim) {
        throw ShapeMismatch("run_stages expects an M x 45 window");
    }
    const PipelineActivations a = run_pipeline(model, window, 1);
    const int n = model.cfg.supervise_frame - 1;
    return fuse(a.outputs[3].row(n), a.outputs[4].row(n));
}

FullPose decode_pose(const SkeletonModel& skel, const ReducedPose& reduced) { return expand_reduced(skel, reduced); }

}  // namespace progip
