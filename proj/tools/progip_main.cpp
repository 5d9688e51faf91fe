// progip command-line front end.
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "progip/datasets.hpp"
#include "progip/errors.hpp"
#include "progip/evaluation.hpp"
#include "progip/export.hpp"
#include "progip/motiongen.hpp"
#include "progip/runtime.hpp"
#include "progip/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace progip;

namespace {

struct Common {
    std::string model;
    std::string skeleton;
    double hz = 60.0;
    int window = 40;
    int supervise = 30;
    double acc_scale = kDefaultAccScale;
    std::uint64_t seed = 10;
    std::string preset = "desk";
};

void add_common(CLI::App& app, Common& c, bool with_model) {
    if (with_model) app.add_option("--model", c.model, "Model bundle directory")->required();
    app.add_option("--skeleton", c.skeleton, "Skeleton JSON (default: shipped SMPL asset)");
}

SkeletonModel load_skeleton(const Common& c) {
    return c.skeleton.empty() ? SkeletonModel::default_smpl() : SkeletonModel::load(c.skeleton);
}

/// Relative paths that do not exist locally are looked up under PROGIP_DATA_DIR.
fs::path data_path(const std::string& p) {
    fs::path path(p);
    if (path.is_absolute() || fs::exists(path)) return path;
    if (const char* root = std::getenv("PROGIP_DATA_DIR")) {
        const fs::path alt = fs::path(root) / path;
        if (fs::exists(alt)) return alt;
    }
    return path;
}

struct Input {
    MotionSequence seq;
    std::string name;
};

/// Canonical directories or catalog.json files; catalogs contribute the entries of `split`.
std::vector<Input> load_inputs(const std::vector<std::string>& paths, const std::string& split, double hz) {
    std::vector<Input> out;
    auto add = [&](const fs::path& dir) {
        MotionSequence s = load_canonical(dir);
        if (s.framerate != hz) s = resample(s, hz);
        out.push_back({std::move(s), dir.filename().string()});
    };
    for (const auto& p : paths) {
        const fs::path path = data_path(p);
        if (fs::is_directory(path)) {
            add(path);
            continue;
        }
        const Catalog cat = Catalog::load(path);
        std::vector<CatalogEntry> picked;
        if (split == "all") {
            picked = cat.entries;
        } else {
            const Splits s = build_splits(cat);
            if (split == "train") picked = s.train;
            else if (split == "val") picked = s.val;
            else if (split == "test") picked = s.test;
            else throw ProtocolError("unknown split '" + split + "'");
        }
        for (const auto& e : picked) add(cat.resolve(e));
    }
    if (out.empty()) throw IoError("no input sequences");
    return out;
}

std::string label_of(const Input& in) { return in.seq.label.empty() ? in.name : in.seq.label; }

void apply_train_overrides(TrainConfig& tc, const json& j) {
    tc.lr = j.value("lr", tc.lr);
    tc.batch = j.value("batch", tc.batch);
    tc.epochs = j.value("epochs", tc.epochs);
    tc.max_steps = j.value("max_steps", tc.max_steps);
    tc.lambda = j.value("lambda", tc.lambda);
    tc.seed = j.value("seed", tc.seed);
    tc.stride = j.value("stride", tc.stride);
    tc.use_fk_loss = j.value("use_fk_loss", tc.use_fk_loss);
    tc.detach_between_stages = j.value("detach_between_stages", tc.detach_between_stages);
    tc.validate();
}

struct Manifest {
    json raw;
    fs::path base;

    static Manifest load(const std::string& file) {
        std::ifstream in(data_path(file));
        if (!in) throw IoError("cannot read manifest " + file);
        Manifest m;
        try {
            m.raw = json::parse(in);
        } catch (const json::exception& e) {
            throw FormatError(std::string("manifest: ") + e.what());
        }
        m.base = data_path(file).parent_path();
        return m;
    }

    /// Sequences listed directly, from a catalog split, or generated procedurally.
    [[nodiscard]] std::vector<MotionSequence> sequences(const SkeletonModel& skel, double hz) const {
        std::vector<std::string> paths;
        auto rel = [&](const std::string& p) {
            const fs::path path(p);
            return (path.is_absolute() || fs::exists(data_path(p))) ? p : (base / path).string();
        };
        for (const auto& p : raw.value("sequences", std::vector<std::string>{})) paths.push_back(rel(p));
        std::vector<MotionSequence> out;
        if (raw.contains("catalog")) {
            for (auto& in : load_inputs({rel(raw.at("catalog").get<std::string>())}, raw.value("split", "train"), hz)) {
                out.push_back(std::move(in.seq));
            }
        }
        if (!paths.empty()) {
            for (auto& in : load_inputs(paths, "all", hz)) out.push_back(std::move(in.seq));
        }
        if (raw.contains("generate")) {
            const json& g = raw.at("generate");
            const int clips = g.value("clips", 1);
            for (int c = 0; c < clips; ++c) {
                MotionGenOptions o;
                o.frames = g.value("frames", o.frames);
                o.framerate = hz;
                o.seed = g.value("seed", o.seed) + static_cast<std::uint64_t>(c);
                o.stride = g.value("stride", o.stride);
                o.label = g.value("label", o.label);
                out.push_back(generate_motion(skel, o));
            }
        }
        if (out.empty()) throw IoError("manifest lists no training data");
        return out;
    }
};

void log_step(int step, int epoch, const LossReport& r) {
    std::fprintf(stderr, "step %6d  epoch %3d  loss %.5f  [global %.4f  s1 %.4f  s2 %.4f  s3 %.4f  s4 %.4f]\n", step,
                 epoch, r.total, r.nets[0].total, r.nets[1].total, r.nets[2].total, r.nets[3].total, r.nets[4].total);
}

std::vector<TrainingClip> build_clips(const SkeletonModel& skel, const std::vector<MotionSequence>& seqs,
                                      const PipelineConfig& cfg, const ClipOptions& opts) {
    std::vector<TrainingClip> clips;
    for (const auto& s : seqs) {
        if (s.n_frames() < cfg.window) {
            std::cerr << "skipping " << (s.label.empty() ? "sequence" : s.label) << ": " << s.n_frames()
                      << " frames is shorter than the window\n";
            continue;
        }
        clips.push_back(make_clip(skel, s, cfg, opts));
    }
    if (clips.empty()) throw TooShort("no sequence is as long as the window");
    return clips;
}

/// Runs the trainer with per-epoch checkpoints into `out`.
void train_loop(ProgIPModel& model, const std::vector<TrainingClip>& clips, const TrainConfig& tc, int every,
                int log_every, const fs::path& out) {
    Trainer trainer(model, tc);
    int last_epoch = 0;
    trainer.fit(clips, [&](int step, int epoch, const LossReport& r) {
        if (log_every > 0 && (step % log_every == 0 || step == 1)) log_step(step, epoch, r);
        if (every > 0 && epoch != last_epoch && epoch % every == 0) model.save(out);
        last_epoch = epoch;
    });
    model.save(out);
    std::cerr << "saved " << out.string() << " after " << trainer.steps() << " steps\n";
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"progip: sparse-IMU full-body pose estimation"};
    app.require_subcommand(1);
    Common c;
    app.add_option("--hz", c.hz, "Frame rate")->check(CLI::PositiveNumber);
    app.add_option("--window", c.window, "Window length M")->check(CLI::PositiveNumber);
    app.add_option("--supervise-frame", c.supervise, "Supervised frame N (1-based)")->check(CLI::PositiveNumber);
    app.add_option("--acc-scale", c.acc_scale, "Acceleration divisor")->check(CLI::PositiveNumber);
    app.add_option("--seed", c.seed, "Random seed");
    app.add_option("--preset", c.preset, "Network and optimizer preset")->check(CLI::IsMember({"paper", "desk"}));
    app.fallthrough();

    // init
    auto* init = app.add_subcommand("init", "Create an untrained model bundle");
    add_common(*init, c, true);
    std::optional<int> d_model, tf_layers, heads, ffn, rnn_layers, rnn_width, dec_hidden;
    std::string stage3 = "fig1";
    init->add_option("--d-model", d_model);
    init->add_option("--tf-layers", tf_layers);
    init->add_option("--heads", heads);
    init->add_option("--ffn", ffn);
    init->add_option("--rnn-layers", rnn_layers);
    init->add_option("--rnn-width", rnn_width);
    init->add_option("--decoder-hidden", dec_hidden);
    init->add_option("--stage3-input", stage3)->check(CLI::IsMember({"fig1", "text"}));

    // synth
    auto* synth = app.add_subcommand("synth", "Attach synthesized IMU to a canonical motion");
    std::string synth_in, synth_out, synth_features;
    bool synth_gravity = false;
    add_common(*synth, c, false);
    synth->add_option("input", synth_in, "Canonical motion directory")->required();
    synth->add_option("output", synth_out, "Output canonical directory")->required();
    synth->add_option("--features", synth_features, "Also write frames x 45 float32 features");
    synth->add_flag("--gravity", synth_gravity, "Add the gravity reaction to accelerations");

    // train / finetune
    auto* train = app.add_subcommand("train", "Train all five networks");
    std::string manifest;
    int log_every = 50;
    add_common(*train, c, false);
    train->add_option("--manifest", manifest, "Training manifest JSON")->required();
    train->add_option("--model", c.model, "Output bundle directory")->required();
    train->add_option("--log-every", log_every, "Steps between progress lines");

    auto* finetune = app.add_subcommand("finetune", "Continue training on real-IMU sequences");
    std::string ft_out;
    add_common(*finetune, c, true);
    finetune->add_option("--manifest", manifest, "Fine-tuning manifest JSON")->required();
    finetune->add_option("--out", ft_out, "Output bundle directory (default: overwrite --model)");
    finetune->add_option("--log-every", log_every, "Steps between progress lines");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a model; writes a per-motion CSV");
    std::vector<std::string> eval_in;
    std::string eval_out, split = "test";
    bool real_imu = false, upper = false, table = false, baseline = false;
    add_common(*eval, c, false);
    eval->add_option("--model", c.model, "Model bundle directory");
    eval->add_option("inputs", eval_in, "Canonical directories or catalog.json files")->required();
    eval->add_option("--split", split, "Catalog split")->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval->add_option("--out", eval_out, "CSV file (default: stdout)");
    eval->add_flag("--real-imu", real_imu, "Use the recorded IMU channel instead of synthesizing");
    eval->add_flag("--upper-body", upper, "Average over upper-body joints only");
    eval->add_flag("--table", table, "Print a text table to stderr");
    eval->add_flag("--rest-baseline", baseline, "Score the constant rest pose instead of a model");

    // stream
    auto* stream = app.add_subcommand("stream", "Live inference: wire records in, JSONL poses out");
    int udp_port = 0, calibrate = 0;
    bool lossless = false, stats = false;
    add_common(*stream, c, true);
    stream->add_option("--udp", udp_port, "Listen on this UDP port instead of stdin");
    stream->add_option("--calibrate", calibrate, "Leading T-pose frames used for calibration");
    stream->add_flag("--lossless", lossless, "Never drop frames (offline replay)");
    stream->add_flag("--stats", stats, "Print timing statistics to stderr");

    // export
    auto* exp = app.add_subcommand("export", "Write poses as BVH or JSONL");
    std::string exp_in, exp_from, exp_out, exp_format = "bvh";
    bool exp_gt = false;
    add_common(*exp, c, false);
    exp->add_option("--model", c.model, "Model bundle directory");
    exp->add_option("input", exp_in, "Canonical motion directory");
    exp->add_option("--from-jsonl", exp_from, "Convert a recorded JSONL pose stream");
    exp->add_option("--format", exp_format)->check(CLI::IsMember({"bvh", "jsonl"}));
    exp->add_option("--out", exp_out, "Output file")->required();
    exp->add_flag("--ground-truth", exp_gt, "Export the sequence's own poses");

    // data
    auto* data = app.add_subcommand("data", "Canonical data utilities");
    data->require_subcommand(1);
    auto* validate = data->add_subcommand("validate", "Check canonical directories");
    std::vector<std::string> val_in;
    validate->add_option("dirs", val_in)->required();
    auto* generate = data->add_subcommand("generate", "Write procedural motion clips");
    std::string gen_out;
    MotionGenOptions gen;
    int gen_clips = 1;
    generate->add_option("output", gen_out, "Output directory")->required();
    generate->add_option("--frames", gen.frames)->check(CLI::PositiveNumber);
    generate->add_option("--clips", gen_clips)->check(CLI::PositiveNumber);
    generate->add_option("--label", gen.label);
    generate->add_option("--subject", gen.subject);
    generate->add_option("--stride", gen.stride);
    auto* resamp = data->add_subcommand("resample", "Resample a canonical directory");
    std::string rs_in, rs_out;
    resamp->add_option("input", rs_in)->required();
    resamp->add_option("output", rs_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        PipelineConfig pcfg;
        pcfg.window = c.window;
        pcfg.supervise_frame = c.supervise;
        pcfg.acc_scale = c.acc_scale;
        pcfg.net = NetSize::preset(c.preset);
        pcfg.validate();

        if (*init) {
            NetSize& n = pcfg.net;
            if (d_model) n.d_model = *d_model;
            if (tf_layers) n.tf_layers = *tf_layers;
            if (heads) n.heads = *heads;
            if (ffn) n.ffn_dim = *ffn;
            if (rnn_layers) n.rnn_layers = *rnn_layers;
            if (rnn_width) n.rnn_width = *rnn_width;
            if (dec_hidden) n.decoder_hidden = *dec_hidden;
            pcfg.stage3 = stage3 == "text" ? Stage3Recipe::Text : Stage3Recipe::Fig1;
            ProgIPModel::create(load_skeleton(c), pcfg, c.seed).save(c.model);
            return 0;
        }

        if (*synth) {
            const auto skel = load_skeleton(c);
            MotionSequence s = load_canonical(data_path(synth_in));
            SynthOptions o;
            o.gravity = synth_gravity;
            const auto imu = synthesize_imu(skel, s, pcfg.placement, o);
            for (int t = 0; t < s.n_frames(); ++t) s.set_imu_frame(t, imu[t]);
            save_canonical(synth_out, s);
            if (!synth_features.empty()) {
                const FeatureRows x = build_input(imu, c.acc_scale);
                const PoseRows xf = x.cast<float>();
                std::ofstream f(synth_features, std::ios::binary | std::ios::trunc);
                f.write(reinterpret_cast<const char*>(xf.data()), static_cast<std::streamsize>(xf.size() * sizeof(float)));
                if (!f) throw IoError("cannot write " + synth_features);
            }
            return 0;
        }

        if (*train) {
            const auto skel = load_skeleton(c);
            const Manifest m = Manifest::load(manifest);
            const std::string preset = m.raw.value("preset", c.preset);
            pcfg.net = NetSize::preset(preset);
            if (m.raw.contains("net")) {
                const json& n = m.raw.at("net");
                pcfg.net.d_model = n.value("d_model", pcfg.net.d_model);
                pcfg.net.tf_layers = n.value("tf_layers", pcfg.net.tf_layers);
                pcfg.net.heads = n.value("heads", pcfg.net.heads);
                pcfg.net.ffn_dim = n.value("ffn_dim", pcfg.net.ffn_dim);
                pcfg.net.rnn_layers = n.value("rnn_layers", pcfg.net.rnn_layers);
                pcfg.net.rnn_width = n.value("rnn_width", pcfg.net.rnn_width);
                pcfg.net.decoder_hidden = n.value("decoder_hidden", pcfg.net.decoder_hidden);
            }
            if (m.raw.value("stage3_input", std::string("fig1")) == "text") pcfg.stage3 = Stage3Recipe::Text;
            TrainConfig tc = TrainConfig::preset(preset);
            tc.seed = c.seed;
            apply_train_overrides(tc, m.raw.value("train", json::object()));
            ProgIPModel model = m.raw.contains("init_from")
                                    ? ProgIPModel::load(data_path(m.raw.at("init_from").get<std::string>()), skel)
                                    : ProgIPModel::create(skel, pcfg, tc.seed);
            ClipOptions co;
            co.source = m.raw.value("real_imu", false) ? ImuSource::Real : ImuSource::Synthetic;
            co.recalibrate_acc = m.raw.value("recalibrate_acc", false);
            const auto clips = build_clips(skel, m.sequences(skel, c.hz), model.cfg, co);
            std::cerr << clips.size() << " clips, preset " << preset << ", batch " << tc.batch << ", lr " << tc.lr << '\n';
            train_loop(model, clips, tc, m.raw.value("checkpoint_every", 1), log_every, c.model);
            return 0;
        }

        if (*finetune) {
            const auto skel = load_skeleton(c);
            ProgIPModel model = ProgIPModel::load(data_path(c.model), skel);
            const Manifest m = Manifest::load(manifest);
            TrainConfig tc = TrainConfig::preset(m.raw.value("preset", c.preset));
            tc.seed = c.seed;
            apply_train_overrides(tc, m.raw.value("train", json::object()));
            ClipOptions co;
            co.source = m.raw.value("real_imu", true) ? ImuSource::Real : ImuSource::Synthetic;
            co.recalibrate_acc = m.raw.value("recalibrate_acc", false);
            const auto clips = build_clips(skel, m.sequences(skel, c.hz), model.cfg, co);
            const fs::path out = ft_out.empty() ? fs::path(c.model) : fs::path(ft_out);
            if (tc.epochs == 0) {
                model.save(out);
                return 0;
            }
            train_loop(model, clips, tc, m.raw.value("checkpoint_every", 1), log_every, out);
            return 0;
        }

        if (*eval) {
            const auto skel = load_skeleton(c);
            if (c.model.empty() && !baseline) throw CLI::RequiredError("--model");
            std::optional<ProgIPModel> model;
            if (!baseline) model = ProgIPModel::load(data_path(c.model), skel);
            const PipelineConfig& cfg = model ? model->cfg : pcfg;
            const JointMask mask = upper ? JointMask::upper_body(skel) : JointMask::all(skel);
            ClipOptions co;
            if (real_imu) co.source = ImuSource::Real;
            std::vector<LabeledErrors> results;
            for (const auto& in : load_inputs(eval_in, split, c.hz)) {
                auto frames = baseline ? evaluate_rest_pose(skel, in.seq, cfg, mask)
                                       : evaluate_model(*model, in.seq, mask, co);
                results.push_back({label_of(in), std::move(frames)});
            }
            const MotionTable t = per_motion_report(results);
            if (eval_out.empty()) {
                write_csv(std::cout, t);
            } else {
                std::ofstream f(eval_out, std::ios::trunc);
                if (!f) throw IoError("cannot write " + eval_out);
                write_csv(f, t);
            }
            if (table) write_table(std::cerr, t);
            return 0;
        }

        if (*stream) {
            const auto skel = load_skeleton(c);
            const ProgIPModel model = ProgIPModel::load(data_path(c.model), skel);
            LiveOptions lo;
            lo.framerate = c.hz;
            lo.calibrate_frames = calibrate;
            lo.lossless = lossless;
            LineSource src;
            if (udp_port > 0) {
                std::signal(SIGINT, on_signal);
                std::signal(SIGTERM, on_signal);
                src = udp_line_source(udp_port, g_stop);
                std::cerr << "listening on UDP port " << udp_port << '\n';
            } else {
                src = [](std::string& line) { return static_cast<bool>(std::getline(std::cin, line)); };
            }
            const TimingStats s = run_live(model, src, std::cout, lo, &std::cerr);
            if (stats) {
                std::fprintf(stderr, "frames %llu  poses %llu  dropped %llu  median inference %.3f ms\n",
                             static_cast<unsigned long long>(s.frames_in), static_cast<unsigned long long>(s.poses_out),
                             static_cast<unsigned long long>(s.dropped), s.median_us() / 1000.0);
            }
            return 0;
        }

        if (*exp) {
            const auto skel = load_skeleton(c);
            std::vector<PoseFrame> frames;
            double hz = c.hz;
            if (!exp_from.empty()) {
                frames = read_jsonl(exp_from);
            } else {
                if (exp_in.empty()) throw CLI::RequiredError("input or --from-jsonl");
                MotionSequence s = load_canonical(data_path(exp_in));
                if (s.framerate != c.hz) s = resample(s, c.hz);
                if (exp_gt) {
                    for (int t = 0; t < s.n_frames(); ++t) frames.push_back({t, t / hz, s.full_pose(t)});
                } else {
                    if (c.model.empty()) throw CLI::RequiredError("--model");
                    const ProgIPModel model = ProgIPModel::load(data_path(c.model), skel);
                    const auto p = predict_sequence(model, make_clip(skel, s, model.cfg).x);
                    for (std::size_t k = 0; k < p.poses.size(); ++k) {
                        const long f = p.first_frame + static_cast<long>(k);
                        frames.push_back({f, f / hz, p.poses[k]});
                    }
                }
            }
            if (exp_format == "bvh") write_bvh(exp_out, skel, frames, hz);
            else write_jsonl(exp_out, frames);
            return 0;
        }

        if (*validate) {
            int bad = 0;
            for (const auto& d : val_in) {
                try {
                    const MotionSequence s = load_canonical(data_path(d));
                    std::cout << "ok  " << d << "  frames " << s.n_frames() << "  " << s.framerate << " Hz"
                              << (s.has_imu() ? "  imu" : "") << '\n';
                } catch (const Error& e) {
                    std::cout << "bad " << d << "  " << e.what() << '\n';
                    ++bad;
                }
            }
            return bad == 0 ? 0 : 1;
        }

        if (*generate) {
            const auto skel = load_skeleton(c);
            gen.framerate = c.hz;
            Catalog cat;
            for (int k = 0; k < gen_clips; ++k) {
                gen.seed = c.seed + static_cast<std::uint64_t>(k);
                const std::string name = gen_clips == 1 ? "" : gen.label + "_" + std::to_string(k);
                const fs::path dir = name.empty() ? fs::path(gen_out) : fs::path(gen_out) / name;
                save_canonical(dir, generate_motion(skel, gen));
                if (!name.empty()) {
                    CatalogEntry e;
                    e.path = name;
                    e.subject = gen.subject;
                    e.label = gen.label;
                    e.subset = "synthetic";
                    e.n_frames = gen.frames;
                    cat.entries.push_back(e);
                }
            }
            if (!cat.entries.empty()) cat.save(fs::path(gen_out) / "catalog.json");
            return 0;
        }

        if (*resamp) {
            save_canonical(rs_out, resample(load_canonical(data_path(rs_in)), c.hz));
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
