#include "progip/training.hpp"

#include <cmath>
#include <random>

#include "progip/errors.hpp"

namespace progip {

using nn::Mat;

TrainConfig TrainConfig::paper() { return {}; }

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.lr = 1e-3;
    c.batch = 32;
    return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw std::invalid_argument("unknown preset '" + name + "' (expected paper or desk)");
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) throw ShapeMismatch("lambda must be >= 0");
    if (!(lr >= 0.0)) throw ShapeMismatch("lr must be >= 0");
    if (batch < 1) throw ShapeMismatch("batch must be >= 1");
    if (epochs < 0 || max_steps < 0) throw ShapeMismatch("epochs and max_steps must be >= 0");
    if (stride < 1) throw ShapeMismatch("stride must be >= 1");
}

namespace {

ChainStage chain_for(int net) {
    switch (net) {
        case 1: return ChainStage::Torso;
        case 2: return ChainStage::Transition;
        case 3: return ChainStage::UpperBody;
        case 4: return ChainStage::LowerBody;
        default: throw std::out_of_range("no chain for net");
    }
}

}  // namespace

StageLoss stage_loss(int net, const Eigen::Ref<const Eigen::VectorXd>& est, const ReducedPose& target,
                     const SkeletonModel& skel, double lambda, bool use_fk, const Rot6D& fk_pelvis,
                     StageLossGrad* grad) {
    if (net < 0 || net >= kNumNets) throw std::out_of_range("net index");
    const int width = kNetOutDim[net];
    if (est.size() != width) throw ShapeMismatch(net_name(net) + ": estimate has the wrong width");
    const int off = kNetTargetOffset[net];
    const Eigen::VectorXd diff = est - target.v.segment(off, width);
    const bool has_pelvis = net != 4;

    StageLoss L;
    if (grad) {
        grad->d_out = Eigen::VectorXd::Zero(width);
        grad->d_fk_pelvis.setZero();
    }
    if (has_pelvis) {
        L.pelvis = diff.head<6>().squaredNorm();
        L.rotation = diff.tail(width - 6).squaredNorm();
        if (grad) {
            grad->d_out.head<6>() = 2.0 * lambda * diff.head<6>();
            grad->d_out.tail(width - 6) = 2.0 * diff.tail(width - 6);
        }
    } else {
        L.rotation = diff.squaredNorm();
        if (grad) grad->d_out = 2.0 * diff;
    }

    if (use_fk && net != 0) {
        const auto joints = chain_stage_joints(skel, chain_for(net));
        // 6D inputs of each FK joint, estimate and ground truth, in chain order.
        std::vector<Rot6D> est6(joints.size()), gt6(joints.size());
        if (has_pelvis) {
            for (std::size_t k = 0; k < joints.size(); ++k) {
                est6[k] = est.segment<6>(6 * k);
                gt6[k] = target.joint(static_cast<int>(k));
            }
        } else {
            est6[0] = fk_pelvis;
            gt6[0] = target.joint(0);
            for (std::size_t k = 1; k < joints.size(); ++k) {
                est6[k] = est.segment<6>(6 * (k - 1));
                gt6[k] = target.joint(12 + static_cast<int>(k) - 1);
            }
        }
        std::vector<RotMatrix> est_r(joints.size()), gt_r(joints.size());
        for (std::size_t k = 0; k < joints.size(); ++k) {
            est_r[k] = six_d_to_rot(est6[k]);
            gt_r[k] = six_d_to_rot(gt6[k]);
        }
        const auto b_est = subchain_fk(skel, joints, est_r);
        const auto b_gt = subchain_fk(skel, joints, gt_r);
        std::vector<Vec3> d_pos(b_est.positions.size());
        for (std::size_t i = 0; i < d_pos.size(); ++i) {
            const Vec3 d = b_est.positions[i] - b_gt.positions[i];
            L.position += d.squaredNorm();
            d_pos[i] = 2.0 * d;
        }
        if (grad) {
            const auto d_rot = subchain_fk_backward(skel, joints, est_r, d_pos);
            for (std::size_t k = 0; k < joints.size(); ++k) {
                const Rot6D g6 = six_d_to_rot_backward(est6[k], d_rot[k]);
                if (has_pelvis) {
                    grad->d_out.segment<6>(6 * k) += g6;
                } else if (k == 0) {
                    grad->d_fk_pelvis = g6;
                } else {
                    grad->d_out.segment<6>(6 * (k - 1)) += g6;
                }
            }
        }
    }
    L.total = lambda * L.pelvis + L.rotation + L.position;
    return L;
}

TrainingClip make_clip(const SkeletonModel& skel, const MotionSequence& seq, const PipelineConfig& cfg,
                       const ClipOptions& opts) {
    const int n = seq.n_frames();
    TrainingClip clip;
    clip.label = seq.label;
    clip.targets.resize(n, kReducedDim);
    for (int t = 0; t < n; ++t) clip.targets.row(t) = reduce_full(skel, seq.full_pose(t)).v.transpose();

    ImuSequence frames;
    if (opts.source == ImuSource::Synthetic) {
        frames = synthesize_imu(skel, seq, cfg.placement, opts.synth);
    } else {
        if (!seq.has_imu()) throw FormatError("make_clip: sequence has no real IMU channel");
        frames.resize(n);
        for (int t = 0; t < n; ++t) frames[t] = seq.imu_frame(t);
        if (opts.recalibrate_acc) {
            const auto synth = synthesize_imu(skel, seq, cfg.placement, opts.synth);
            frames = acc_bias_align(frames, mean_acc(synth));
        }
    }
    clip.x = build_input(frames, cfg.acc_scale);
    return clip;
}

std::vector<TrainingWindow> make_training_windows(int frames, int window, int supervise_frame, int stride) {
    if (window < 1 || supervise_frame < 1 || supervise_frame > window) {
        throw ShapeMismatch("make_training_windows: need 1 <= N <= M");
    }
    if (stride < 1) throw ShapeMismatch("make_training_windows: stride must be >= 1");
    if (frames < window) {
        throw TooShort("make_training_windows: " + std::to_string(frames) + " frames is shorter than the window");
    }
    std::vector<TrainingWindow> out;
    for (int s = 0; s + window <= frames; s += stride) out.push_back({s, supervise_frame - 1});
    return out;
}

void shuffle_windows(std::vector<WindowRef>& refs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = refs.size(); i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(refs[i - 1], refs[j]);
    }
}

namespace {

struct BatchResult {
    LossReport report;
    std::array<Mat<float>, kNumNets> d_out;
    Mat<float> d_fk_pelvis;  // batch rows x 6, stage-4 FK gradient on the stage-1 pelvis
    std::array<nn::ForwardCache<float>, kNumNets> caches;
    PipelineActivations act;
};

Mat<float> gather_windows(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch, int m) {
    Mat<float> x(static_cast<Eigen::Index>(batch.size()) * m, kInputDim);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& c = clips.at(batch[b].clip);
        if (batch[b].w.start < 0 || batch[b].w.start + m > c.x.rows()) throw ShapeMismatch("window exceeds clip");
        x.middleRows(static_cast<Eigen::Index>(b) * m, m) = c.x.middleRows(batch[b].w.start, m).cast<float>();
    }
    return x;
}

void forward_batch(const ProgIPModel& model, const TrainConfig& cfg, const std::vector<TrainingClip>& clips,
                   const std::vector<WindowRef>& batch, bool want_grads, BatchResult& r) {
    if (batch.empty()) throw ShapeMismatch("empty batch");
    const int m = model.cfg.window;
    const int nb = static_cast<int>(batch.size());
    const Mat<float> x = gather_windows(clips, batch, m);
    r.act = run_pipeline(model, x, nb, want_grads ? &r.caches : nullptr);
    for (int i = 0; i < kNumNets; ++i) {
        if (!r.act.outputs[i].allFinite()) throw NonFiniteLoss(net_name(i) + " produced non-finite output; step aborted");
    }
    if (want_grads) {
        for (int i = 0; i < kNumNets; ++i) r.d_out[i] = Mat<float>::Zero(static_cast<Eigen::Index>(nb) * m, kNetOutDim[i]);
        r.d_fk_pelvis = Mat<float>::Zero(nb, 6);
    }
    const double inv_b = 1.0 / nb;
    r.report = {};
    for (int b = 0; b < nb; ++b) {
        const auto& ref = batch[b];
        const int row = b * m + ref.w.supervise;
        ReducedPose target;
        target.v = clips[ref.clip].targets.row(ref.w.start + ref.w.supervise).transpose();
        const Rot6D fk_pelvis = r.act.outputs[1].row(row).head<6>().transpose().cast<double>();
        for (int i = 0; i < kNumNets; ++i) {
            const Eigen::VectorXd est = r.act.outputs[i].row(row).transpose().cast<double>();
            StageLossGrad g;
            const StageLoss L =
                stage_loss(i, est, target, model.skel, cfg.lambda, cfg.use_fk_loss, fk_pelvis, want_grads ? &g : nullptr);
            auto& acc = r.report.nets[i];
            acc.rotation += L.rotation * inv_b;
            acc.pelvis += L.pelvis * inv_b;
            acc.position += L.position * inv_b;
            acc.total += L.total * inv_b;
            if (want_grads) {
                r.d_out[i].row(row) = (g.d_out * inv_b).transpose().cast<float>();
                if (i == 4) r.d_fk_pelvis.row(b) = (g.d_fk_pelvis * inv_b).transpose().cast<float>();
            }
        }
    }
    for (const auto& s : r.report.nets) r.report.total += s.total;
    if (!std::isfinite(r.report.total)) throw NonFiniteLoss("non-finite training loss; step aborted");
}

/// Adds d_input columns [from, from + width) into dst columns [at, at + width).
void route(const Mat<float>& d_in, int from, int width, Mat<float>& dst, int at) {
    dst.middleCols(at, width) += d_in.middleCols(from, width);
}

}  // namespace

Trainer::Trainer(ProgIPModel& model, TrainConfig cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
    model_.audit();
    nn::AdamConfig a;
    a.lr = cfg_.lr;
    for (int i = 0; i < kNumNets; ++i) opt_.emplace_back(model_.weights[i].size(), a);
}

LossReport Trainer::loss(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch) const {
    BatchResult r;
    forward_batch(model_, cfg_, clips, batch, false, r);
    return r.report;
}

LossReport Trainer::step(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch) {
    return run(clips, batch, true);
}

LossReport Trainer::run(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch, bool update) {
    BatchResult r;
    forward_batch(model_, cfg_, clips, batch, update, r);
    if (!update) return r.report;

    std::array<nn::Gradients, kNumNets> grads;
    for (int i = 0; i < kNumNets; ++i) grads[i] = nn::Gradients(model_.nets[i]);

    if (cfg_.detach_between_stages) {
        for (int i = 0; i < kNumNets; ++i) {
            nn::backbone_backward(model_.nets[i], model_.weights[i], r.caches[i], r.d_out[i], grads[i]);
        }
    } else {
        const int m = model_.cfg.window;
        for (int b = 0; b < static_cast<int>(batch.size()); ++b) {
            r.d_out[1].row(b * m + batch[b].w.supervise).head<6>() += r.d_fk_pelvis.row(b);
        }
        // Downstream first so each upstream net sees every consumer's input gradient.
        for (int i : {4, 3, 2, 1, 0}) {
            Mat<float> d_in;
            nn::backbone_backward(model_.nets[i], model_.weights[i], r.caches[i], r.d_out[i], grads[i],
                                  i == 0 ? nullptr : &d_in);
            switch (i) {
                case 4:
                    route(d_in, 45, 96, r.d_out[0], 0);
                    route(d_in, 141, 6, r.d_out[1], 0);
                    break;
                case 3:
                    route(d_in, 45, 96, r.d_out[0], 0);
                    if (model_.cfg.stage3 == Stage3Recipe::Fig1) {
                        route(d_in, 141, 42, r.d_out[2], 0);
                    } else {
                        route(d_in, 141, 24, r.d_out[1], 0);
                        route(d_in, 165, 18, r.d_out[2], 24);
                    }
                    break;
                case 2:
                    route(d_in, 45, 96, r.d_out[0], 0);
                    route(d_in, 141, 24, r.d_out[1], 0);
                    break;
                case 1: route(d_in, 45, 96, r.d_out[0], 0); break;
                default: break;
            }
        }
    }
    for (int i = 0; i < kNumNets; ++i) {
        for (float g : grads[i].flat()) {
            if (!std::isfinite(g)) throw NonFiniteLoss("non-finite gradient in " + net_name(i) + "; step aborted");
        }
    }
    for (int i = 0; i < kNumNets; ++i) opt_[i].step(model_.weights[i].flat(), grads[i].flat());
    ++steps_;
    return r.report;
}

std::vector<LossReport> Trainer::fit(const std::vector<TrainingClip>& clips, const StepCallback& on_step) {
    std::vector<WindowRef> all;
    for (int c = 0; c < static_cast<int>(clips.size()); ++c) {
        if (clips[c].x.rows() < model_.cfg.window) continue;
        for (const auto& w : make_training_windows(static_cast<int>(clips[c].x.rows()), model_.cfg.window,
                                                   model_.cfg.supervise_frame, cfg_.stride)) {
            all.push_back({c, w});
        }
    }
    std::vector<LossReport> history;
    if (all.empty()) {
        if (cfg_.epochs > 0 && !clips.empty()) throw TooShort("no clip is as long as the window");
        return history;
    }
    for (int e = 0; e < cfg_.epochs; ++e) {
        std::vector<WindowRef> order = all;
        shuffle_windows(order, cfg_.seed + static_cast<std::uint64_t>(e));
        for (std::size_t at = 0; at < order.size(); at += cfg_.batch) {
            if (cfg_.max_steps > 0 && steps_ >= cfg_.max_steps) return history;
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg_.batch));
            const std::vector<WindowRef> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            history.push_back(step(clips, batch));
            if (on_step) on_step(steps_, e, history.back());
        }
    }
    return history;
}

std::vector<LossReport> fine_tune(ProgIPModel& model, const std::vector<TrainingClip>& real_clips,
                                  const TrainConfig& cfg) {
    if (cfg.epochs == 0) return {};
    Trainer t(model, cfg);
    return t.fit(real_clips);
}

}  // namespace progip
