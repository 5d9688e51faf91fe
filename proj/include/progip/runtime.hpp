#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "progip/imusynth.hpp"
#include "progip/progressive.hpp"

namespace progip {

struct TimingStats {
    std::uint64_t frames_in = 0;
    std::uint64_t poses_out = 0;
    std::uint64_t dropped = 0;
    std::vector<double> infer_us;

    [[nodiscard]] double median_us() const;
};

/// Sliding-window state for online inference. Holds the last M feature rows.
class StreamState {
public:
    explicit StreamState(const PipelineConfig& cfg, double framerate = 60.0);

    [[nodiscard]] int buffered() const { return static_cast<int>(rows_.size()); }
    [[nodiscard]] long frames_seen() const { return frames_; }
    [[nodiscard]] const TimingStats& stats() const { return stats_; }
    TimingStats& stats() { return stats_; }
    [[nodiscard]] double framerate() const { return hz_; }

private:
    friend struct StreamAccess;
    PipelineConfig cfg_;
    double hz_;
    std::deque<std::array<float, kInputDim>> rows_;
    std::optional<ImuFrame> prev_;
    long frames_ = 0;
    TimingStats stats_;
};

struct StreamOutput {
    long frame = 0;        // index of the input frame this pose belongs to
    double t = 0.0;        // that frame's time, frame / framerate
    ReducedPose reduced;
    FullPose pose;
};

/// Pushes one calibrated frame. Once M frames are buffered, runs the pipeline
/// and returns the pose of the frame M - N frames behind the newest one.
std::optional<StreamOutput> stream_step(StreamState& state, const ImuFrame& frame, const ProgIPModel& model);

/// Reference batch path: every stride-1 window of `x` (frames x 45) through the
/// same single-window pipeline. Element k is the pose of frame k + N - 1.
std::vector<ReducedPose> evaluate_windows(const ProgIPModel& model, const FeatureRows& x);

/// One line of the live wire format: t, sensor_id, ax, ay, az, r00 .. r22.
struct WireRecord {
    double t = 0.0;
    int sensor = 0;
    Vec3 acc = Vec3::Zero();
    RotMatrix rot = RotMatrix::Identity();
};

/// Returns nullopt for blank lines and '#' comments; throws FormatError otherwise.
std::optional<WireRecord> parse_wire_line(std::string_view line);

/// Groups wire records into frames; a frame is complete once all three sensors
/// report the same timestamp. Incomplete frames superseded by a newer
/// timestamp are discarded and counted.
class FrameAssembler {
public:
    struct Timed {
        double t;
        ImuFrame frame;
    };
    std::optional<Timed> add(const WireRecord& r);
    [[nodiscard]] std::uint64_t incomplete() const { return incomplete_; }

private:
    std::optional<double> t_;
    ImuFrame pending_ = ImuFrame::identity();
    unsigned seen_ = 0;
    std::uint64_t incomplete_ = 0;
};

/// Multi-producer bounded FIFO. With drop_oldest, a push into a full queue
/// evicts the oldest element instead of blocking.
template <typename T>
class BoundedQueue {
public:
    BoundedQueue(std::size_t capacity, bool drop_oldest) : cap_(capacity), drop_(drop_oldest) {}

    /// Returns true when an old element was evicted to make room.
    bool push(T v) {
        std::unique_lock lk(mu_);
        bool evicted = false;
        if (drop_) {
            if (q_.size() >= cap_) {
                q_.pop_front();
                evicted = true;
                ++dropped_;
            }
        } else {
            not_full_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
        }
        q_.push_back(std::move(v));
        not_empty_.notify_one();
        return evicted;
    }

    /// Blocks until an element arrives or the queue is closed and drained.
    std::optional<T> pop() {
        std::unique_lock lk(mu_);
        not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return std::nullopt;
        T v = std::move(q_.front());
        q_.pop_front();
        not_full_.notify_one();
        return v;
    }

    void close() {
        std::lock_guard lk(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    [[nodiscard]] std::uint64_t dropped() const {
        std::lock_guard lk(mu_);
        return dropped_;
    }
    [[nodiscard]] std::size_t size() const {
        std::lock_guard lk(mu_);
        return q_.size();
    }

private:
    std::size_t cap_;
    bool drop_;
    mutable std::mutex mu_;
    std::condition_variable not_empty_, not_full_;
    std::deque<T> q_;
    bool closed_ = false;
    std::uint64_t dropped_ = 0;
};

struct LiveOptions {
    double framerate = 60.0;
    /// Leading frames used for T-pose calibration; 0 disables calibration.
    int calibrate_frames = 0;
    /// Queue capacity in frames; 0 means 2 * M.
    std::size_t capacity = 0;
    /// Block the reader instead of dropping (offline replay).
    bool lossless = false;
};

/// Source of raw text lines; returns false at end of input.
using LineSource = std::function<bool(std::string& line)>;

/// Ingestion thread reads `source` into a bounded queue; the calling thread
/// runs inference and writes one JSONL pose per emitted frame to `out`.
TimingStats run_live(const ProgIPModel& model, const LineSource& source, std::ostream& out, const LiveOptions& opts,
                     std::ostream* log = nullptr);

/// Lines from UDP datagrams on `port` (IPv4, any address). Stops when `stop` is set.
LineSource udp_line_source(int port, const std::atomic<bool>& stop);

}  // namespace progip
