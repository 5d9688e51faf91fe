#include "progip/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <exception>
#include <ostream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include "progip/errors.hpp"
#include "progip/export.hpp"

namespace progip {

double TimingStats::median_us() const {
    if (infer_us.empty()) return 0.0;
    std::vector<double> v = infer_us;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

StreamState::StreamState(const PipelineConfig& cfg, double framerate) : cfg_(cfg), hz_(framerate) {
    cfg_.validate();
    if (!(framerate > 0.0)) throw ShapeMismatch("stream framerate must be positive");
}

struct StreamAccess {
    static std::optional<StreamOutput> step(StreamState& s, const ImuFrame& frame, const ProgIPModel& model) {
        if (model.cfg.window != s.cfg_.window || model.cfg.supervise_frame != s.cfg_.supervise_frame) {
            throw ShapeMismatch("stream state and model disagree on the window");
        }
        double row[kInputDim];
        feature_row(frame, s.prev_ ? &*s.prev_ : nullptr, model.cfg.acc_scale, row);
        std::array<float, kInputDim> r;
        for (int k = 0; k < kInputDim; ++k) r[k] = static_cast<float>(row[k]);
        s.prev_ = frame;
        s.rows_.push_back(r);
        if (static_cast<int>(s.rows_.size()) > s.cfg_.window) s.rows_.pop_front();
        const long index = s.frames_++;
        ++s.stats_.frames_in;
        if (static_cast<int>(s.rows_.size()) < s.cfg_.window) return std::nullopt;

        nn::Mat<float> window(s.cfg_.window, kInputDim);
        for (int t = 0; t < s.cfg_.window; ++t) {
            std::copy(s.rows_[t].begin(), s.rows_[t].end(), window.row(t).data());
        }
        const auto t0 = std::chrono::steady_clock::now();
        StreamOutput out;
        out.reduced = run_stages(model, window);
        out.pose = decode_pose(model.skel, out.reduced);
        const auto t1 = std::chrono::steady_clock::now();
        s.stats_.infer_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        ++s.stats_.poses_out;
        out.frame = index - s.cfg_.lookahead();
        out.t = static_cast<double>(out.frame) / s.hz_;
        return out;
    }
};

std::optional<StreamOutput> stream_step(StreamState& state, const ImuFrame& frame, const ProgIPModel& model) {
    return StreamAccess::step(state, frame, model);
}

std::vector<ReducedPose> evaluate_windows(const ProgIPModel& model, const FeatureRows& x) {
    const int m = model.cfg.window;
    if (x.cols() != kInputDim) throw ShapeMismatch("evaluate_windows: features must have 45 columns");
    std::vector<ReducedPose> out;
    for (Eigen::Index s = 0; s + m <= x.rows(); ++s) {
        const nn::Mat<float> window = x.middleRows(s, m).cast<float>();
        out.push_back(run_stages(model, window));
    }
    return out;
}

std::optional<WireRecord> parse_wire_line(std::string_view line) {
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos || line[first] == '#') return std::nullopt;
    double v[14];
    int n = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t end = line.find(',', pos);
        if (end == std::string_view::npos) end = line.size();
        std::string_view tok = line.substr(pos, end - pos);
        while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.front()))) tok.remove_prefix(1);
        while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back()))) tok.remove_suffix(1);
        if (n >= 14) throw FormatError("wire record has more than 14 fields");
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v[n]);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
            throw FormatError("wire record field " + std::to_string(n) + " is not a number: '" + std::string(tok) + "'");
        }
        ++n;
        pos = end + 1;
    }
    if (n != 14) throw FormatError("wire record needs 14 fields, found " + std::to_string(n));
    WireRecord r;
    r.t = v[0];
    if (v[1] != std::floor(v[1]) || v[1] < 0 || v[1] >= kSensors) {
        throw FormatError("wire record sensor id must be 0, 1 or 2");
    }
    r.sensor = static_cast<int>(v[1]);
    r.acc = Vec3(v[2], v[3], v[4]);
    for (int i = 0; i < 9; ++i) r.rot(i / 3, i % 3) = v[5 + i];
    for (double x : v) {
        if (!std::isfinite(x)) throw FormatError("wire record contains a non-finite value");
    }
    return r;
}

std::optional<FrameAssembler::Timed> FrameAssembler::add(const WireRecord& r) {
    if (!t_ || *t_ != r.t) {
        if (t_ && seen_ != 0) ++incomplete_;
        t_ = r.t;
        seen_ = 0;
        pending_ = ImuFrame::identity();
    }
    pending_.acc[r.sensor] = r.acc;
    pending_.rot[r.sensor] = orthonormalize(r.rot);
    seen_ |= 1u << r.sensor;
    if (seen_ == (1u << kSensors) - 1) {
        seen_ = 0;
        Timed out{*t_, pending_};
        t_.reset();
        return out;
    }
    return std::nullopt;
}

TimingStats run_live(const ProgIPModel& model, const LineSource& source, std::ostream& out, const LiveOptions& opts,
                     std::ostream* log) {
    const std::size_t cap = opts.capacity > 0 ? opts.capacity : static_cast<std::size_t>(2 * model.cfg.window);
    BoundedQueue<FrameAssembler::Timed> queue(cap, !opts.lossless);
    std::exception_ptr ingest_error;
    std::uint64_t incomplete = 0;

    std::thread ingest([&] {
        try {
            FrameAssembler assembler;
            std::string line;
            while (source(line)) {
                const auto rec = parse_wire_line(line);
                if (!rec) continue;
                if (auto f = assembler.add(*rec)) queue.push(std::move(*f));
            }
            incomplete = assembler.incomplete();
        } catch (...) {
            ingest_error = std::current_exception();
        }
        queue.close();
    });

    StreamState state(model.cfg, opts.framerate);
    std::vector<ImuFrame> rest;
    std::optional<Calibration> cal;
    if (opts.calibrate_frames <= 0) cal = Calibration{};
    try {
        while (auto item = queue.pop()) {
            if (!cal) {
                rest.push_back(item->frame);
                if (static_cast<int>(rest.size()) == opts.calibrate_frames) {
                    cal = calibrate_tpose(rest);
                    if (log) *log << "calibrated from " << rest.size() << " rest frames\n";
                }
                continue;
            }
            if (auto pose = stream_step(state, align_global_frame(item->frame, *cal), model)) {
                out << jsonl_line({pose->frame, pose->t, pose->pose}) << '\n';
                out.flush();
            }
        }
    } catch (...) {
        queue.close();
        ingest.join();
        throw;
    }
    ingest.join();
    if (ingest_error) std::rethrow_exception(ingest_error);
    if (!cal && log) *log << "input ended before calibration completed\n";

    TimingStats stats = state.stats();
    stats.dropped = queue.dropped();
    if (log && incomplete > 0) *log << incomplete << " incomplete frames discarded\n";
    return stats;
}

LineSource udp_line_source(int port, const std::atomic<bool>& stop) {
    const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        const std::string err = std::strerror(errno);
        ::close(fd);
        throw IoError("bind UDP port " + std::to_string(port) + ": " + err);
    }
    timeval tv{0, 200000};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);

    auto pending = std::make_shared<std::deque<std::string>>();
    auto sock = std::shared_ptr<int>(new int(fd), [](int* p) {
        ::close(*p);
        delete p;
    });
    return [pending, sock, &stop](std::string& line) {
        char buf[65536];
        while (pending->empty()) {
            if (stop.load()) return false;
            const ssize_t n = ::recv(*sock, buf, sizeof buf, 0);
            if (n < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
                throw IoError(std::string("recv: ") + std::strerror(errno));
            }
            std::string_view data(buf, static_cast<std::size_t>(n));
            while (!data.empty()) {
                const auto nl = data.find('\n');
                pending->emplace_back(data.substr(0, nl));
                if (nl == std::string_view::npos) break;
                data.remove_prefix(nl + 1);
            }
        }
        line = std::move(pending->front());
        pending->pop_front();
        return true;
    };
}

}  // namespace progip
