#include "progip/datasets.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "progip/errors.hpp"

namespace progip {

static_assert(std::endian::native == std::endian::little, "canonical blobs assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_blob(const fs::path& file, const PoseRows& m) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!out) throw IoError("short write to " + file.string());
}

PoseRows read_blob(const fs::path& file, int rows, int cols) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("missing " + file.filename().string());
    const auto expect = static_cast<std::uintmax_t>(rows) * cols * sizeof(float);
    const auto size = fs::file_size(file);
    if (size != expect) {
        throw FormatError(file.filename().string() + ": expected " + std::to_string(expect) + " bytes, found " +
                          std::to_string(size));
    }
    PoseRows m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expect));
    if (!in) throw FormatError("short read from " + file.string());
    return m;
}

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("missing " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(file.filename().string() + ": " + e.what());
    }
}

}  // namespace

MotionSequence load_canonical(const fs::path& dir) {
    const json meta = read_json(dir / "meta.json");
    MotionSequence seq;
    int n = 0;
    bool imu = false;
    try {
        if (meta.at("format_version").get<int>() != kCanonicalFormatVersion) {
            throw FormatError("unsupported format_version " + meta.at("format_version").dump());
        }
        if (meta.at("n_joints").get<int>() != kSmplJoints) throw FormatError("n_joints must be 24");
        seq.framerate = meta.at("framerate").get<double>();
        n = meta.at("n_frames").get<int>();
        seq.subject = meta.value("subject", "");
        seq.label = meta.value("label", "");
        seq.subset = meta.value("subset", "");
        imu = meta.value("has_imu", false);
    } catch (const json::exception& e) {
        throw FormatError(std::string("meta.json: ") + e.what());
    }
    if (n < 1) throw FormatError("n_frames must be >= 1");

    seq.poses = read_blob(dir / "poses.f32", n, 3 * kSmplJoints);
    if (imu) {
        seq.imu_acc = read_blob(dir / "imu_acc.f32", n, 3 * kSensors);
        seq.imu_rot = read_blob(dir / "imu_rot.f32", n, 9 * kSensors);
    }
    seq.validate();
    return seq;
}

void save_canonical(const fs::path& dir, const MotionSequence& seq) {
    seq.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    json meta = {{"format_version", kCanonicalFormatVersion},
                 {"framerate", seq.framerate},
                 {"n_frames", seq.n_frames()},
                 {"n_joints", kSmplJoints},
                 {"subject", seq.subject},
                 {"label", seq.label},
                 {"has_imu", seq.has_imu()}};
    if (!seq.subset.empty()) meta["subset"] = seq.subset;
    {
        std::ofstream out(dir / "meta.json", std::ios::trunc);
        if (!out) throw IoError("cannot write meta.json in " + dir.string());
        out << meta.dump(2) << '\n';
    }
    write_blob(dir / "poses.f32", seq.poses);
    if (seq.has_imu()) {
        write_blob(dir / "imu_acc.f32", *seq.imu_acc);
        write_blob(dir / "imu_rot.f32", *seq.imu_rot);
    } else {
        fs::remove(dir / "imu_acc.f32");
        fs::remove(dir / "imu_rot.f32");
    }
}

MotionSequence resample(const MotionSequence& seq, double target_hz) {
    if (!(target_hz > 0.0) || !(seq.framerate > 0.0)) throw FormatError("resample: framerates must be positive");
    if (seq.framerate == target_hz || seq.n_frames() < 2) {
        MotionSequence out = seq;
        out.framerate = target_hz;
        return out;
    }
    const int n_in = seq.n_frames();
    const int n_out = static_cast<int>(std::lround((n_in - 1) * target_hz / seq.framerate)) + 1;
    MotionSequence out(n_out, target_hz);
    out.subject = seq.subject;
    out.label = seq.label;
    out.subset = seq.subset;

    const double step = n_out > 1 ? static_cast<double>(n_in - 1) / (n_out - 1) : 0.0;
    for (int k = 0; k < n_out; ++k) {
        const double src = k == n_out - 1 ? n_in - 1 : k * step;
        const int i0 = std::min(static_cast<int>(std::floor(src)), n_in - 1);
        const int i1 = std::min(i0 + 1, n_in - 1);
        const double a = src - i0;
        if (a == 0.0) {
            out.poses.row(k) = seq.poses.row(i0);
            if (seq.has_imu()) out.set_imu_frame(k, seq.imu_frame(i0));
            continue;
        }
        for (int j = 0; j < kSmplJoints; ++j) {
            const RotMatrix r = slerp(axis_angle_to_rot(seq.axis_angle(i0, j)), axis_angle_to_rot(seq.axis_angle(i1, j)), a);
            out.set_axis_angle(k, j, rot_to_axis_angle(r));
        }
        if (seq.has_imu()) {
            const ImuFrame f0 = seq.imu_frame(i0);
            const ImuFrame f1 = seq.imu_frame(i1);
            ImuFrame f;
            for (int s = 0; s < kSensors; ++s) {
                f.acc[s] = (1.0 - a) * f0.acc[s] + a * f1.acc[s];
                f.rot[s] = slerp(orthonormalize(f0.rot[s]), orthonormalize(f1.rot[s]), a);
            }
            out.set_imu_frame(k, f);
        }
    }
    return out;
}

MotionSequence align_orientation(const MotionSequence& seq, const RotMatrix& g) {
    MotionSequence out = seq;
    for (int t = 0; t < seq.n_frames(); ++t) {
        out.set_axis_angle(t, 0, rot_to_axis_angle(g * axis_angle_to_rot(seq.axis_angle(t, 0))));
        if (seq.has_imu()) {
            ImuFrame f = seq.imu_frame(t);
            for (int s = 0; s < kSensors; ++s) {
                f.acc[s] = g * f.acc[s];
                f.rot[s] = g * f.rot[s];
            }
            out.set_imu_frame(t, f);
        }
    }
    return out;
}

RotMatrix amass_to_yup() { return rot_x(-std::numbers::pi / 2.0); }

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::Amass: return "amass";
        case DatasetKind::Dip: return "dip";
        case DatasetKind::TotalCapture: return "totalcapture";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "amass") return DatasetKind::Amass;
    if (s == "dip") return DatasetKind::Dip;
    if (s == "totalcapture") return DatasetKind::TotalCapture;
    throw ProtocolError("unknown dataset kind '" + s + "'");
}

Catalog Catalog::load(const fs::path& file) {
    const json j = read_json(file);
    Catalog c;
    c.root = file.parent_path();
    try {
        if (j.at("format_version").get<int>() != kCanonicalFormatVersion) {
            throw FormatError("catalog: unsupported format_version");
        }
        for (const auto& e : j.at("entries")) {
            CatalogEntry ce;
            ce.path = e.at("path").get<std::string>();
            ce.dataset = dataset_kind_from_string(e.at("dataset").get<std::string>());
            ce.subset = e.value("subset", "");
            ce.subject = e.value("subject", "");
            ce.label = e.value("label", "");
            ce.n_frames = e.value("n_frames", 0);
            c.entries.push_back(std::move(ce));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("catalog: ") + e.what());
    }
    return c;
}

void Catalog::save(const fs::path& file) const {
    json j = {{"format_version", kCanonicalFormatVersion}, {"entries", json::array()}};
    for (const auto& e : entries) {
        j["entries"].push_back({{"path", e.path},
                                {"dataset", to_string(e.dataset)},
                                {"subset", e.subset},
                                {"subject", e.subject},
                                {"label", e.label},
                                {"n_frames", e.n_frames}});
    }
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

int subject_number(const std::string& subject) {
    std::size_t end = subject.size();
    std::size_t begin = end;
    while (begin > 0 && std::isdigit(static_cast<unsigned char>(subject[begin - 1]))) --begin;
    if (begin == end) return -1;
    return std::stoi(subject.substr(begin, end - begin));
}

Splits build_splits(const Catalog& catalog, const SplitProtocol& protocol) {
    Splits out;
    bool any_amass = false, any_dip = false;
    std::set<std::string> seen_subsets;
    std::set<int> seen_subjects;
    for (const auto& e : catalog.entries) {
        switch (e.dataset) {
            case DatasetKind::Amass:
                any_amass = true;
                if (protocol.amass_test_subsets.count(e.subset)) {
                    seen_subsets.insert(e.subset);
                    out.test.push_back(e);
                } else {
                    out.train.push_back(e);
                }
                break;
            case DatasetKind::Dip: {
                any_dip = true;
                const int id = subject_number(e.subject);
                if (protocol.dip_val_subjects.count(id)) {
                    seen_subjects.insert(id);
                    out.val.push_back(e);
                } else {
                    out.train.push_back(e);
                }
                break;
            }
            case DatasetKind::TotalCapture: out.test.push_back(e); break;
        }
    }
    if (any_amass) {
        for (const auto& s : protocol.amass_test_subsets) {
            if (!seen_subsets.count(s)) throw ProtocolError("AMASS test subset '" + s + "' missing from catalog");
        }
    }
    if (any_dip) {
        for (int s : protocol.dip_val_subjects) {
            if (!seen_subjects.count(s)) {
                throw ProtocolError("DIP validation subject " + std::to_string(s) + " missing from catalog");
            }
        }
    }
    return out;
}

}  // namespace progip
