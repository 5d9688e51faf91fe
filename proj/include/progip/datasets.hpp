#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "progip/motion.hpp"

namespace progip {

inline constexpr int kCanonicalFormatVersion = 1;

/// Directory layout: meta.json, poses.f32, and imu_acc.f32 + imu_rot.f32 when
/// the sequence carries real IMU data. Blobs are little-endian float32, row-major.
MotionSequence load_canonical(const std::filesystem::path& dir);
void save_canonical(const std::filesystem::path& dir, const MotionSequence& seq);

/// Rotations are slerped between neighbouring source frames, the IMU channel
/// is slerped (orientation) and linearly interpolated (acceleration). First and
/// last frames are kept.
MotionSequence resample(const MotionSequence& seq, double target_hz = 60.0);

/// Left-multiplies the pelvis rotation (and any IMU channel) by G.
MotionSequence align_orientation(const MotionSequence& seq, const RotMatrix& g);

/// Default z-up to y-up axis permutation applied to AMASS-style data.
RotMatrix amass_to_yup();

enum class DatasetKind { Amass, Dip, TotalCapture };

struct CatalogEntry {
    std::string path;  // relative to the catalog file
    DatasetKind dataset = DatasetKind::Amass;
    std::string subset;
    std::string subject;
    std::string label;
    int n_frames = 0;
};

struct Catalog {
    std::vector<CatalogEntry> entries;
    std::filesystem::path root;

    static Catalog load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;
    [[nodiscard]] std::filesystem::path resolve(const CatalogEntry& e) const { return root / e.path; }
};

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct SplitProtocol {
    std::set<std::string> amass_test_subsets = {"HumanEval", "Transition"};
    std::set<int> dip_val_subjects = {9, 10};
};

struct Splits {
    std::vector<CatalogEntry> train, val, test;
};

/// AMASS: listed subsets to test, the rest to train. DIP: listed subjects to
/// val, the rest to train. TotalCapture: test only. Throws ProtocolError when
/// a dataset is present but a required subset or subject is absent.
Splits build_splits(const Catalog& catalog, const SplitProtocol& protocol = {});

/// Trailing integer of a subject id ("s_09" -> 9); -1 when none.
int subject_number(const std::string& subject);

}  // namespace progip
