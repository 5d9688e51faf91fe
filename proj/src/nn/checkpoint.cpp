#include "progip/nn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "progip/errors.hpp"

namespace progip::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'R', 'O', 'G', 'I', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.write(b, 4);
}

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t at) {
    std::uint32_t v = 0;
    std::memcpy(&v, buf.data() + at, 4);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const BackboneConfig& cfg, const BackboneWeights& weights) {
    nlohmann::json header;
    header["format_version"] = kVersion;
    header["config"] = cfg.to_json();
    auto tensors = nlohmann::json::array();
    for (const auto& t : weights.layout().tensors) {
        tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset_bytes", t.offset * sizeof(float)}});
    }
    header["tensors"] = tensors;
    header["blob_bytes"] = weights.size() * sizeof(float);
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto flat = weights.flat();
    out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(float)));
    if (!out) {
        throw IoError("short write on checkpoint " + path.string());
    }
}

std::pair<BackboneConfig, BackboneWeights> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
        throw FormatError("checkpoint: bad magic in " + path.string());
    }
    if (get_u32(buf, 8) != kVersion) {
        throw FormatError("checkpoint: unsupported format version");
    }
    const std::size_t header_len = get_u32(buf, 12);
    if (16 + header_len > buf.size()) {
        throw FormatError("checkpoint: truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    const BackboneConfig cfg = BackboneConfig::from_json(header.at("config"));
    auto layout = std::make_shared<const ParamLayout>(cfg);

    const auto& tensors = header.at("tensors");
    if (tensors.size() != layout->tensors.size()) {
        throw FormatError("checkpoint: tensor manifest does not match config");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& t = layout->tensors[i];
        const auto& m = tensors[i];
        if (m.at("name").get<std::string>() != t.name || m.at("shape")[0].get<int>() != t.rows ||
            m.at("shape")[1].get<int>() != t.cols || m.at("offset_bytes").get<std::size_t>() != t.offset * sizeof(float)) {
            throw FormatError("checkpoint: manifest entry mismatch for " + t.name);
        }
    }
    const std::size_t blob_bytes = layout->total * sizeof(float);
    if (header.at("blob_bytes").get<std::size_t>() != blob_bytes || buf.size() != 16 + header_len + blob_bytes) {
        throw FormatError("checkpoint: parameter blob has wrong size");
    }
    std::vector<float> data(layout->total);
    std::memcpy(data.data(), buf.data() + 16 + header_len, blob_bytes);
    return {cfg, BackboneWeights(std::move(layout), std::move(data))};
}

}  // namespace progip::nn
