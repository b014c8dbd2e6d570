#pragma once

// PFT tensor files, label-spec JSON and feature collections.
//
// PFT layout (little-endian):
//   "PFT1" | u8 dtype | u8 ndim (2 or 3) | ndim x u32 dims (h, w[, c]) | payload
// dtype codes: 0 float32, 1 uint16, 2 uint8, 3 uint32 (panoptic maps whose
// ids exceed 16 bits, e.g. ignore pixels).

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "panfuse/core.hpp"

namespace panfuse {

class LoadError : public Error {
public:
    enum class Kind { Io, BadMagic, Truncated, UnsupportedDType, BadHeader, Format };
    LoadError(Kind kind, const std::string& what) : Error("load", what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class WriteError : public Error {
public:
    explicit WriteError(const std::string& what) : Error("write", what) {}
};

namespace detail {

inline constexpr std::array<char, 4> kPftMagic{'P', 'F', 'T', '1'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                 std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>;
    const U bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu));
}

template <typename T>
T get_le(const unsigned char* p) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                 std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    return std::bit_cast<T>(bits);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadError::Kind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw WriteError("cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw WriteError("failed writing " + path.string());
}

template <typename T>
Raster<T> decode_payload(const unsigned char* p, std::size_t available, Shape s,
                         const std::string& origin) {
    const std::size_t need = s.size() * sizeof(T);
    if (available < need)
        throw LoadError(LoadError::Kind::Truncated,
                        origin + ": payload has " + std::to_string(available) + " bytes, expected " +
                            std::to_string(need));
    if (available > need)
        throw LoadError(LoadError::Kind::Format, origin + ": trailing bytes after payload");
    std::vector<T> data(s.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_le<T>(p + i * sizeof(T));
    return Raster<T>(s, std::move(data));
}

}  // namespace detail

/// Encodes a map to PFT bytes. Single-channel maps are written with ndim 2.
inline std::vector<unsigned char> encode_tensor(const DenseMap& map) {
    std::vector<unsigned char> out;
    const Shape s = shape(map);
    if (s.height == 0 || s.width == 0 || s.channels == 0)
        throw ValidationError("cannot encode zero-sized tensor");
    for (auto dim : {s.height, s.width, s.channels})
        if (dim > std::numeric_limits<std::uint32_t>::max())
            throw ValidationError("tensor dimension exceeds 32 bits");
    out.insert(out.end(), detail::kPftMagic.begin(), detail::kPftMagic.end());
    out.push_back(static_cast<unsigned char>(dtype(map)));
    const bool three = s.channels != 1;
    out.push_back(three ? 3 : 2);
    detail::put_le(out, static_cast<std::uint32_t>(s.height));
    detail::put_le(out, static_cast<std::uint32_t>(s.width));
    if (three) detail::put_le(out, static_cast<std::uint32_t>(s.channels));
    std::visit([&](const auto& r) {
        for (auto v : r.values()) detail::put_le(out, v);
    }, map);
    return out;
}

inline DenseMap decode_tensor(const std::vector<unsigned char>& bytes,
                              const std::string& origin = "<memory>") {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), detail::kPftMagic.data(), 4) != 0)
        throw LoadError(LoadError::Kind::BadMagic, origin + ": missing PFT1 magic");
    const unsigned code = bytes[4];
    const unsigned ndim = bytes[5];
    if (code > 3)
        throw LoadError(LoadError::Kind::UnsupportedDType,
                        origin + ": unsupported dtype code " + std::to_string(code));
    if (ndim != 2 && ndim != 3)
        throw LoadError(LoadError::Kind::BadHeader, origin + ": ndim must be 2 or 3");
    const std::size_t header = 6 + 4 * ndim;
    if (bytes.size() < header)
        throw LoadError(LoadError::Kind::Truncated, origin + ": truncated header");
    Shape s;
    s.height = detail::get_le<std::uint32_t>(bytes.data() + 6);
    s.width = detail::get_le<std::uint32_t>(bytes.data() + 10);
    s.channels = ndim == 3 ? detail::get_le<std::uint32_t>(bytes.data() + 14) : 1;
    if (s.height == 0 || s.width == 0 || s.channels == 0)
        throw LoadError(LoadError::Kind::BadHeader, origin + ": zero-sized dimension");
    const unsigned char* p = bytes.data() + header;
    const std::size_t avail = bytes.size() - header;
    switch (static_cast<DType>(code)) {
        case DType::Float32: return detail::decode_payload<float>(p, avail, s, origin);
        case DType::UInt16: return detail::decode_payload<std::uint16_t>(p, avail, s, origin);
        case DType::UInt8: return detail::decode_payload<std::uint8_t>(p, avail, s, origin);
        case DType::UInt32: return detail::decode_payload<std::uint32_t>(p, avail, s, origin);
    }
    throw LoadError(LoadError::Kind::UnsupportedDType, origin + ": unsupported dtype");
}

inline DenseMap read_tensor(const std::filesystem::path& path) {
    return decode_tensor(detail::read_file(path), path.string());
}

inline void write_tensor(const DenseMap& map, const std::filesystem::path& path) {
    const auto bytes = encode_tensor(map);
    detail::write_file(path, bytes.data(), bytes.size());
}

/// Panoptic maps go to disk as uint16 when every id fits, uint32 otherwise.
inline DenseMap panoptic_to_dense(const PanopticMap& pan) {
    const bool fits = std::all_of(pan.values().begin(), pan.values().end(),
                                  [](PanId v) { return v <= 0xFFFFu; });
    if (!fits) return pan;
    std::vector<std::uint16_t> narrow(pan.values().begin(), pan.values().end());
    return Raster<std::uint16_t>(pan.shape(), std::move(narrow));
}

inline PanopticMap read_panoptic(const std::filesystem::path& path) {
    auto m = as<PanId>(read_tensor(path), "panoptic map");
    if (m.channels() != 1) throw ValidationError(path.string() + ": panoptic map must be 2-D");
    return m;
}

// ---------------------------------------------------------------------------
// Label spec JSON: {"classes":[{"id":0,"name":"road","thing":false},...],"ignore_id":255}

inline LabelSpec label_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("classes") || !j["classes"].is_array())
        throw LoadError(LoadError::Kind::Format, "label spec needs a 'classes' array");
    std::vector<ClassInfo> classes;
    for (const auto& c : j["classes"]) {
        ClassInfo info;
        info.id = c.at("id").get<ClassId>();
        info.name = c.value("name", std::string{});
        info.is_thing = c.value("thing", false);
        classes.push_back(std::move(info));
    }
    return LabelSpec(std::move(classes), j.value("ignore_id", 255));
}

inline nlohmann::json to_json(const LabelSpec& labels) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : labels.classes())
        classes.push_back({{"id", c.id}, {"name", c.name}, {"thing", c.is_thing}});
    return {{"classes", classes}, {"ignore_id", labels.ignore_id()}};
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(LoadError::Kind::Io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadError::Kind::Format, path.string() + ": " + e.what());
    }
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    const std::string text = j.dump(2) + "\n";
    detail::write_file(path, text.data(), text.size());
}

inline LabelSpec read_label_spec(const std::filesystem::path& path) {
    try {
        return label_spec_from_json(read_json(path));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadError::Kind::Format, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Feature collections: 2-D float32 PFT (rows = images) plus an id list.

inline std::vector<FeatureVector> features_from_rows(const FloatMap& rows,
                                                     const std::vector<std::string>& ids) {
    if (rows.channels() != 1) throw ValidationError("feature table must be 2-D");
    if (rows.height() != ids.size())
        throw ValidationError("feature table has " + std::to_string(rows.height()) +
                              " rows but " + std::to_string(ids.size()) + " ids");
    std::vector<FeatureVector> out(rows.height());
    for (std::size_t r = 0; r < rows.height(); ++r) {
        out[r].image_id = ids[r];
        out[r].values.assign(rows.values().begin() + r * rows.width(),
                             rows.values().begin() + (r + 1) * rows.width());
        for (float v : out[r].values)
            if (!std::isfinite(v)) throw ValidationError("non-finite feature for " + ids[r]);
    }
    return out;
}

}  // namespace panfuse
