#pragma once

// Shared domain types: label catalog, dense raster containers, panoptic id
// codec and image feature vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace panfuse {

/// Base of every error raised by the library. `stage()` names the pipeline
/// step or subsystem that failed.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

using ClassId = std::uint16_t;
using PanId = std::uint32_t;

// ---------------------------------------------------------------------------
// LabelSpec

struct ClassInfo {
    ClassId id = 0;
    std::string name;
    bool is_thing = false;
};

/// Class catalog. Ids are contiguous from 0; `ignore_id` lies outside them.
class LabelSpec {
public:
    LabelSpec() = default;

    LabelSpec(std::vector<ClassInfo> classes, int ignore_id)
        : classes_(std::move(classes)), ignore_id_(ignore_id) {
        if (classes_.empty()) throw ValidationError("label spec needs at least one class");
        std::sort(classes_.begin(), classes_.end(),
                  [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            if (classes_[i].id != i)
                throw ValidationError("class ids must be unique and contiguous from 0");
        }
        if (ignore_id_ < 0 || ignore_id_ > 65535)
            throw ValidationError("ignore_id must fit in 16 bits");
        if (static_cast<std::size_t>(ignore_id_) < classes_.size())
            throw ValidationError("ignore_id collides with a class id");
    }

    std::size_t n_classes() const noexcept { return classes_.size(); }
    ClassId ignore_id() const noexcept { return static_cast<ClassId>(ignore_id_); }
    const std::vector<ClassInfo>& classes() const noexcept { return classes_; }

    bool is_valid(int id) const noexcept {
        return id >= 0 && static_cast<std::size_t>(id) < classes_.size();
    }
    bool is_thing(int id) const noexcept { return is_valid(id) && classes_[id].is_thing; }
    bool is_stuff(int id) const noexcept { return is_valid(id) && !classes_[id].is_thing; }
    const ClassInfo& at(int id) const {
        if (!is_valid(id)) throw ValidationError("unknown class id " + std::to_string(id));
        return classes_[id];
    }

    friend bool operator==(const LabelSpec& a, const LabelSpec& b) {
        if (a.ignore_id_ != b.ignore_id_ || a.classes_.size() != b.classes_.size()) return false;
        for (std::size_t i = 0; i < a.classes_.size(); ++i) {
            const auto& x = a.classes_[i];
            const auto& y = b.classes_[i];
            if (x.id != y.id || x.name != y.name || x.is_thing != y.is_thing) return false;
        }
        return true;
    }

private:
    std::vector<ClassInfo> classes_;
    int ignore_id_ = 255;
};

// ---------------------------------------------------------------------------
// Raster containers

enum class DType : std::uint8_t { Float32 = 0, UInt16 = 1, UInt8 = 2, UInt32 = 3 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::Float32; }
template <>
constexpr DType dtype_of<std::uint16_t>() { return DType::UInt16; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::UInt8; }
template <>
constexpr DType dtype_of<std::uint32_t>() { return DType::UInt32; }

inline const char* dtype_name(DType d) {
    switch (d) {
        case DType::Float32: return "float32";
        case DType::UInt16: return "uint16";
        case DType::UInt8: return "uint8";
        case DType::UInt32: return "uint32";
    }
    return "?";
}

struct Shape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;

    std::size_t pixels() const noexcept { return height * width; }
    std::size_t size() const noexcept { return height * width * channels; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
           std::to_string(s.channels);
}

/// Row-major (y, x, channel) raster with a fixed element type.
template <typename T>
class Raster {
public:
    using value_type = T;

    Raster() = default;
    Raster(std::size_t h, std::size_t w, std::size_t c = 1, T fill = T{})
        : shape_{h, w, c}, data_(h * w * c, fill) {
        if (h == 0 || w == 0 || c == 0) throw ValidationError("raster dimensions must be positive");
    }
    Raster(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        if (s.height == 0 || s.width == 0 || s.channels == 0)
            throw ValidationError("raster dimensions must be positive");
        if (data_.size() != s.size())
            throw ValidationError("raster data length " + std::to_string(data_.size()) +
                                  " does not match shape " + to_string(s));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t height() const noexcept { return shape_.height; }
    std::size_t width() const noexcept { return shape_.width; }
    std::size_t channels() const noexcept { return shape_.channels; }
    std::size_t pixels() const noexcept { return shape_.pixels(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t y, std::size_t x, std::size_t c = 0) {
        return data_[(y * shape_.width + x) * shape_.channels + c];
    }
    const T& operator()(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return data_[(y * shape_.width + x) * shape_.channels + c];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    /// Channel vector of one pixel.
    std::span<const T> pixel(std::size_t y, std::size_t x) const {
        return {data_.data() + (y * shape_.width + x) * shape_.channels, shape_.channels};
    }
    const std::vector<T>& data() const noexcept { return data_; }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using FloatMap = Raster<float>;
using ClassMap = Raster<ClassId>;
using BinaryMap = Raster<std::uint8_t>;
using PanopticMap = Raster<PanId>;

/// Dtype-erased raster as read from or written to disk.
using DenseMap = std::variant<Raster<float>, Raster<std::uint16_t>, Raster<std::uint8_t>,
                              Raster<std::uint32_t>>;

inline DType dtype(const DenseMap& m) {
    return std::visit([](const auto& r) {
        return dtype_of<typename std::decay_t<decltype(r)>::value_type>();
    }, m);
}

inline Shape shape(const DenseMap& m) {
    return std::visit([](const auto& r) { return r.shape(); }, m);
}

/// Extracts a raster of the requested element type; integer types are
/// widened or narrowed when every value fits.
template <typename T>
Raster<T> as(const DenseMap& m, const char* what = "map") {
    return std::visit([&](const auto& r) -> Raster<T> {
        using S = typename std::decay_t<decltype(r)>::value_type;
        if constexpr (std::is_same_v<S, T>) {
            return r;
        } else if constexpr (std::is_floating_point_v<T> || std::is_floating_point_v<S>) {
            throw ValidationError(std::string(what) + ": expected " + dtype_name(dtype_of<T>()) +
                                  ", got " + dtype_name(dtype_of<S>()));
        } else {
            std::vector<T> out(r.values().size());
            for (std::size_t i = 0; i < out.size(); ++i) {
                const auto v = r[i];
                if (static_cast<std::uint64_t>(v) > std::numeric_limits<T>::max())
                    throw ValidationError(std::string(what) + ": value " + std::to_string(v) +
                                          " does not fit " + dtype_name(dtype_of<T>()));
                out[i] = static_cast<T>(v);
            }
            return Raster<T>(r.shape(), std::move(out));
        }
    }, m);
}

// ---------------------------------------------------------------------------
// Validators

inline void require_same_size(const Shape& a, const Shape& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw ValidationError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                              to_string(b));
}

inline constexpr double kProbabilitySumTolerance = 1e-4;

/// Per-pixel distributions over `n_classes` channels.
inline void validate_probabilities(const FloatMap& probs, std::size_t n_classes) {
    if (probs.channels() != n_classes)
        throw ValidationError("probability map has " + std::to_string(probs.channels()) +
                              " channels, label spec has " + std::to_string(n_classes));
    for (std::size_t y = 0; y < probs.height(); ++y) {
        for (std::size_t x = 0; x < probs.width(); ++x) {
            double sum = 0.0;
            for (float v : probs.pixel(y, x)) {
                if (!(v >= 0.0f && v <= 1.0f))
                    throw ValidationError("probability outside [0,1] at (" + std::to_string(y) +
                                          "," + std::to_string(x) + ")");
                sum += v;
            }
            if (std::abs(sum - 1.0) > kProbabilitySumTolerance)
                throw ValidationError("probabilities at (" + std::to_string(y) + "," +
                                      std::to_string(x) + ") sum to " + std::to_string(sum));
        }
    }
}

inline void validate_unit_interval(const FloatMap& m, const char* what) {
    if (m.channels() != 1) throw ValidationError(std::string(what) + " must have one channel");
    for (float v : m.values()) {
        if (!(v >= 0.0f && v <= 1.0f))
            throw ValidationError(std::string(what) + " has values outside [0,1]");
    }
}

inline void validate_classes(const ClassMap& m, const LabelSpec& labels, bool allow_ignore) {
    for (ClassId v : m.values()) {
        if (labels.is_valid(v)) continue;
        if (allow_ignore && v == labels.ignore_id()) continue;
        throw ValidationError("unknown class id " + std::to_string(v));
    }
}

/// Lowest class id attaining the per-pixel maximum.
inline ClassMap argmax_semantics(const FloatMap& probs, const LabelSpec& labels) {
    if (probs.channels() != labels.n_classes())
        throw ValidationError("argmax: " + std::to_string(probs.channels()) +
                              " channels for " + std::to_string(labels.n_classes()) + " classes");
    ClassMap out(probs.height(), probs.width());
    for (std::size_t y = 0; y < probs.height(); ++y) {
        for (std::size_t x = 0; x < probs.width(); ++x) {
            auto px = probs.pixel(y, x);
            std::size_t best = 0;
            for (std::size_t c = 1; c < px.size(); ++c)
                if (px[c] > px[best]) best = c;
            out(y, x) = static_cast<ClassId>(best);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Panoptic id codec: pan_id = class_id * 1000 + instance_index.

inline constexpr PanId kLabelDivisor = 1000;
inline constexpr PanId kMaxInstances = 999;

struct PanopticLabel {
    ClassId class_id = 0;
    std::uint32_t instance = 0;
    friend bool operator==(const PanopticLabel&, const PanopticLabel&) = default;
};

inline PanId encode_pan(ClassId class_id, std::uint32_t instance) {
    if (instance > kMaxInstances)
        throw ValidationError("instance index " + std::to_string(instance) + " exceeds " +
                              std::to_string(kMaxInstances));
    return static_cast<PanId>(class_id) * kLabelDivisor + instance;
}

inline PanopticLabel decode_pan(PanId id) {
    return {static_cast<ClassId>(id / kLabelDivisor), id % kLabelDivisor};
}

inline PanId ignore_pan(const LabelSpec& labels) {
    return static_cast<PanId>(labels.ignore_id()) * kLabelDivisor;
}

/// Checks the panoptic encoding contract. Instance indices need only be
/// positive for thing classes when `require_contiguous` is false.
inline void validate_panoptic(const PanopticMap& pan, const LabelSpec& labels,
                              bool require_contiguous = true) {
    std::vector<std::vector<bool>> seen(labels.n_classes());
    for (PanId id : pan.values()) {
        const auto [cls, inst] = decode_pan(id);
        if (cls == labels.ignore_id()) {
            if (inst != 0) throw ValidationError("ignore pixel with instance index");
            continue;
        }
        if (!labels.is_valid(cls)) throw ValidationError("unknown class id in pan_id " + std::to_string(id));
        if (inst > 0 && !labels.is_thing(cls))
            throw ValidationError("stuff class " + std::to_string(cls) + " carries an instance index");
        if (inst > 0) {
            auto& s = seen[cls];
            if (s.size() <= inst) s.resize(inst + 1, false);
            s[inst] = true;
        }
    }
    if (!require_contiguous) return;
    for (std::size_t c = 0; c < seen.size(); ++c) {
        for (std::size_t i = 1; i < seen[c].size(); ++i)
            if (!seen[c][i])
                throw ValidationError("instance indices of class " + std::to_string(c) +
                                      " are not contiguous from 1");
    }
}

/// Semantic class of each pixel of a panoptic map.
inline ClassMap semantic_of(const PanopticMap& pan) {
    ClassMap out(pan.height(), pan.width());
    for (std::size_t i = 0; i < pan.pixels(); ++i) out[i] = decode_pan(pan[i]).class_id;
    return out;
}

// ---------------------------------------------------------------------------

struct FeatureVector {
    std::string image_id;
    std::vector<float> values;
};

}  // namespace panfuse
