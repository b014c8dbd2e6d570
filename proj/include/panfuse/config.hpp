#pragma once

// Pipeline configuration: defaults, strict loading from TOML or JSON, and a
// dump that re-parses to an equal configuration.
//
// The TOML reader covers what pipeline configs use: [table] headers, comments,
// and `key = value` with integers, floats, booleans, strings and flat arrays.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "panfuse/fuse.hpp"
#include "panfuse/sampler.hpp"

namespace panfuse {

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct TilerConfig {
    std::vector<std::size_t> scales{1, 2};
    std::size_t overlap = 2;
};

struct RunConfig {
    std::size_t threads = 1;
    bool fail_fast = false;
};

struct PipelineConfig {
    FuseConfig fuse;
    sampler::SamplerConfig sampler;
    TilerConfig tiler;
    RunConfig run;

    void validate() const {
        try {
            fuse.validate();
            sampler.validate();
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        if (tiler.scales.empty()) throw ConfigError("tiler.scales must not be empty");
        for (auto s : tiler.scales)
            if (s == 0) throw ConfigError("tiler.scales entries must be >= 1");
        if (tiler.overlap == 0) throw ConfigError("tiler.overlap must be >= 1");
        if (run.threads == 0) throw ConfigError("run.threads must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// TOML subset

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline nlohmann::json parse_toml_scalar(const std::string& text, std::size_t line_no) {
    auto fail = [&](const std::string& why) {
        return ConfigError("line " + std::to_string(line_no) + ": " + why + " in '" + text + "'");
    };
    if (text.empty()) throw fail("missing value");
    if (text == "true") return true;
    if (text == "false") return false;
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"') throw fail("unterminated string");
        try {
            return nlohmann::json::parse(text);  // TOML basic strings share JSON escapes
        } catch (const nlohmann::json::exception&) {
            throw fail("bad string");
        }
    }
    std::string num;
    for (char c : text)
        if (c != '_') num.push_back(c);
    const bool is_float = num.find_first_of(".eE") != std::string::npos ||
                          num == "inf" || num == "+inf" || num == "-inf" || num == "nan";
    if (!is_float) {
        long long v = 0;
        const char* b = num.data() + (num.front() == '+' ? 1 : 0);
        auto [p, ec] = std::from_chars(b, num.data() + num.size(), v);
        if (ec != std::errc() || p != num.data() + num.size()) throw fail("bad integer");
        if (v < 0) return v;
        return static_cast<unsigned long long>(v);
    }
    double v = 0.0;
    const char* b = num.data() + (num.front() == '+' ? 1 : 0);
    auto [p, ec] = std::from_chars(b, num.data() + num.size(), v);
    if (ec != std::errc() || p != num.data() + num.size()) throw fail("bad number");
    return v;
}

inline nlohmann::json parse_toml_value(const std::string& text, std::size_t line_no) {
    if (!text.empty() && text.front() == '[') {
        if (text.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        const std::string body = trim(std::string_view(text).substr(1, text.size() - 2));
        if (body.empty()) return arr;
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;  // trailing comma
            arr.push_back(parse_toml_scalar(item, line_no));
        }
        return arr;
    }
    return parse_toml_scalar(text, line_no);
}

}  // namespace detail

inline nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::stringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = detail::trim(detail::strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ConfigError("line " + std::to_string(line_no) + ": bad table header");
            const std::string name = detail::trim(line.substr(1, line.size() - 2));
            if (root.contains(name)) throw ConfigError("duplicate table [" + name + "]");
            root[name] = nlohmann::json::object();
            table = &root[name];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (table->contains(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + key);
        (*table)[key] = detail::parse_toml_value(detail::trim(line.substr(eq + 1)), line_no);
    }
    return root;
}

// ---------------------------------------------------------------------------
// Mapping between the nested key tree and PipelineConfig

namespace detail {

class KeyReader {
public:
    KeyReader(const nlohmann::json& root) : root_(root) {
        if (!root_.is_object()) throw ConfigError("config root must be a table");
    }

    template <typename T>
    void read(const std::string& table, const std::string& key, T& out) {
        seen_.push_back(table + "." + key);
        if (!root_.contains(table)) return;
        const auto& t = root_.at(table);
        if (!t.is_object()) throw ConfigError("[" + table + "] must be a table");
        if (!t.contains(key)) return;
        const auto& v = t.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(table + "." + key + " must be a boolean");
                out = v.get<bool>();
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError(table + "." + key + " must be a number");
                out = v.get<T>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError(table + "." + key + " must be an integer");
                if (v.is_number_integer() && v.get<long long>() < 0)
                    if constexpr (std::is_unsigned_v<T>) throw ConfigError(table + "." + key + " must be >= 0");
                out = v.get<T>();
            } else {
                out = v.get<T>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(table + "." + key + ": " + e.what());
        }
    }

    void reject_unknown() const {
        for (const auto& [table, body] : root_.items()) {
            if (!body.is_object()) throw ConfigError("unknown top-level key " + table);
            for (const auto& [key, _] : body.items()) {
                const std::string full = table + "." + key;
                if (std::find(seen_.begin(), seen_.end(), full) == seen_.end())
                    throw ConfigError("unknown config key " + full);
            }
        }
    }

private:
    const nlohmann::json& root_;
    std::vector<std::string> seen_;
};

}  // namespace detail

inline PipelineConfig config_from_tree(const nlohmann::json& root) {
    PipelineConfig c;
    detail::KeyReader r(root);
    r.read("boundary", "lambda_b", c.fuse.boundary.lambda_b);
    r.read("boundary", "min_size", c.fuse.boundary.min_boundary_size);

    r.read("refine", "min_thing_size", c.fuse.refine.min_thing_size);
    r.read("refine", "min_stuff_size", c.fuse.refine.min_stuff_size);
    int conn = static_cast<int>(c.fuse.refine.connectivity);
    r.read("refine", "connectivity", conn);
    if (conn != 4 && conn != 8) throw ConfigError("refine.connectivity must be 4 or 8");
    c.fuse.refine.connectivity = static_cast<Connectivity>(conn);
    r.read("refine", "reference_pixels", c.fuse.refine.reference_pixels);
    r.read("refine", "scale_sizes", c.fuse.refine.scale_sizes);

    auto& n = c.fuse.ncut;
    r.read("ncut", "downsample_width", n.downsample_width);
    r.read("ncut", "downsample_height", n.downsample_height);
    r.read("ncut", "downsample_factor", n.downsample_factor);
    r.read("ncut", "radius", n.radius);
    r.read("ncut", "beta", n.beta);
    r.read("ncut", "cut_cost_threshold", n.cut_cost_threshold);
    r.read("ncut", "stability_ratio_threshold", n.stability_ratio_threshold);
    r.read("ncut", "histogram_bins", n.histogram_bins);
    r.read("ncut", "min_instance_size", n.min_instance_size);
    r.read("ncut", "max_recursion_depth", n.max_recursion_depth);
    r.read("ncut", "eigen_tolerance", n.eigen_tolerance);
    r.read("ncut", "max_eigen_iterations", n.max_eigen_iterations);
    r.read("ncut", "dense_limit", n.dense_limit);
    std::string split = n.split_candidates == ncut::SplitCandidates::All ? "all" : "quantiles";
    r.read("ncut", "split_candidates", split);
    if (split == "all")
        n.split_candidates = ncut::SplitCandidates::All;
    else if (split == "quantiles")
        n.split_candidates = ncut::SplitCandidates::Quantiles;
    else
        throw ConfigError("ncut.split_candidates must be \"all\" or \"quantiles\"");

    r.read("sampler", "n_neighbors", c.sampler.n_neighbors);
    r.read("sampler", "dedupe", c.sampler.dedupe);
    r.read("tiler", "scales", c.tiler.scales);
    r.read("tiler", "overlap", c.tiler.overlap);
    r.read("run", "threads", c.run.threads);
    r.read("run", "fail_fast", c.run.fail_fast);
    r.reject_unknown();
    c.validate();
    return c;
}

inline nlohmann::json config_to_tree(const PipelineConfig& c) {
    const auto& n = c.fuse.ncut;
    return {
        {"boundary", {{"lambda_b", c.fuse.boundary.lambda_b}, {"min_size", c.fuse.boundary.min_boundary_size}}},
        {"refine",
         {{"min_thing_size", c.fuse.refine.min_thing_size},
          {"min_stuff_size", c.fuse.refine.min_stuff_size},
          {"connectivity", static_cast<int>(c.fuse.refine.connectivity)},
          {"reference_pixels", c.fuse.refine.reference_pixels},
          {"scale_sizes", c.fuse.refine.scale_sizes}}},
        {"ncut",
         {{"downsample_width", n.downsample_width},
          {"downsample_height", n.downsample_height},
          {"downsample_factor", n.downsample_factor},
          {"radius", n.radius},
          {"beta", n.beta},
          {"cut_cost_threshold", n.cut_cost_threshold},
          {"stability_ratio_threshold", n.stability_ratio_threshold},
          {"histogram_bins", n.histogram_bins},
          {"min_instance_size", n.min_instance_size},
          {"max_recursion_depth", n.max_recursion_depth},
          {"eigen_tolerance", n.eigen_tolerance},
          {"max_eigen_iterations", n.max_eigen_iterations},
          {"dense_limit", n.dense_limit},
          {"split_candidates", n.split_candidates == ncut::SplitCandidates::All ? "all" : "quantiles"}}},
        {"sampler", {{"n_neighbors", c.sampler.n_neighbors}, {"dedupe", c.sampler.dedupe}}},
        {"tiler", {{"scales", c.tiler.scales}, {"overlap", c.tiler.overlap}}},
        {"run", {{"threads", c.run.threads}, {"fail_fast", c.run.fail_fast}}},
    };
}

namespace detail {

inline std::string toml_value(const nlohmann::json& v) {
    if (v.is_array()) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + toml_value(v[i]);
        return s + "]";
    }
    if (v.is_number_float()) {
        // Shortest representation that parses back to the same double.
        char buf[64];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.get<double>());
        std::string s(buf, p);
        if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
        return s;
    }
    return v.dump();
}

}  // namespace detail

inline std::string dump_toml(const PipelineConfig& c) {
    std::string out;
    const auto tree = config_to_tree(c);
    for (const auto& [table, body] : tree.items()) {
        out += "[" + table + "]\n";
        for (const auto& [key, value] : body.items()) out += key + " = " + detail::toml_value(value) + "\n";
        out += "\n";
    }
    return out;
}

inline bool operator==(const PipelineConfig& a, const PipelineConfig& b) {
    return config_to_tree(a) == config_to_tree(b);
}

/// Loads a TOML file, or JSON when the extension is .json.
inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json tree;
    if (path.extension() == ".json") {
        try {
            tree = nlohmann::json::parse(ss.str());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    } else {
        tree = parse_toml(ss.str());
    }
    return config_from_tree(tree);
}

}  // namespace panfuse
