#pragma once

// Checkpoint files, run manifests and CSV/JSON writers.
//
// Checkpoint layout (all integers little-endian):
//   bytes 0..7    magic "NTKCKPT1"
//   bytes 8..15   uint64 header length H
//   next H bytes  UTF-8 JSON header: config, seed, step, parameter_count, layout
//   remainder     parameter_count IEEE-754 float64 values, little-endian, in flattening order
//
// Flattening order per branch: W0 row-major, b0, W1 .. W_{L-1} row-major, W_L; a mirrored
// network stores branch 1 then branch 2.

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ntklab/errors.hpp"
#include "ntklab/network.hpp"

#ifndef NTKLAB_VERSION
#define NTKLAB_VERSION "unknown"
#endif

namespace ntklab {

using Json = nlohmann::ordered_json;

inline constexpr std::array<char, 8> kCheckpointMagic{'N', 'T', 'K', 'C', 'K', 'P', 'T', '1'};

inline std::string version_string() { return NTKLAB_VERSION; }

inline Json to_json(const NetworkConfig& c) {
    return Json{{"input_dim", c.input_dim},
                {"depth", c.depth},
                {"width", c.width},
                {"init_mode", to_string(c.init_mode)},
                {"with_first_layer_bias", c.with_first_layer_bias},
                {"output_scale", to_string(c.output_scale)},
                {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const Json& j) {
    try {
        NetworkConfig c;
        c.input_dim = j.at("input_dim").get<int>();
        c.depth = j.at("depth").get<int>();
        c.width = j.at("width").get<int>();
        c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
        c.with_first_layer_bias = j.value("with_first_layer_bias", true);
        c.output_scale = parse_output_scale(j.value("output_scale", std::string("literal")));
        c.seed = j.value("seed", std::uint64_t{0});
        c.validate();
        return c;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
}

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace detail

struct CheckpointFile {
    NetworkParams params;
    int step = 0;
    Json header;
};

inline void save_checkpoint(const std::string& path, const NetworkParams& params, int step) {
    const Eigen::VectorXd flat = params.flatten();
    Json header{{"format", "ntklab-checkpoint"},
                {"version", version_string()},
                {"config", to_json(params.config)},
                {"seed", params.config.seed},
                {"step", step},
                {"parameter_count", flat.size()},
                {"dtype", "float64-le"},
                {"layout", "per branch: W0 row-major, b0, W1..W_{L-1} row-major, W_L; mirrored: branch 1 then branch 2"}};
    const std::string text = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_u64_le(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (Eigen::Index i = 0; i < flat.size(); ++i) detail::put_u64_le(os, std::bit_cast<std::uint64_t>(flat(i)));
    if (!os) throw ConfigError("failed writing checkpoint: " + path);
}

inline CheckpointFile load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) != 0)
        throw ParseError("checkpoint: bad magic", 0, 0);
    const std::uint64_t hlen = detail::get_u64_le(bytes.data() + 8);
    if (hlen > bytes.size() - 16) throw ParseError("checkpoint: truncated header", 0, 0);
    CheckpointFile out;
    try {
        out.header = Json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const Json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what(), 0, 0);
    }
    const NetworkConfig cfg = network_config_from_json(out.header.at("config"));
    const auto count = out.header.at("parameter_count").get<std::uint64_t>();
    if (static_cast<Eigen::Index>(count) != cfg.parameter_count())
        throw ParseError("checkpoint: parameter_count does not match config", 0, 0);
    const std::size_t body = 16 + hlen;
    if (bytes.size() != body + 8 * count) throw ParseError("checkpoint: payload size mismatch", 0, 0);
    Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
    for (std::uint64_t i = 0; i < count; ++i)
        flat(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(detail::get_u64_le(bytes.data() + body + 8 * i));
    out.params = NetworkParams::zeros(cfg);
    out.params.unflatten(flat);
    out.step = out.header.at("step").get<int>();
    return out;
}

// ---------------------------------------------------------------------------------------------
// Text output

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Minimal CSV writer with a fixed header.
class CsvWriter {
public:
    CsvWriter(std::ostream& os, std::vector<std::string> header) : os_(os), width_(header.size()) { row(header); }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != width_) throw DimensionError("CsvWriter: row width does not match header");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << quote(cells[i]);
        }
        os_ << '\n';
    }

private:
    static std::string quote(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string out = "\"";
        for (char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        return out + '"';
    }

    std::ostream& os_;
    std::size_t width_;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

/// Run manifest: everything needed to rerun, plus provenance.
struct Manifest {
    std::string command;
    Json config = Json::object();
    std::vector<std::uint64_t> seeds;
    double wall_seconds = 0.0;
    std::string started_at;
    std::vector<std::string> outputs;

    [[nodiscard]] Json to_json() const {
        return Json{{"tool", "ntk-lab"},
                    {"version", version_string()},
                    {"command", command},
                    {"config", config},
                    {"seeds", seeds},
                    {"started_at", started_at},
                    {"wall_seconds", wall_seconds},
                    {"outputs", outputs}};
    }
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os << text;
    if (!os) throw ConfigError("failed writing: " + path);
}

inline Json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    try {
        return Json::parse(is);
    } catch (const Json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

}  // namespace ntklab
