// SPDX-License-Identifier: Apache-2.0
/**
 * File formats used by the command line tools:
 *
 *  - flat key=value config text ('#' comments, '=' required, duplicate and
 *    malformed entries rejected; consumers reject unknown keys),
 *  - RFC 4180 CSV with doubles at full round-trip precision,
 *  - "RVMB" binary snapshots (version byte, explicit little-endian u64 dims
 *    and f64 payload, independent of host endianness),
 *  - run manifests: a version comment plus the exact flat config that
 *    reproduces the run,
 *  - JSON serialization of audit reports.
 */
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rvmb/bounds_audit.hpp"
#include "rvmb/core.hpp"
#include "rvmb/version.hpp"

namespace rvmb {

// -------------------------------------------------------------------------
// Flat config
// -------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string_view::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(a, b - a + 1));
}

} // namespace detail

struct flat_config {
    std::vector<std::pair<std::string, std::string>> entries; // insertion order
    std::map<std::string, std::size_t> index;

    bool has(std::string_view key) const { return index.count(std::string(key)) != 0; }

    const std::string* find(std::string_view key) const {
        auto it = index.find(std::string(key));
        return it == index.end() ? nullptr : &entries[it->second].second;
    }

    /// Insert or overwrite; overwriting keeps the original position.
    void set(std::string_view key, std::string_view value) {
        auto it = index.find(std::string(key));
        if (it != index.end()) {
            entries[it->second].second = std::string(value);
            return;
        }
        index.emplace(std::string(key), entries.size());
        entries.emplace_back(std::string(key), std::string(value));
    }

    static flat_config parse(std::string_view text) {
        flat_config cfg;
        std::size_t pos = 0;
        int lineno = 0;
        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string_view line =
                text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
            pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
            ++lineno;
            std::size_t hash = line.find('#');
            if (hash != std::string_view::npos) line = line.substr(0, hash);
            std::string stripped = detail::trim(line);
            if (stripped.empty()) continue;
            std::size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) +
                                   ": expected key = value");
            std::string key = detail::trim(std::string_view(stripped).substr(0, eq));
            std::string value = detail::trim(std::string_view(stripped).substr(eq + 1));
            if (key.empty())
                throw config_error("config line " + std::to_string(lineno) + ": empty key");
            if (cfg.has(key))
                throw config_error("config line " + std::to_string(lineno) + ": duplicate key '" +
                                   key + "'");
            cfg.set(key, value);
        }
        return cfg;
    }

    static flat_config load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw config_error("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    std::string get_string(std::string_view key, std::string_view fallback) const {
        const std::string* v = find(key);
        return v != nullptr ? *v : std::string(fallback);
    }

    double get_double(std::string_view key, double fallback) const {
        const std::string* v = find(key);
        if (v == nullptr) return fallback;
        const char* s = v->c_str();
        char* end = nullptr;
        double out = std::strtod(s, &end);
        if (end == s || *end != '\0' || !std::isfinite(out))
            throw config_error("config key '" + std::string(key) + "' has malformed value '" +
                               *v + "'");
        return out;
    }

    long long get_int(std::string_view key, long long fallback) const {
        const std::string* v = find(key);
        if (v == nullptr) return fallback;
        const char* s = v->c_str();
        char* end = nullptr;
        long long out = std::strtoll(s, &end, 10);
        if (end == s || *end != '\0')
            throw config_error("config key '" + std::string(key) + "' has malformed value '" +
                               *v + "'");
        return out;
    }

    bool get_bool(std::string_view key, bool fallback) const {
        const std::string* v = find(key);
        if (v == nullptr) return fallback;
        if (*v == "true" || *v == "1") return true;
        if (*v == "false" || *v == "0") return false;
        throw config_error("config key '" + std::string(key) + "' has malformed value '" + *v +
                           "'");
    }

    /// Reject any key outside the consumer's schema.
    void require_keys_among(const std::vector<std::string_view>& allowed) const {
        std::string bad;
        for (const auto& [key, value] : entries) {
            bool known = false;
            for (std::string_view a : allowed)
                if (key == a) {
                    known = true;
                    break;
                }
            if (!known) bad += (bad.empty() ? "" : ", ") + key;
        }
        if (!bad.empty()) throw config_error("unknown config keys: " + bad);
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [key, value] : entries) {
            out += key;
            out += " = ";
            out += value;
            out += '\n';
        }
        return out;
    }
};

// -------------------------------------------------------------------------
// CSV (RFC 4180)
// -------------------------------------------------------------------------

/// Shortest decimal that round-trips a double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

class csv_writer {
  public:
    explicit csv_writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw config_error("cannot open '" + path + "' for writing");
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i > 0) out_ << ',';
            out_ << csv_escape(fields[i]);
        }
        out_ << "\r\n";
    }

  private:
    std::ofstream out_;
};

// -------------------------------------------------------------------------
// Binary snapshots
// -------------------------------------------------------------------------

namespace detail {

inline void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64le(std::string& out, double d) {
    std::uint64_t v = 0;
    std::memcpy(&v, &d, 8);
    put_u64le(out, v);
}

inline std::uint64_t get_u64le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline double get_f64le(const unsigned char* p) {
    std::uint64_t v = get_u64le(p);
    double d = 0.0;
    std::memcpy(&d, &v, 8);
    return d;
}

} // namespace detail

struct snapshot {
    std::vector<std::uint64_t> dims;
    std::vector<double> data; // row-major in dims order
};

inline void write_snapshot(const std::string& path, const std::vector<std::uint64_t>& dims,
                           const std::vector<double>& data) {
    std::uint64_t total = 1;
    for (std::uint64_t d : dims) total *= d;
    if (total != data.size()) throw config_error("write_snapshot: dims do not match data size");
    std::string out;
    out.reserve(16 + 8 * dims.size() + 8 * data.size());
    out += "RVMB";
    out.push_back(1); // format version
    out.push_back(static_cast<char>(dims.size()));
    for (std::uint64_t d : dims) detail::put_u64le(out, d);
    for (double v : data) detail::put_f64le(out, v);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline snapshot read_snapshot(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open snapshot '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string raw = ss.str();
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    if (raw.size() < 6 || std::memcmp(p, "RVMB", 4) != 0)
        throw config_error("'" + path + "' is not a snapshot file");
    if (p[4] != 1) throw config_error("snapshot '" + path + "' has unsupported version");
    std::size_t ndims = p[5];
    if (raw.size() < 6 + 8 * ndims) throw config_error("snapshot '" + path + "' is truncated");
    snapshot out;
    std::uint64_t total = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
        out.dims.push_back(detail::get_u64le(p + 6 + 8 * i));
        total *= out.dims.back();
    }
    std::size_t off = 6 + 8 * ndims;
    if (raw.size() != off + 8 * total) throw config_error("snapshot '" + path + "' is truncated");
    out.data.resize(total);
    for (std::uint64_t i = 0; i < total; ++i)
        out.data[i] = detail::get_f64le(p + off + 8 * i);
    return out;
}

// -------------------------------------------------------------------------
// Manifest and audit JSON
// -------------------------------------------------------------------------

/// The manifest is itself a loadable flat config reproducing the run.
inline void write_manifest(const std::string& path, const flat_config& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for writing");
    f << "# rvmb-version: " << version_string << "\n";
    f << cfg.serialize();
}

inline nlohmann::ordered_json audit_report_json(const audit_report& r) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["samples"] = r.samples;
    j["violations"] = r.violations;
    j["rejected"] = r.rejected;
    j["fitted_constant"] = r.fitted_constant;
    j["fitted_slope"] = r.fitted_slope;
    j["fitted_exponent"] = r.fitted_exponent;
    j["worst"] = {{"p", {r.worst.p.x, r.worst.p.y, r.worst.p.z}},
                  {"q", {r.worst.q.x, r.worst.q.y, r.worst.q.z}},
                  {"omega", {r.worst.omega.x, r.worst.omega.y, r.worst.omega.z}},
                  {"value", r.worst.value}};
    return j;
}

inline std::string audit_reports_json(const std::vector<audit_report>& reports) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const audit_report& r : reports) j.push_back(audit_report_json(r));
    return j.dump(2) + "\n";
}

} // namespace rvmb
