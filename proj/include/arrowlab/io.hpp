#pragma once

// Result serialization: JSON with insertion-ordered keys, CSV with a fixed
// header, doubles at 17 significant digits, SHA-256 content digests.

#include "arrowlab/error.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace arrowlab::io {

using Json = nlohmann::ordered_json;

// 17 significant digits; integers that fit exactly print without exponent.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline void escape(std::string& out, const std::string& s) {
    out += '"';
    for (unsigned char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default:
            if (c < 0x20) {
                char b[8];
                std::snprintf(b, sizeof b, "\\u%04x", c);
                out += b;
            } else {
                out += static_cast<char>(c);
            }
        }
    }
    out += '"';
}

template <class J>
void emit(std::string& out, const J& j, int indent, int level) {
    auto newline = [&](int l) {
        if (indent < 0) return;
        out += '\n';
        out.append(static_cast<std::size_t>(indent * l), ' ');
    };
    switch (j.type()) {
    case nlohmann::json::value_t::null: out += "null"; break;
    case nlohmann::json::value_t::boolean: out += j.template get<bool>() ? "true" : "false"; break;
    case nlohmann::json::value_t::number_integer: out += std::to_string(j.template get<std::int64_t>()); break;
    case nlohmann::json::value_t::number_unsigned: out += std::to_string(j.template get<std::uint64_t>()); break;
    case nlohmann::json::value_t::number_float: {
        double x = j.template get<double>();
        if (std::isnan(x)) out += "null";
        else if (std::isinf(x)) out += x > 0 ? "\"inf\"" : "\"-inf\"";
        else out += format_double(x);
        break;
    }
    case nlohmann::json::value_t::string: escape(out, j.template get<std::string>()); break;
    case nlohmann::json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            break;
        }
        out += '[';
        bool first = true;
        for (const auto& e : j) {
            if (!first) out += ',';
            first = false;
            newline(level + 1);
            emit(out, e, indent, level + 1);
        }
        newline(level);
        out += ']';
        break;
    }
    case nlohmann::json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            break;
        }
        out += '{';
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) out += ',';
            first = false;
            newline(level + 1);
            escape(out, it.key());
            out += indent < 0 ? ":" : ": ";
            emit(out, it.value(), indent, level + 1);
        }
        newline(level);
        out += '}';
        break;
    }
    default: out += "null";
    }
}

} // namespace detail

// Serialized text; indent < 0 gives the compact form.
template <class J>
std::string dump(const J& j, int indent = 2) {
    std::string out;
    detail::emit(out, j, indent, 0);
    if (indent >= 0) out += '\n';
    return out;
}

// Compact form with keys sorted at every level.
inline std::string canonical(const nlohmann::json& j) { return dump(j, -1); }

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

// Digest of the canonical form; independent of key order and whitespace.
template <class J>
std::string digest(const J& j) {
    return sha256_hex(canonical(nlohmann::json::parse(dump(j, -1))));
}

// Table with a fixed column order. Rows are given by column name, so the
// output order never depends on how a row was assembled.
class CsvTable {
public:
    using Cell = std::variant<double, long long, std::string>;

    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (!index_.emplace(columns_[i], i).second) throw Error("csv: duplicate column " + columns_[i]);
        }
    }

    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t size() const { return rows_.size(); }

    void add(const std::vector<std::pair<std::string, Cell>>& cells) {
        std::vector<Cell> row(columns_.size());
        std::vector<bool> seen(columns_.size(), false);
        for (const auto& [name, value] : cells) {
            auto it = index_.find(name);
            if (it == index_.end()) throw Error("csv: unknown column " + name);
            if (seen[it->second]) throw Error("csv: column given twice " + name);
            seen[it->second] = true;
            row[it->second] = value;
        }
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i]) throw Error("csv: missing column " + columns_[i]);
        rows_.push_back(std::move(row));
    }

    std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) out += ',';
            out += columns_[i];
        }
        out += '\n';
        for (const auto& row : rows_) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out += ',';
                if (auto d = std::get_if<double>(&row[i])) out += format_double(*d);
                else if (auto n = std::get_if<long long>(&row[i])) out += std::to_string(*n);
                else out += std::get<std::string>(row[i]);
            }
            out += '\n';
        }
        return out;
    }

private:
    std::vector<std::string> columns_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::vector<Cell>> rows_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + p.string() + " for writing");
    f << text;
    f.close();
    if (!f) throw Error("write failed for " + p.string());
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ValidationError("cannot open " + p.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

// Collects payload files of one run. With an empty directory the payloads
// are only kept in memory.
class Sink {
public:
    explicit Sink(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}

    void put(const std::string& name, const std::string& text) {
        if (!dir_.empty()) write_file(dir_ / name, text);
        for (auto& f : files_)
            if (f.first == name) {
                f.second = text;
                return;
            }
        files_.emplace_back(name, text);
    }
    void json(const std::string& name, const Json& j) { put(name, dump(j)); }
    void csv(const std::string& name, const CsvTable& t) { put(name, t.str()); }

    const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

} // namespace arrowlab::io
