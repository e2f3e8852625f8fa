#pragma once

// Strict JSON config reading. Every key a reader consumes is echoed, with
// defaults filled, into a resolved object; keys nobody consumed are reported
// together as one validation error.

#include "arrowlab/error.hpp"
#include "arrowlab/io.hpp"
#include "arrowlab/qcore.hpp"

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace arrowlab::config {

using io::Json;

class Reader {
public:
    Reader(const Json& src, std::string path = "", std::shared_ptr<std::vector<std::string>> unknown = nullptr)
        : src_(src), path_(std::move(path)),
          unknown_(unknown ? std::move(unknown) : std::make_shared<std::vector<std::string>>()) {
        if (!src_.is_object()) fail("expected an object");
    }

    bool has(const std::string& key) const { return src_.contains(key); }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ValidationError("config" + (path_.empty() ? std::string() : " " + path_) + ": " + msg);
    }
    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ValidationError("config " + where(key) + ": " + msg);
    }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    T get(const std::string& key) {
        if (!has(key)) fail(key, "required key missing");
        return take<T>(key);
    }
    template <class T>
    T get(const std::string& key, const T& fallback) {
        if (!has(key)) {
            used_.insert(key);
            out_[key] = fallback;
            return fallback;
        }
        return take<T>(key);
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        if (has(key) && !src_.at(key).is_number_unsigned() && !(src_.at(key).is_number_integer() && src_.at(key).get<std::int64_t>() >= 0))
            fail(key, "expected a nonnegative integer");
        return get<std::uint64_t>(key, fallback);
    }

    // Raw sub-document, echoed unchanged.
    const Json& raw(const std::string& key) {
        if (!has(key)) fail(key, "required key missing");
        used_.insert(key);
        out_[key] = src_.at(key);
        return src_.at(key);
    }

    Reader child(const std::string& key) {
        if (!has(key)) fail(key, "required key missing");
        used_.insert(key);
        return Reader(src_.at(key), where(key), unknown_);
    }
    Reader child_at(const std::string& key, std::size_t i) {
        return Reader(src_.at(key).at(i), where(key) + "[" + std::to_string(i) + "]", unknown_);
    }
    // Child object that may be absent: an empty object stands in.
    Reader child_or_empty(const std::string& key) {
        used_.insert(key);
        if (!has(key)) return Reader(empty(), where(key), unknown_);
        return Reader(src_.at(key), where(key), unknown_);
    }

    void put(const std::string& key, Json value) { out_[key] = std::move(value); }

    // Echo of consumed keys; records unconsumed keys.
    Json finish() {
        for (auto it = src_.begin(); it != src_.end(); ++it)
            if (!used_.count(it.key())) unknown_->push_back(where(it.key()));
        return out_;
    }

    void require_no_unknown() const {
        if (unknown_->empty()) return;
        std::string msg = "unknown keys:";
        for (const auto& k : *unknown_) msg += " " + k;
        throw ValidationError("config: " + msg);
    }

private:
    static const Json& empty() {
        static const Json e = Json::object();
        return e;
    }

    template <class T>
    T take(const std::string& key) {
        used_.insert(key);
        const Json& v = src_.at(key);
        T x;
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) fail(key, "expected a number");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) fail(key, "expected an integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) fail(key, "expected true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) fail(key, "expected a string");
            }
            x = v.get<T>();
        } catch (const nlohmann::json::exception& e) {
            fail(key, std::string("wrong type (") + e.what() + ")");
        }
        out_[key] = x;
        return x;
    }

    const Json& src_;
    std::string path_;
    std::shared_ptr<std::vector<std::string>> unknown_;
    std::set<std::string> used_;
    Json out_ = Json::object();
};

// ------------------------------------------------------------ operator specs
//
//   {"identity": n}
//   {"pauli": "x" | "y" | "z"}
//   {"diag": [..]}
//   {"matrix": {"re": [[..]], "im": [[..]]}}
//   {"random_levels": {"dim": n, "low": 0, "high": 1, "seed": s}}     sorted diagonal
//   {"random_hermitian": {"dim": n, "seed": s}}                        unit spectral norm
//   {"kron": [op, ..]}, {"sum": [op, ..]}, {"scale": x, "op": op}

inline CMat real_matrix(const Json& rows, const std::string& where) {
    if (!rows.is_array() || rows.empty()) throw ValidationError("config " + where + ": expected a nonempty array of rows");
    const long n = static_cast<long>(rows.size());
    CMat m(n, n);
    for (long i = 0; i < n; ++i) {
        if (!rows[i].is_array() || static_cast<long>(rows[i].size()) != n)
            throw ValidationError("config " + where + ": matrix must be square");
        for (long j = 0; j < n; ++j) {
            if (!rows[i][j].is_number()) throw ValidationError("config " + where + ": entries must be numbers");
            m(i, j) = rows[i][j].get<double>();
        }
    }
    return m;
}

inline CMat random_hermitian(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CMat g = ginibre(n, n, rng);
    CMat h = 0.5 * (g + g.adjoint());
    double norm = hermitian_eigen(h).values.cwiseAbs().maxCoeff();
    return h / norm;
}

inline CMat random_levels(int n, double low, double high, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(low, high);
    std::vector<double> e(n);
    for (auto& x : e) x = u(rng);
    std::sort(e.begin(), e.end());
    CMat m = CMat::Zero(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = e[i];
    return m;
}

inline CMat parse_operator(Reader& r);

inline std::vector<CMat> parse_operator_list(Reader& r, const std::string& key) {
    const Json& a = r.raw(key);
    if (!a.is_array() || a.empty()) r.fail(key, "expected a nonempty array of operators");
    std::vector<CMat> out;
    Json echo = Json::array();
    for (std::size_t i = 0; i < a.size(); ++i) {
        Reader c = r.child_at(key, i);
        out.push_back(parse_operator(c));
        echo.push_back(c.finish());
    }
    r.put(key, echo);
    return out;
}

inline CMat parse_operator(Reader& r) {
    static const char* kinds[] = {"identity", "pauli", "diag", "matrix", "random_levels",
                                  "random_hermitian", "kron", "sum", "scale"};
    int found = 0;
    for (const char* k : kinds) found += r.has(k);
    if (found != 1) r.fail("operator needs exactly one of identity, pauli, diag, matrix, random_levels, "
                           "random_hermitian, kron, sum, scale");
    CMat out;
    if (r.has("identity")) {
        int n = r.get<int>("identity");
        if (n < 1) r.fail("identity", "dimension >= 1");
        out = CMat::Identity(n, n);
    } else if (r.has("pauli")) {
        std::string p = r.get<std::string>("pauli");
        out = CMat::Zero(2, 2);
        if (p == "x") {
            out(0, 1) = out(1, 0) = 1;
        } else if (p == "y") {
            out(0, 1) = cplx(0, -1);
            out(1, 0) = cplx(0, 1);
        } else if (p == "z") {
            out(0, 0) = 1;
            out(1, 1) = -1;
        } else {
            r.fail("pauli", "one of x, y, z");
        }
    } else if (r.has("diag")) {
        auto d = r.get<std::vector<double>>("diag");
        if (d.empty()) r.fail("diag", "nonempty");
        out = CMat::Zero(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) out(i, i) = d[i];
    } else if (r.has("matrix")) {
        Reader m = r.child("matrix");
        out = real_matrix(m.raw("re"), m.where("re"));
        if (m.has("im")) {
            CMat im = real_matrix(m.raw("im"), m.where("im"));
            if (im.rows() != out.rows()) m.fail("im", "same shape as re");
            out += cplx(0, 1) * im;
        }
        r.put("matrix", m.finish());
    } else if (r.has("random_levels")) {
        Reader g = r.child("random_levels");
        int n = g.get<int>("dim");
        double lo = g.get<double>("low", 0.0), hi = g.get<double>("high", 1.0);
        std::uint64_t seed = g.get_u64("seed", 1);
        if (n < 1) g.fail("dim", "dim >= 1");
        if (!(hi > lo)) g.fail("high", "high > low");
        out = random_levels(n, lo, hi, seed);
        r.put("random_levels", g.finish());
    } else if (r.has("random_hermitian")) {
        Reader g = r.child("random_hermitian");
        int n = g.get<int>("dim");
        std::uint64_t seed = g.get_u64("seed", 1);
        if (n < 1) g.fail("dim", "dim >= 1");
        out = random_hermitian(n, seed);
        r.put("random_hermitian", g.finish());
    } else if (r.has("kron") || r.has("sum")) {
        const bool is_kron = r.has("kron");
        const std::string key = is_kron ? "kron" : "sum";
        std::vector<CMat> ops = parse_operator_list(r, key);
        out = ops[0];
        for (std::size_t i = 1; i < ops.size(); ++i) {
            if (is_kron) {
                out = kron(out, ops[i]);
            } else {
                if (ops[i].rows() != out.rows()) r.fail(key, "summands must have equal dimension");
                out += ops[i];
            }
        }
    } else {
        double s = r.get<double>("scale");
        Reader c = r.child("op");
        out = s * parse_operator(c);
        r.put("op", c.finish());
    }
    return out;
}

// Parses one operator spec under `key` and echoes it.
inline CMat operator_at(Reader& parent, const std::string& key) {
    Reader c = parent.child(key);
    CMat m = parse_operator(c);
    parent.put(key, c.finish());
    return m;
}

} // namespace arrowlab::config
