#pragma once

#include "arrowlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

namespace arrowlab {

// SplitMix64 finalizer. Used to derive independent stream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for stream `index` of the run seeded with `master`. Counter scheme:
// seed_i = splitmix64(splitmix64(master) + i), independent of execution order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) + index);
}

// Neumaier compensated summation.
class CompensatedSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            c_ += (sum_ - t) + x;
        else
            c_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + c_; }

private:
    double sum_ = 0.0;
    double c_ = 0.0;
};

inline double trapezoid(const std::vector<double>& t, const std::vector<double>& y) {
    if (t.size() != y.size())
        throw StructuralError("trapezoid: abscissa and ordinate sizes differ");
    CompensatedSum s;
    for (std::size_t i = 1; i < t.size(); ++i)
        s.add(0.5 * (t[i] - t[i - 1]) * (y[i] + y[i - 1]));
    return s.value();
}

// Composite Simpson on a uniform grid; an odd interval count ends with a 3/8 panel.
inline double simpson_uniform(double h, const std::vector<double>& y) {
    const std::size_t n = y.size();
    if (n < 2) return 0.0;
    if (n == 2) return 0.5 * h * (y[0] + y[1]);
    std::size_t m = n - 1;
    CompensatedSum s;
    std::size_t end = m;
    if (m % 2 == 1) {
        if (m == 1) return 0.5 * h * (y[0] + y[1]);
        end = m - 3;
        s.add(3.0 * h / 8.0 * (y[end] + 3.0 * y[end + 1] + 3.0 * y[end + 2] + y[end + 3]));
    }
    for (std::size_t i = 0; i + 2 <= end; i += 2) s.add(h / 3.0 * (y[i] + 4.0 * y[i + 1] + y[i + 2]));
    return s.value();
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double r2 = 0.0;
};

// Ordinary least squares y = a + b x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 3)
        throw ParameterError("fit_line: need at least 3 matching points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0)
        throw ParameterError("fit_line: degenerate abscissa");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ssr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - f.intercept - f.slope * x[i];
        ssr += r * r;
    }
    f.r2 = syy > 0 ? 1.0 - ssr / syy : 1.0;
    f.slope_stderr = std::sqrt(ssr / (n - 2) / sxx);
    return f;
}

// Least squares y = b x. r2 is the centered coefficient of determination of
// that fit, so a line that needs an offset scores poorly.
inline LineFit fit_through_origin(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2)
        throw ParameterError("fit_through_origin: need at least 2 matching points");
    double sxx = 0, sxy = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        my += y[i];
    }
    if (sxx <= 0)
        throw ParameterError("fit_through_origin: degenerate abscissa");
    my /= n;
    LineFit f;
    f.slope = sxy / sxx;
    double ssr = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - f.slope * x[i];
        ssr += r * r;
        syy += (y[i] - my) * (y[i] - my);
    }
    f.r2 = syy > 0 ? 1.0 - ssr / syy : 1.0;
    f.slope_stderr = n > 1 ? std::sqrt(ssr / (n - 1) / sxx) : 0.0;
    return f;
}

// Maximum of a unimodal function on [a, b].
inline std::pair<double, double> golden_section_max(const std::function<double(double)>& f, double a,
                                                    double b, double tol) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    double x = 0.5 * (a + b);
    return {x, f(x)};
}

// Root of g on [a, b] with g(a), g(b) of opposite sign.
inline double bisect(const std::function<double(double)>& g, double a, double b, double xtol,
                     int max_iter = 200) {
    double ga = g(a), gb = g(b);
    if (ga == 0) return a;
    if (gb == 0) return b;
    if ((ga > 0) == (gb > 0))
        throw ParameterError("bisect: no sign change on bracket");
    for (int it = 0; it < max_iter && b - a > xtol; ++it) {
        double m = 0.5 * (a + b);
        double gm = g(m);
        if (gm == 0) return m;
        if ((gm > 0) == (ga > 0)) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

// Runs body(i) for i in [0, n) on up to hardware_concurrency threads. Results
// must be written by index; the schedule never affects them.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    std::size_t nt = std::max(1u, std::thread::hardware_concurrency());
    nt = std::min(nt, n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(nt);
    for (std::size_t w = 0; w < nt; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += nt) body(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

inline bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace arrowlab
