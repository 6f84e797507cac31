#pragma once

// Test-only oracles. Everything in this header is written independently of
// the library implementation paths it checks: plain loops, double precision,
// no reuse of library kernels.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// scalar triple loop, the reference for matmul
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += a[static_cast<size_t>(i) * k + l] * b[static_cast<size_t>(l) * n + j];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> y(x.size());
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        y[i] = std::exp(x[i] - mx);
        s += y[i];
    }
    for (auto& v : y) v /= s;
    return y;
}

// mean cross-entropy over rows of [n, v] logits (all rows counted)
inline double softmax_cross_entropy(const std::vector<double>& logits, const std::vector<int>& targets, int n,
                                    int v) {
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        std::vector<double> row(logits.begin() + static_cast<size_t>(r) * v,
                                logits.begin() + static_cast<size_t>(r + 1) * v);
        std::vector<double> p = softmax(row);
        total += -std::log(p[static_cast<size_t>(targets[static_cast<size_t>(r)])]);
    }
    return total / n;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, double eps) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + eps);
    return y;
}

// one AdamW step of the scalar recurrence, decoupled weight decay
struct AdamWScalar {
    double m = 0.0, v = 0.0;
    long t = 0;
    double step(double w, double g, double lr, double b1, double b2, double eps, double wd) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(b2, static_cast<double>(t)));
        return w - lr * (mhat / (std::sqrt(vhat) + eps) + wd * w);
    }
};

// single-head causal attention for tiny T, the reference for the nn layer.
// q,k,v are [t, hd] row-major; returns [t, hd].
inline std::vector<double> causal_attention(const std::vector<double>& q, const std::vector<double>& k,
                                            const std::vector<double>& v, int t, int hd) {
    std::vector<double> out(static_cast<size_t>(t) * hd, 0.0);
    for (int i = 0; i < t; ++i) {
        std::vector<double> scores(static_cast<size_t>(i) + 1);
        for (int j = 0; j <= i; ++j) {
            double dot = 0.0;
            for (int c = 0; c < hd; ++c)
                dot += q[static_cast<size_t>(i) * hd + c] * k[static_cast<size_t>(j) * hd + c];
            scores[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
        }
        std::vector<double> w = softmax(scores);
        for (int j = 0; j <= i; ++j)
            for (int c = 0; c < hd; ++c)
                out[static_cast<size_t>(i) * hd + c] += w[static_cast<size_t>(j)] * v[static_cast<size_t>(j) * hd + c];
    }
    return out;
}

// cosine alpha-bar at integer step t (before beta clipping), s = 0.008
inline double cosine_alpha_bar_raw(int t, int t_train) {
    const double s = 0.008;
    auto f = [&](double u) { return std::cos((u + s) / (1.0 + s) * M_PI / 2.0); };
    const double num = f(static_cast<double>(t + 1) / t_train);
    const double den = f(0.0);
    return (num * num) / (den * den);
}

}  // namespace oracle
