#pragma once

// Independent reference implementations used as test oracles. They share no
// code with include/caac: dense loops, long double where it helps, and the
// closed-form product for relevancy rollout.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<long double>>;

inline std::vector<double> softmax(const std::vector<double>& s) {
    long double z = 0;
    for (double v : s) z += std::exp(static_cast<long double>(v));
    std::vector<double> out;
    for (double v : s) out.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / z));
    return out;
}

inline Matrix identity(std::size_t n) {
    Matrix m(n, std::vector<long double>(n, 0));
    for (std::size_t i = 0; i < n; ++i) m[i][i] = 1;
    return m;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.size();
    Matrix c(n, std::vector<long double>(n, 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline void normalize_rows(Matrix& m) {
    for (auto& row : m) {
        long double s = 0;
        for (auto v : row) s += v;
        if (s > 0)
            for (auto& v : row) v /= s;
    }
}

/// attn[l][h] is an n x n row-stochastic matrix (row = query). Returns the
/// row-normalized product (I + A_L) ... (I + A_1), A_l the row-normalized head mean.
inline Matrix rollout(const std::vector<std::vector<Matrix>>& attn) {
    const std::size_t n = attn.at(0).at(0).size();
    Matrix r = identity(n);
    for (const auto& layer : attn) {
        Matrix mean(n, std::vector<long double>(n, 0));
        for (const auto& head : layer)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) mean[i][j] += head[i][j] / static_cast<long double>(layer.size());
        normalize_rows(mean);
        Matrix step = identity(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) step[i][j] += mean[i][j];
        r = multiply(step, r);
    }
    normalize_rows(r);
    return r;
}

/// Explicit single-layer attention decoder for cross-checking the library's
/// forward pass. x: n x d inputs; wq/wk/wv per head d x dh; wo d x d.
struct TinyLayer {
    std::vector<std::vector<std::vector<double>>> wq, wk, wv;  // [head][d][dh]
    std::vector<std::vector<double>> wo;                        // [d][d]
};

struct TinyResult {
    std::vector<std::vector<std::vector<std::vector<double>>>> attn;  // [layer][head][q][k]
    std::vector<std::vector<double>> x;                               // final hidden states
};

inline TinyResult tiny_forward(std::vector<std::vector<double>> x, const std::vector<TinyLayer>& layers,
                               const std::vector<double>& image_bias, std::size_t image_slots) {
    const std::size_t n = x.size(), d = x[0].size();
    TinyResult res;
    for (const auto& layer : layers) {
        const std::size_t heads = layer.wq.size(), dh = layer.wq[0][0].size();
        std::vector<std::vector<double>> ctx(n, std::vector<double>(d, 0.0));
        std::vector<std::vector<std::vector<double>>> layer_attn;
        for (std::size_t h = 0; h < heads; ++h) {
            auto proj = [&](const std::vector<std::vector<double>>& w) {
                std::vector<std::vector<double>> out(n, std::vector<double>(dh, 0.0));
                for (std::size_t p = 0; p < n; ++p)
                    for (std::size_t j = 0; j < dh; ++j)
                        for (std::size_t i = 0; i < d; ++i) out[p][j] += x[p][i] * w[i][j];
                return out;
            };
            const auto q = proj(layer.wq[h]), k = proj(layer.wk[h]), v = proj(layer.wv[h]);
            std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
            for (std::size_t r = 0; r < n; ++r) {
                std::vector<double> s;
                for (std::size_t c = 0; c <= r; ++c) {
                    double dot = 0;
                    for (std::size_t j = 0; j < dh; ++j) dot += q[r][j] * k[c][j];
                    dot /= std::sqrt(static_cast<double>(dh));
                    if (c < image_slots && !image_bias.empty()) dot += image_bias[c];
                    s.push_back(dot);
                }
                const auto p = softmax(s);
                for (std::size_t c = 0; c <= r; ++c) a[r][c] = p[c];
                for (std::size_t c = 0; c <= r; ++c)
                    for (std::size_t j = 0; j < dh; ++j) ctx[r][h * dh + j] += a[r][c] * v[c][j];
            }
            layer_attn.push_back(a);
        }
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t i = 0; i < d; ++i) x[p][j] += ctx[p][i] * layer.wo[i][j];
        res.attn.push_back(layer_attn);
    }
    res.x = x;
    return res;
}

}  // namespace oracle
