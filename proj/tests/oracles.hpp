// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference implementations shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <torch/torch.h>

namespace crepa::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const torch::Tensor& t) {
    auto d = t.to(torch::kFloat64).contiguous();
    Mat m(static_cast<std::size_t>(d.size(0)), std::vector<double>(static_cast<std::size_t>(d.size(1))));
    auto a = d.accessor<double, 2>();
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = a[i][j];
    return m;
}

inline Mat gram(const Mat& x) {
    Mat g(x.size(), std::vector<double>(x.size(), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j)
            for (std::size_t d = 0; d < x[i].size(); ++d) g[i][j] += x[i][d] * x[j][d];
    return g;
}

/// Unbiased HSIC as the U-statistic over distinct index tuples:
/// E[k_ij l_ij] + E[k_ij] E[l_qr] - 2 E[k_ij l_iq].
inline double hsic_u_oracle(const Mat& K, const Mat& L) {
    const std::size_t n = K.size();
    double a = 0, b = 0, c = 0;
    double na = 0, nb = 0, nc = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            a += K[i][j] * L[i][j];
            na += 1;
            for (std::size_t q = 0; q < n; ++q) {
                if (q == i || q == j) continue;
                c += K[i][j] * L[i][q];
                nc += 1;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == i || r == j || r == q) continue;
                    b += K[i][j] * L[q][r];
                    nb += 1;
                }
            }
        }
    return a / na + b / nb - 2.0 * c / nc;
}

inline double hsic_b_oracle(const Mat& K, const Mat& L) {
    const std::size_t n = K.size();
    auto center = [n](const Mat& M) {
        Mat out = M;
        std::vector<double> row(n, 0), col(n, 0);
        double all = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) row[i] += M[i][j], col[j] += M[i][j], all += M[i][j];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i][j] = M[i][j] - row[i] / n - col[j] / n + all / (n * n);
        return out;
    };
    auto Kc = center(K);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s += Kc[i][j] * L[j][i];
    return s / ((n - 1.0) * (n - 1.0));
}

/// Neighbours of row i: the k largest off-diagonal entries, ties to the lower index.
inline std::set<std::size_t> neighbours(const Mat& K, std::size_t i, int k) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < K.size(); ++j)
        if (j != i) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return K[i][a] > K[i][b]; });
    return {idx.begin(), idx.begin() + k};
}

inline double cknna_oracle(const Mat& x, const Mat& y, int k, Mat* mask_out = nullptr) {
    const auto K = gram(x), L = gram(y);
    const std::size_t n = K.size();
    auto masked_hsic = [&](const Mat& A, const Mat& B) {
        Mat m(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            auto na = neighbours(A, i, k), nb = neighbours(B, i, k);
            for (std::size_t j : na)
                if (nb.count(j)) m[i][j] = m[j][i] = 1.0;
        }
        Mat Am = A, Bm = B;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) Am[i][j] *= m[i][j], Bm[i][j] *= m[i][j];
        return std::make_pair(hsic_u_oracle(Am, Bm), m);
    };
    auto [kl, m] = masked_hsic(K, L);
    if (mask_out) *mask_out = m;
    const double kk = masked_hsic(K, K).first, ll = masked_hsic(L, L).first;
    if (!(kk > 0) || !(ll > 0)) return 0.0;
    return kl / std::sqrt(kk * ll);
}

inline double sim_loop(const torch::Tensor& y, const torch::Tensor& z) {
    double acc = 0;
    for (std::int64_t n = 0; n < y.size(0); ++n) {
        double dot = 0, ny = 0, nz = 0;
        for (std::int64_t d = 0; d < y.size(1); ++d) {
            const double a = y[n][d].item<double>(), b = z[n][d].item<double>();
            dot += a * b, ny += a * a, nz += b * b;
        }
        if (ny > 0 && nz > 0) acc += dot / std::sqrt(ny * nz);
    }
    return acc / static_cast<double>(y.size(0));
}

inline double repa_loop(const torch::Tensor& banks, const torch::Tensor& proj) {
    double acc = 0;
    for (std::int64_t b = 0; b < banks.size(0); ++b)
        for (std::int64_t f = 0; f < banks.size(1); ++f) acc += sim_loop(banks[b][f], proj[b][f]);
    return -acc / static_cast<double>(banks.size(0));
}

/// Enumerates every (f, k) pair and keeps those at distance exactly d.
inline double crepa_loop(const torch::Tensor& banks, const torch::Tensor& proj, int d, double tau) {
    const auto B = banks.size(0), F = banks.size(1);
    double acc = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t f = 0; f < F; ++f) {
            acc += sim_loop(banks[b][f], proj[b][f]);
            for (std::int64_t k = 0; k < F; ++k)
                if (std::abs(k - f) == d) acc += std::exp(-static_cast<double>(d) / tau) * sim_loop(banks[b][k], proj[b][f]);
        }
    return -acc / static_cast<double>(B);
}

}  // namespace crepa::oracle
