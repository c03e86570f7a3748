#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace sgrpo::nn {

// Row-major kernels over raw spans. All shapes are in elements, not bytes.

// C[m,n] += A[m,k] * B[k,n]   (set `accumulate=false` to overwrite C)
template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            int m, int k, int n, bool accumulate = false) {
    if (!accumulate) std::fill(c.begin(), c.end(), T(0));
    for (int i = 0; i < m; ++i) {
        const T* arow = a.data() + static_cast<size_t>(i) * k;
        T* crow = c.data() + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a.data() + static_cast<size_t>(i) * k;
        T* crow = c.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b.data() + static_cast<size_t>(j) * k;
            T acc = accumulate ? crow[j] : T(0);
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void matmul_at(std::span<const T> a, std::span<const T> b, std::span<T> c,
               int m, int k, int n, bool accumulate = true) {
    if (!accumulate) std::fill(c.begin(), c.end(), T(0));
    for (int i = 0; i < m; ++i) {
        const T* arow = a.data() + static_cast<size_t>(i) * k;
        const T* brow = b.data() + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            T* crow = c.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
struct LnCache {
    std::vector<T> mean, rstd;  // one per row
};

// y = gamma * (x - mean) / sqrt(var + eps) + beta, rows independent
template <class T>
void layernorm_fwd(std::span<const T> x, std::span<const T> gamma,
                   std::span<const T> beta, std::span<T> y, int rows, int d,
                   LnCache<T>* cache = nullptr) {
    constexpr T eps = T(1e-5);
    if (cache) {
        cache->mean.resize(rows);
        cache->rstd.resize(rows);
    }
    for (int i = 0; i < rows; ++i) {
        const T* xr = x.data() + static_cast<size_t>(i) * d;
        T* yr = y.data() + static_cast<size_t>(i) * d;
        T mu = 0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= T(d);
        T var = 0;
        for (int j = 0; j < d; ++j) {
            T dv = xr[j] - mu;
            var += dv * dv;
        }
        var /= T(d);
        T rstd = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) yr[j] = gamma[j] * (xr[j] - mu) * rstd + beta[j];
        if (cache) {
            cache->mean[i] = mu;
            cache->rstd[i] = rstd;
        }
    }
}

template <class T>
void layernorm_bwd(std::span<const T> x, std::span<const T> gamma,
                   const LnCache<T>& cache, std::span<const T> dy,
                   std::span<T> dx, std::span<T> dgamma, std::span<T> dbeta,
                   int rows, int d) {
    for (int i = 0; i < rows; ++i) {
        const T* xr = x.data() + static_cast<size_t>(i) * d;
        const T* dyr = dy.data() + static_cast<size_t>(i) * d;
        T* dxr = dx.data() + static_cast<size_t>(i) * d;
        const T mu = cache.mean[i], rstd = cache.rstd[i];
        T sum_dn = 0, sum_dn_xhat = 0;
        for (int j = 0; j < d; ++j) {
            T xhat = (xr[j] - mu) * rstd;
            T dn = dyr[j] * gamma[j];
            sum_dn += dn;
            sum_dn_xhat += dn * xhat;
            dgamma[j] += dyr[j] * xhat;
            dbeta[j] += dyr[j];
        }
        for (int j = 0; j < d; ++j) {
            T xhat = (xr[j] - mu) * rstd;
            T dn = dyr[j] * gamma[j];
            dxr[j] += (dn - sum_dn / T(d) - xhat * sum_dn_xhat / T(d)) * rstd;
        }
    }
}

// tanh-approximation GELU
template <class T>
inline T gelu(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad(T x) {
    const T c = T(0.7978845608028654);
    T x3 = x * x * x;
    T u = c * (x + T(0.044715) * x3);
    T th = std::tanh(u);
    T sech2 = T(1) - th * th;
    return T(0.5) * (T(1) + th) +
           T(0.5) * x * sech2 * c * (T(1) + T(3) * T(0.044715) * x * x);
}

template <class T>
void gelu_fwd(std::span<const T> x, std::span<T> y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
}

template <class T>
void gelu_bwd(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
    for (size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * gelu_grad(x[i]);
}

// in-place softmax of one row; entries already set to -inf are masked out
template <class T>
void softmax_row(std::span<T> row) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) mx = std::max(mx, v);
    if (mx == -std::numeric_limits<T>::infinity())
        throw std::domain_error("softmax over fully masked row");
    T sum = 0;
    for (T& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (T& v : row) v /= sum;
}

// log-softmax of one row into out
template <class T>
void log_softmax_row(std::span<const T> row, std::span<T> out) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) mx = std::max(mx, v);
    T sum = 0;
    for (size_t i = 0; i < row.size(); ++i) sum += std::exp(row[i] - mx);
    T lse = mx + std::log(sum);
    for (size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
}

}  // namespace sgrpo::nn
