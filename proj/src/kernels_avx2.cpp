#include <immintrin.h>

#include <cassert>
#include <cmath>

#include "dope/kernels.hpp"

// AVX2/FMA variants. This translation unit is the only one compiled with
// -mavx2; it must not be entered unless avx2_supported().

namespace dope::kernels {
namespace {

constexpr int kMaxWidth = 1024;  // stack buffer bound for hidden activations

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

// Three phases over the batch. The forward pass yields per-row loss
// gradients; the unit-tiled phase keeps all gradient accumulators in
// registers for the whole row sweep (no read-modify-write traffic); the
// final pass produces dloss/dindex. Accumulation order over rows is fixed,
// so results are deterministic.
double net_batch_pass_avx2(const double* index, const double* targets, int n,
                           LossKind loss, const HiddenLayer& layer,
                           const HiddenGrads& grads, double* dindex) {
  const int width = layer.width;
  assert(width <= kMaxWidth);
  const int w4 = width & ~3;
  const double inv_n = 1.0 / static_cast<double>(n);
  const __m256d zero = _mm256_setzero_pd();
  double loss_acc = 0.0;

  // phase 1: forward; dindex temporarily holds dpred per row
  double* dpred_buf = dindex;
  for (int i = 0; i < n; ++i) {
    const __m256d xv = _mm256_set1_pd(index[i]);
    __m256d acc0 = zero, acc1 = zero;
    int j = 0;
    for (; j + 8 <= w4; j += 8) {
      const __m256d z0 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.hw + j), xv,
                                         _mm256_loadu_pd(layer.hb + j));
      const __m256d z1 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.hw + j + 4), xv,
                                         _mm256_loadu_pd(layer.hb + j + 4));
      acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.ow + j),
                             _mm256_max_pd(z0, zero), acc0);
      acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.ow + j + 4),
                             _mm256_max_pd(z1, zero), acc1);
    }
    for (; j < w4; j += 4) {
      const __m256d z = _mm256_fmadd_pd(_mm256_loadu_pd(layer.hw + j), xv,
                                        _mm256_loadu_pd(layer.hb + j));
      acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.ow + j),
                             _mm256_max_pd(z, zero), acc0);
    }
    double pred = layer.ob + hsum(_mm256_add_pd(acc0, acc1));
    for (; j < width; ++j) {
      const double z = layer.hw[j] * index[i] + layer.hb[j];
      if (z > 0.0) pred += layer.ow[j] * z;
    }
    double dpred;
    if (loss == LossKind::mse) {
      const double r = pred - targets[i];
      loss_acc += r * r * inv_n;
      dpred = 2.0 * r * inv_n;
    } else {
      const double p = sigmoid(pred);
      const double pc = std::fmin(std::fmax(p, 1e-12), 1.0 - 1e-12);
      loss_acc += -(targets[i] * std::log(pc) +
                    (1.0 - targets[i]) * std::log(1.0 - pc)) *
                  inv_n;
      dpred = (p - targets[i]) * inv_n;
    }
    *grads.gob += dpred;
    dpred_buf[i] = dpred;
  }

  // phase 2: unit tiles of 8; per tile the layer slices and the gradient
  // accumulators live in registers across the whole row sweep
  int j = 0;
  for (; j + 8 <= width; j += 8) {
    const __m256d hw0 = _mm256_loadu_pd(layer.hw + j);
    const __m256d hw1 = _mm256_loadu_pd(layer.hw + j + 4);
    const __m256d hb0 = _mm256_loadu_pd(layer.hb + j);
    const __m256d hb1 = _mm256_loadu_pd(layer.hb + j + 4);
    const __m256d ow0 = _mm256_loadu_pd(layer.ow + j);
    const __m256d ow1 = _mm256_loadu_pd(layer.ow + j + 4);
    __m256d ghw0 = zero, ghw1 = zero, ghb0 = zero, ghb1 = zero;
    __m256d gow0 = zero, gow1 = zero;
    for (int i = 0; i < n; ++i) {
      const __m256d xv = _mm256_set1_pd(index[i]);
      const __m256d dpv = _mm256_set1_pd(dpred_buf[i]);
      const __m256d z0 = _mm256_fmadd_pd(hw0, xv, hb0);
      const __m256d z1 = _mm256_fmadd_pd(hw1, xv, hb1);
      const __m256d a0 = _mm256_max_pd(z0, zero);
      const __m256d a1 = _mm256_max_pd(z1, zero);
      gow0 = _mm256_fmadd_pd(dpv, a0, gow0);
      gow1 = _mm256_fmadd_pd(dpv, a1, gow1);
      const __m256d m0 = _mm256_cmp_pd(z0, zero, _CMP_GT_OQ);
      const __m256d m1 = _mm256_cmp_pd(z1, zero, _CMP_GT_OQ);
      const __m256d dz0 = _mm256_and_pd(_mm256_mul_pd(dpv, ow0), m0);
      const __m256d dz1 = _mm256_and_pd(_mm256_mul_pd(dpv, ow1), m1);
      ghw0 = _mm256_fmadd_pd(dz0, xv, ghw0);
      ghw1 = _mm256_fmadd_pd(dz1, xv, ghw1);
      ghb0 = _mm256_add_pd(ghb0, dz0);
      ghb1 = _mm256_add_pd(ghb1, dz1);
    }
    _mm256_storeu_pd(grads.ghw + j,
                     _mm256_add_pd(_mm256_loadu_pd(grads.ghw + j), ghw0));
    _mm256_storeu_pd(grads.ghw + j + 4,
                     _mm256_add_pd(_mm256_loadu_pd(grads.ghw + j + 4), ghw1));
    _mm256_storeu_pd(grads.ghb + j,
                     _mm256_add_pd(_mm256_loadu_pd(grads.ghb + j), ghb0));
    _mm256_storeu_pd(grads.ghb + j + 4,
                     _mm256_add_pd(_mm256_loadu_pd(grads.ghb + j + 4), ghb1));
    _mm256_storeu_pd(grads.gow + j,
                     _mm256_add_pd(_mm256_loadu_pd(grads.gow + j), gow0));
    _mm256_storeu_pd(grads.gow + j + 4,
                     _mm256_add_pd(_mm256_loadu_pd(grads.gow + j + 4), gow1));
  }
  for (; j < width; ++j) {
    double ghw = 0.0, ghb = 0.0, gow = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = layer.hw[j] * index[i] + layer.hb[j];
      if (z > 0.0) {
        gow += dpred_buf[i] * z;
        const double dz = dpred_buf[i] * layer.ow[j];
        ghw += dz * index[i];
        ghb += dz;
      }
    }
    grads.ghw[j] += ghw;
    grads.ghb[j] += ghb;
    grads.gow[j] += gow;
  }

  // phase 3: dindex (overwrites the dpred scratch row by row)
  for (int i = 0; i < n; ++i) {
    const __m256d xv = _mm256_set1_pd(index[i]);
    const __m256d dpv = _mm256_set1_pd(dpred_buf[i]);
    __m256d dx0 = zero, dx1 = zero;
    int k = 0;
    for (; k + 8 <= w4; k += 8) {
      const __m256d z0 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.hw + k), xv,
                                         _mm256_loadu_pd(layer.hb + k));
      const __m256d z1 = _mm256_fmadd_pd(_mm256_loadu_pd(layer.hw + k + 4), xv,
                                         _mm256_loadu_pd(layer.hb + k + 4));
      const __m256d dz0 = _mm256_and_pd(
          _mm256_mul_pd(dpv, _mm256_loadu_pd(layer.ow + k)),
          _mm256_cmp_pd(z0, zero, _CMP_GT_OQ));
      const __m256d dz1 = _mm256_and_pd(
          _mm256_mul_pd(dpv, _mm256_loadu_pd(layer.ow + k + 4)),
          _mm256_cmp_pd(z1, zero, _CMP_GT_OQ));
      dx0 = _mm256_fmadd_pd(dz0, _mm256_loadu_pd(layer.hw + k), dx0);
      dx1 = _mm256_fmadd_pd(dz1, _mm256_loadu_pd(layer.hw + k + 4), dx1);
    }
    for (; k < w4; k += 4) {
      const __m256d z = _mm256_fmadd_pd(_mm256_loadu_pd(layer.hw + k), xv,
                                        _mm256_loadu_pd(layer.hb + k));
      const __m256d dz = _mm256_and_pd(
          _mm256_mul_pd(dpv, _mm256_loadu_pd(layer.ow + k)),
          _mm256_cmp_pd(z, zero, _CMP_GT_OQ));
      dx0 = _mm256_fmadd_pd(dz, _mm256_loadu_pd(layer.hw + k), dx0);
    }
    double dx = hsum(_mm256_add_pd(dx0, dx1));
    for (; k < width; ++k) {
      const double z = layer.hw[k] * index[i] + layer.hb[k];
      if (z > 0.0) dx += dpred_buf[i] * layer.ow[k] * layer.hw[k];
    }
    dindex[i] = dx;
  }
  return loss_acc;
}

void net_batch_predict_avx2(const double* index, int n,
                            const HiddenLayer& layer, bool sigmoid_output,
                            double* preds) {
  const int width = layer.width;
  const int w4 = width & ~3;
  const __m256d zero = _mm256_setzero_pd();
  for (int i = 0; i < n; ++i) {
    const double x = index[i];
    const __m256d xv = _mm256_set1_pd(x);
    __m256d acc = zero;
    for (int j = 0; j < w4; j += 4) {
      const __m256d hw = _mm256_loadu_pd(layer.hw + j);
      const __m256d hb = _mm256_loadu_pd(layer.hb + j);
      const __m256d ow = _mm256_loadu_pd(layer.ow + j);
      const __m256d z = _mm256_fmadd_pd(hw, xv, hb);
      acc = _mm256_fmadd_pd(ow, _mm256_max_pd(z, zero), acc);
    }
    double pred = layer.ob + hsum(acc);
    for (int j = w4; j < width; ++j) {
      const double z = layer.hw[j] * x + layer.hb[j];
      if (z > 0.0) pred += layer.ow[j] * z;
    }
    preds[i] = sigmoid_output ? sigmoid(pred) : pred;
  }
}

double dot_avx2(const double* a, const double* b, int n) {
  const int n8 = n & ~7;
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  int i = 0;
  for (; i < n8; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  const int n4 = n & ~3;
  for (; i < n4; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void affine_index_avx2(const double* X, const double* t, int n, int d,
                       const double* theta, double alpha, double* index) {
  const int d4 = d & ~3;
  for (int i = 0; i < n; ++i) {
    const double* row = X + static_cast<std::size_t>(i) * d;
    __m256d acc = _mm256_setzero_pd();
    int j = 0;
    for (; j < d4; j += 4) {
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(row + j),
                            _mm256_loadu_pd(theta + j), acc);
    }
    double v = hsum(acc);
    for (; j < d; ++j) v += row[j] * theta[j];
    if (t != nullptr) v += alpha * t[i];
    index[i] = v;
  }
}

void affine_index_backward_avx2(const double* X, const double* t,
                                const double* dindex, int n, int d,
                                double* gtheta, double* galpha) {
  const int d4 = d & ~3;
  double ga = 0.0;
  for (int i = 0; i < n; ++i) {
    const double di = dindex[i];
    const __m256d dv = _mm256_set1_pd(di);
    const double* row = X + static_cast<std::size_t>(i) * d;
    int j = 0;
    for (; j < d4; j += 4) {
      const __m256d g = _mm256_loadu_pd(gtheta + j);
      _mm256_storeu_pd(gtheta + j,
                       _mm256_fmadd_pd(dv, _mm256_loadu_pd(row + j), g));
    }
    for (; j < d; ++j) gtheta[j] += di * row[j];
    if (t != nullptr) ga += di * t[i];
  }
  if (t != nullptr && galpha != nullptr) *galpha += ga;
}

}  // namespace

namespace detail {
const Vtable& avx2_vtable() {
  static const Vtable table{net_batch_pass_avx2, net_batch_predict_avx2,
                            dot_avx2, affine_index_avx2,
                            affine_index_backward_avx2};
  return table;
}
}  // namespace detail

}  // namespace dope::kernels
