#include <cmath>

#include "dope/kernels.hpp"

// Reference implementations. Plain sequential loops define the semantics
// the SIMD variants are tested against.

namespace dope::kernels {
namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double net_batch_pass_scalar(const double* index, const double* targets, int n,
                             LossKind loss, const HiddenLayer& layer,
                             const HiddenGrads& grads, double* dindex) {
  const int width = layer.width;
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss_acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = index[i];
    double pred = layer.ob;
    for (int j = 0; j < width; ++j) {
      const double z = layer.hw[j] * x + layer.hb[j];
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
    double dx = 0.0;
    for (int j = 0; j < width; ++j) {
      const double z = layer.hw[j] * x + layer.hb[j];
      if (z > 0.0) {
        grads.gow[j] += dpred * z;
        const double dz = dpred * layer.ow[j];
        grads.ghw[j] += dz * x;
        grads.ghb[j] += dz;
        dx += dz * layer.hw[j];
      }
    }
    dindex[i] = dx;
  }
  return loss_acc;
}

void net_batch_predict_scalar(const double* index, int n,
                              const HiddenLayer& layer, bool sigmoid_output,
                              double* preds) {
  const int width = layer.width;
  for (int i = 0; i < n; ++i) {
    const double x = index[i];
    double pred = layer.ob;
    for (int j = 0; j < width; ++j) {
      const double z = layer.hw[j] * x + layer.hb[j];
      if (z > 0.0) pred += layer.ow[j] * z;
    }
    preds[i] = sigmoid_output ? sigmoid(pred) : pred;
  }
}

double dot_scalar(const double* a, const double* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void affine_index_scalar(const double* X, const double* t, int n, int d,
                         const double* theta, double alpha, double* index) {
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* row = X + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) acc += row[j] * theta[j];
    if (t != nullptr) acc += alpha * t[i];
    index[i] = acc;
  }
}

void affine_index_backward_scalar(const double* X, const double* t,
                                  const double* dindex, int n, int d,
                                  double* gtheta, double* galpha) {
  for (int i = 0; i < n; ++i) {
    const double di = dindex[i];
    const double* row = X + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) gtheta[j] += di * row[j];
    if (t != nullptr && galpha != nullptr) *galpha += di * t[i];
  }
}

}  // namespace

namespace detail {
const Vtable& scalar_vtable() {
  static const Vtable table{net_batch_pass_scalar, net_batch_predict_scalar,
                            dot_scalar, affine_index_scalar,
                            affine_index_backward_scalar};
  return table;
}
}  // namespace detail

}  // namespace dope::kernels
