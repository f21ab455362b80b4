#pragma once

#include <cstddef>
#include <string>

namespace dope::kernels {

enum class Backend { scalar, avx2 };

/// Backend active for this process. Picked once from CPUID, overridable by
/// the DOPE_KERNELS environment variable ("scalar" or "avx2") or force().
Backend active();
void force(Backend backend);
bool avx2_supported();
std::string backend_name(Backend backend);

/// Parameters of the dense stack above the scalar index: a width-`width`
/// ReLU layer fed by the index, then a linear readout.
///   pred(x) = ob + sum_j ow[j] * max(hw[j]*x + hb[j], 0)
struct HiddenLayer {
  const double* hw;
  const double* hb;
  const double* ow;
  double ob;
  int width;
};

struct HiddenGrads {
  double* ghw;
  double* ghb;
  double* gow;
  double* gob;
};

enum class LossKind { mse, bce };

/// One full-batch pass: forward through the hidden stack, per-row loss
/// gradient, backward accumulation into `grads`, and dloss/dindex into
/// `dindex`. Returns the mean loss. For bce the readout is squashed by a
/// sigmoid and targets must be in [0,1]. Gradient accumulation order is
/// fixed (row-major), so results are deterministic per backend.
double net_batch_pass(const double* index, const double* targets, int n,
                      LossKind loss, const HiddenLayer& layer,
                      const HiddenGrads& grads, double* dindex);

/// Forward only: preds[i] = readout(index[i]) (sigmoid applied for bce).
void net_batch_predict(const double* index, int n, const HiddenLayer& layer,
                       bool sigmoid_output, double* preds);

double dot(const double* a, const double* b, int n);

/// index[i] = dot(X.row(i), theta) + alpha * t[i]; X row-major n x d,
/// t may be null (alpha ignored).
void affine_index(const double* X, const double* t, int n, int d,
                  const double* theta, double alpha, double* index);

/// gtheta[j] += sum_i dindex[i] * X[i][j]; *galpha += sum_i dindex[i]*t[i].
void affine_index_backward(const double* X, const double* t,
                           const double* dindex, int n, int d, double* gtheta,
                           double* galpha);

namespace detail {
struct Vtable {
  double (*net_batch_pass)(const double*, const double*, int, LossKind,
                           const HiddenLayer&, const HiddenGrads&, double*);
  void (*net_batch_predict)(const double*, int, const HiddenLayer&, bool,
                            double*);
  double (*dot)(const double*, const double*, int);
  void (*affine_index)(const double*, const double*, int, int, const double*,
                       double, double*);
  void (*affine_index_backward)(const double*, const double*, const double*,
                                int, int, double*, double*);
};
const Vtable& scalar_vtable();
const Vtable& avx2_vtable();
}  // namespace detail

}  // namespace dope::kernels
