#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "dope/kernels.hpp"

namespace dope::kernels {
namespace {

Backend pick_default() {
  if (const char* env = std::getenv("DOPE_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_supported())
        throw std::runtime_error("DOPE_KERNELS=avx2 but CPU lacks AVX2/FMA");
      return Backend::avx2;
    }
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{pick_default()};
  return backend;
}

const detail::Vtable& vtable() {
  return current().load(std::memory_order_relaxed) == Backend::avx2
             ? detail::avx2_vtable()
             : detail::scalar_vtable();
}

}  // namespace

bool avx2_supported() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

Backend active() { return current().load(std::memory_order_relaxed); }

void force(Backend backend) {
  if (backend == Backend::avx2 && !avx2_supported())
    throw std::runtime_error("cannot force avx2 kernels: unsupported CPU");
  current().store(backend, std::memory_order_relaxed);
}

std::string backend_name(Backend backend) {
  return backend == Backend::avx2 ? "avx2" : "scalar";
}

double net_batch_pass(const double* index, const double* targets, int n,
                      LossKind loss, const HiddenLayer& layer,
                      const HiddenGrads& grads, double* dindex) {
  return vtable().net_batch_pass(index, targets, n, loss, layer, grads, dindex);
}

void net_batch_predict(const double* index, int n, const HiddenLayer& layer,
                       bool sigmoid_output, double* preds) {
  vtable().net_batch_predict(index, n, layer, sigmoid_output, preds);
}

double dot(const double* a, const double* b, int n) {
  return vtable().dot(a, b, n);
}

void affine_index(const double* X, const double* t, int n, int d,
                  const double* theta, double alpha, double* index) {
  vtable().affine_index(X, t, n, d, theta, alpha, index);
}

void affine_index_backward(const double* X, const double* t,
                           const double* dindex, int n, int d, double* gtheta,
                           double* galpha) {
  vtable().affine_index_backward(X, t, dindex, n, d, gtheta, galpha);
}

}  // namespace dope::kernels
