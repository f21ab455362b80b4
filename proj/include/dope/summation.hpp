#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace dope {

/// Neumaier compensated accumulator. Summation-order effects stay below
/// the oracle identity tolerances even on long columns.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  KahanSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

inline double compensated_mean(std::span<const double> xs) {
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace dope
