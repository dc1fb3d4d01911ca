#pragma once

#include <cstdint>
#include <vector>

#include "bat/config.hpp"
#include "bat/tensor.hpp"

namespace bat {

// AdamW with decoupled weight decay and bias correction:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// The decay uses the pre-update parameter value. step() reads each tensor's
// grad accumulator as-is and leaves it untouched; call zero_grad() (or the
// tensors' own) between steps.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, double lr, double weight_decay, double beta1,
        double beta2, double eps);
  AdamW(std::vector<Tensor*> params, const RunConfig& cfg);

  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

  // For schedules driven by the caller; takes effect from the next step().
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  struct Slot {
    Tensor* p;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace bat
