#include <cmath>
#include <stdexcept>

#include "bat/optim.hpp"

namespace bat {

AdamW::AdamW(std::vector<Tensor*> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (Tensor* p : params) {
    if (!p) throw std::invalid_argument("AdamW: null parameter");
    Slot s;
    s.p = p;
    s.m.assign(p->data.size(), 0.0);
    s.v.assign(p->data.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

AdamW::AdamW(std::vector<Tensor*> params, const RunConfig& cfg)
    : AdamW(std::move(params), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps) {}

void AdamW::step() {
  ++t_;
  double c1 = 1.0 - std::pow(b1_, double(t_));
  double c2 = 1.0 - std::pow(b2_, double(t_));
  for (Slot& s : slots_) {
    const bool has_grad = !s.p->grad.empty();
    for (std::size_t i = 0; i < s.p->data.size(); ++i) {
      double g = has_grad ? s.p->grad[i] : 0.0;
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
      double mh = s.m[i] / c1;
      double vh = s.v[i] / c2;
      double p_old = s.p->data[i];
      s.p->data[i] = p_old - lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * p_old);
    }
  }
}

void AdamW::zero_grad() {
  for (Slot& s : slots_) s.p->zero_grad();
}

}  // namespace bat
