#pragma once

#include <cstdint>

#include "uhi/vit.hpp"

namespace uhi {

struct AdamWHyper {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptState {
  Weights m;
  Weights v;
  std::int64_t t = 0;
  AdamWHyper hyper;
};

OptState init_opt_state(const Weights& params, AdamWHyper hyper = {});

// Decoupled weight decay:
//   p' = p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p
void adamw_step(Weights& params, const Weights& grads, OptState& state);

}  // namespace uhi
