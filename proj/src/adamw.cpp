#include "uhi/optim.hpp"

#include <cmath>

#include "uhi/error.hpp"

namespace uhi {

OptState init_opt_state(const Weights& params, AdamWHyper hyper) {
  OptState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.hyper = hyper;
  return s;
}

void adamw_step(Weights& params, const Weights& grads, OptState& state) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  }
  const AdamWHyper& h = state.hyper;
  state.t += 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < p.size(); ++k) {
    Mat& pk = *p[k].tensor;
    const Mat& gk = *g[k].tensor;
    Mat& mk = *m[k].tensor;
    Mat& vk = *v[k].tensor;
    if (gk.rows() != pk.rows() || gk.cols() != pk.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient shape mismatch for " + p[k].name);
    }
    for (Eigen::Index i = 0; i < pk.size(); ++i) {
      const double gi = gk(i);
      mk(i) = h.beta1 * mk(i) + (1.0 - h.beta1) * gi;
      vk(i) = h.beta2 * vk(i) + (1.0 - h.beta2) * gi * gi;
      const double mhat = mk(i) / c1;
      const double vhat = vk(i) / c2;
      pk(i) = pk(i) - h.lr * (mhat / (std::sqrt(vhat) + h.eps)) - h.lr * h.weight_decay * pk(i);
    }
  }
}

}  // namespace uhi
