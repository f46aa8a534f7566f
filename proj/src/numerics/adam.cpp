#include "numerics/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace numerics {

void Adam::step(const std::vector<Tensor*>& params,
                const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (params.size() != m_.size())
    throw std::invalid_argument("adam: parameter count changed between steps");

  double sq_norm = 0.0;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!params[i]->same_shape(grads[i]))
      throw std::invalid_argument("adam: gradient shape mismatch at index " +
                                  std::to_string(i));
    if (!grads[i].all_finite())
      throw std::runtime_error("adam: non-finite gradient at index " +
                               std::to_string(i));
    const double* g = grads[i].data();
    for (int k = 0; k < grads[i].size(); ++k) sq_norm += g[k] * g[k];
  }
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double norm = std::sqrt(sq_norm);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }

  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double* g = grads[i].data();
    for (int k = 0; k < params[i]->size(); ++k) {
      double gk = g[k] * clip;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace numerics
