#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dcl::nn {

enum class Reduction { Sum, Mean };

template <class T>
struct LossBreakdown {
  T dice = 0, bce = 0, coarse = 0, total = 0;
  std::vector<T> class_dice, class_bce, class_coarse;
};

// 1 - (2*sum(p*y) + eps) / (sum(y) + sum(p) + eps). Gradient accumulates
// into gp when given.
template <class T>
T dice_loss(const std::vector<T>& p, const std::vector<T>& y, T eps = T(1e-6),
            std::vector<T>* gp = nullptr) {
  if (p.size() != y.size()) throw std::runtime_error("dice_loss: shape mismatch");
  T inter = 0, denom = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * y[i];
    denom += p[i] + y[i];
  }
  const T d = denom + eps;
  const T num = T(2) * inter + eps;
  if (gp) {
    if (gp->size() != p.size()) throw std::runtime_error("dice_loss: gradient shape mismatch");
    for (size_t i = 0; i < p.size(); ++i) (*gp)[i] -= (T(2) * y[i] * d - num) / (d * d);
  }
  return T(1) - num / d;
}

// -sum[y log q + (1-y) log(1-q)] with q = clamp(p, ec, 1-ec); mean divides
// by the element count. Clamped elements get zero gradient.
template <class T>
T bce_loss(const std::vector<T>& p, const std::vector<T>& y, Reduction red = Reduction::Mean,
           T ec = T(1e-7), std::vector<T>* gp = nullptr) {
  if (p.size() != y.size()) throw std::runtime_error("bce_loss: shape mismatch");
  if (gp && gp->size() != p.size()) throw std::runtime_error("bce_loss: gradient shape mismatch");
  const T scale = red == Reduction::Mean ? T(1) / T(p.size()) : T(1);
  T sum = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const T q = std::min(T(1) - ec, std::max(ec, p[i]));
    sum -= y[i] * std::log(q) + (T(1) - y[i]) * std::log(T(1) - q);
    if (gp && p[i] > ec && p[i] < T(1) - ec)
      (*gp)[i] += scale * (-y[i] / q + (T(1) - y[i]) / (T(1) - q));
  }
  return sum * scale;
}

namespace detail {
template <class T>
std::vector<T> slice_class(const std::vector<T>& v, int classes, int c) {
  const size_t plane = v.size() / classes;
  return std::vector<T>(v.begin() + c * plane, v.begin() + (c + 1) * plane);
}
template <class T>
void add_class(std::vector<T>& dst, const std::vector<T>& src, int classes, int c, T scale) {
  const size_t plane = dst.size() / classes;
  for (size_t i = 0; i < plane; ++i) dst[c * plane + i] += scale * src[i];
}
}  // namespace detail

// L1 = mean over classes of (dice + bce) on per-class channels. Inputs are
// packed (C, plane). Gradient accumulates into gp1 when given.
template <class T>
LossBreakdown<T> supervised_loss_L1(const std::vector<T>& p1, const std::vector<T>& g, int classes,
                                    Reduction red = Reduction::Mean,
                                    std::vector<T>* gp1 = nullptr) {
  if (p1.size() != g.size() || classes < 1 || p1.size() % classes != 0)
    throw std::runtime_error("supervised_loss_L1: shape mismatch");
  LossBreakdown<T> out;
  const T cs = T(1) / T(classes);
  for (int c = 0; c < classes; ++c) {
    auto pc = detail::slice_class(p1, classes, c);
    auto gc = detail::slice_class(g, classes, c);
    std::vector<T> grad(pc.size(), T(0));
    const T d = dice_loss(pc, gc, T(1e-6), gp1 ? &grad : nullptr);
    const T b = bce_loss(pc, gc, red, T(1e-7), gp1 ? &grad : nullptr);
    out.class_dice.push_back(d);
    out.class_bce.push_back(b);
    out.dice += cs * d;
    out.bce += cs * b;
    if (gp1) detail::add_class(*gp1, grad, classes, c, cs);
  }
  out.total = out.dice + out.bce;
  return out;
}

// L2 = bce(ybar * p2, g), mean over classes; the multiplicative gate makes
// the gradient w.r.t. p2 exactly zero wherever ybar = 0.
template <class T>
T coarse_masked_loss_L2(const std::vector<T>& p2, const std::vector<T>& ybar,
                        const std::vector<T>& g, int classes, Reduction red = Reduction::Mean,
                        std::vector<T>* gp2 = nullptr, std::vector<T>* per_class = nullptr) {
  if (p2.size() != ybar.size() || p2.size() != g.size() || classes < 1 ||
      p2.size() % classes != 0)
    throw std::runtime_error("coarse_masked_loss_L2: shape mismatch");
  T total = 0;
  const T cs = T(1) / T(classes);
  for (int c = 0; c < classes; ++c) {
    auto pc = detail::slice_class(p2, classes, c);
    auto yc = detail::slice_class(ybar, classes, c);
    auto gc = detail::slice_class(g, classes, c);
    std::vector<T> masked(pc.size());
    for (size_t i = 0; i < pc.size(); ++i) masked[i] = yc[i] * pc[i];
    std::vector<T> gm(pc.size(), T(0));
    const T l = bce_loss(masked, gc, red, T(1e-7), gp2 ? &gm : nullptr);
    if (gp2) {
      for (size_t i = 0; i < pc.size(); ++i) gm[i] *= yc[i];
      detail::add_class(*gp2, gm, classes, c, cs);
    }
    if (per_class) per_class->push_back(l);
    total += cs * l;
  }
  return total;
}

// total = L1(p1, g) + L2(ybar * p2, g); set use_coarse=false for the
// single-label configuration (coarse term and its gradient are zero).
template <class T>
LossBreakdown<T> total_loss(const std::vector<T>& p1, const std::vector<T>& p2,
                            const std::vector<T>& g, const std::vector<T>& ybar, int classes,
                            Reduction red = Reduction::Mean, std::vector<T>* gp1 = nullptr,
                            std::vector<T>* gp2 = nullptr, bool use_coarse = true) {
  LossBreakdown<T> out = supervised_loss_L1(p1, g, classes, red, gp1);
  if (use_coarse)
    out.coarse = coarse_masked_loss_L2(p2, ybar, g, classes, red, gp2, &out.class_coarse);
  out.total = out.dice + out.bce + out.coarse;
  return out;
}

}  // namespace dcl::nn
