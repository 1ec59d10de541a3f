#include "mvr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvr {

using ad::Tensor;

void LossWeights::validate() const {
  if (!(data >= 0 && grad >= 0 && gc >= 0 && reg >= 0)) throw std::invalid_argument("LossWeights: negative weight");
}

template <typename T>
Tensor<T> berhu(const Tensor<T>& residual, std::span<const std::uint8_t> mask) {
  if (mask.size() != residual.size()) throw std::invalid_argument("berhu: mask size mismatch");
  T peak = T(0);
  const auto r = residual.values();
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (mask[i]) peak = std::max(peak, std::abs(r[i]));
  }
  const T c = static_cast<T>(kBerhuThreshold) * peak;
  const Tensor<T> pen = ad::unary<T>(
      residual,
      [c](T v) {
        const T a = std::abs(v);
        return a <= c || c <= T(0) ? a : (v * v + c * c) / (T(2) * c);
      },
      [c](T v) {
        if (std::abs(v) <= c || c <= T(0)) return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
        return v / c;
      },
      "berhu");
  return ad::masked_mean(pen, mask);
}

std::vector<std::uint8_t> sobel_support(std::span<const std::uint8_t> valid, int n, int h, int w) {
  if (valid.size() != static_cast<std::size_t>(n) * h * w) throw std::invalid_argument("sobel_support: size mismatch");
  std::vector<std::uint8_t> out(valid.size(), 0);
  for (int s = 0; s < n; ++s) {
    const std::size_t base = static_cast<std::size_t>(s) * h * w;
    for (int r = 1; r + 1 < h; ++r) {
      for (int c = 1; c + 1 < w; ++c) {
        bool ok = true;
        for (int dr = -1; dr <= 1 && ok; ++dr) {
          for (int dc = -1; dc <= 1 && ok; ++dc) ok = valid[base + (r + dr) * w + (c + dc)] != 0;
        }
        out[base + r * w + c] = ok;
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> sobel_filters() {
  // kh x kw x 1 x 2: channel 0 is d/dx, channel 1 is d/dy.
  const T kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  std::vector<T> v(18);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      v[(r * 3 + c) * 2] = kx[r][c];
      v[(r * 3 + c) * 2 + 1] = kx[c][r];
    }
  }
  return Tensor<T>::constant({3, 3, 1, 2}, std::move(v));
}

}  // namespace

template <typename T>
Tensor<T> grad_loss(const Tensor<T>& pred, const Tensor<T>& label, std::span<const std::uint8_t> valid) {
  if (pred.shape() != label.shape() || pred.rank() != 4 || pred.dim(3) != 1) {
    throw std::invalid_argument("grad_loss: expected matching N x H x W x 1 planes");
  }
  const int n = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  const std::vector<std::uint8_t> support = sobel_support(valid, n, h, w);
  std::vector<std::uint8_t> both(support.size() * 2);
  for (std::size_t i = 0; i < support.size(); ++i) both[2 * i] = both[2 * i + 1] = support[i];
  const Tensor<T> k = sobel_filters<T>();
  const Tensor<T> diff = ad::sub(ad::conv2d(pred, k, 1), ad::conv2d(label, k, 1));
  // Averaging both channels together is the per-pixel half-sum averaged over pixels.
  return ad::masked_mean(ad::abs(diff), both);
}

template <typename T>
Tensor<T> gc_loss(const Tensor<T>& d_star, const std::vector<ViewBundle>& bundles, GcDrive drive) {
  if (bundles.empty()) throw std::invalid_argument("gc_loss: no bundles");
  const int v = static_cast<int>(bundles[0].views.size());
  const CameraIntrinsics k = bundles[0].views[0].intrinsics;
  const int h = k.height, w = k.width;
  if (d_star.shape() != ad::Shape{static_cast<int>(bundles.size()) * v, h, w, 1}) {
    throw std::invalid_argument("gc_loss: prediction shape " + ad::to_string(d_star.shape()) + " does not match bundles");
  }
  if (v < 2) return ad::scale(ad::sum(d_star), T(0));

  std::vector<Tensor<T>> targets, sources;
  std::vector<Se3Transform> transforms;
  std::vector<const IdImage*> tri_t, tri_n;
  std::vector<T> input_depth;
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto& views = bundles[b].views;
    if (static_cast<int>(views.size()) != v) throw std::invalid_argument("gc_loss: bundles must share view count");
    for (int t = 0; t < v; ++t) {
      for (int n = 0; n < v; ++n) {
        if (n == t) continue;
        const int gt = static_cast<int>(b) * v + t, gn = static_cast<int>(b) * v + n;
        targets.push_back(ad::slice(d_star, 0, gt, gt + 1));
        sources.push_back(ad::slice(d_star, 0, gn, gn + 1));
        transforms.push_back(relative(views[n].pose, views[t].pose));
        tri_t.push_back(&views[t].tri_id);
        tri_n.push_back(&views[n].tri_id);
        if (drive == GcDrive::input) {
          input_depth.insert(input_depth.end(), views[t].idepth_lq.storage().begin(), views[t].idepth_lq.storage().end());
        }
      }
    }
  }
  const int pairs = static_cast<int>(transforms.size());
  const Tensor<T> driving = drive == GcDrive::predicted
                                ? ad::concat(targets, 0)
                                : Tensor<T>::constant({pairs, h, w, 1}, std::move(input_depth));
  const ad::WarpCoordinates<T> wc = ad::warp_coordinates(driving, k, transforms);

  // U_n: nearest-neighbour triangle IDs agree at the same coordinates.
  const std::size_t px = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> unoccluded(px * pairs, 0);
  const auto coords = wc.coords.values();
  for (int p = 0; p < pairs; ++p) {
    for (std::size_t i = 0; i < px; ++i) {
      const std::size_t j = p * px + i;
      if (!wc.front[j] || !wc.in_bounds[j]) continue;
      const std::uint64_t id = tri_t[p]->data()[i];
      if (id == 0) continue;
      const double u = std::round(static_cast<double>(coords[2 * j]));
      const double vv = std::round(static_cast<double>(coords[2 * j + 1]));
      if (!(u >= 0 && u < w && vv >= 0 && vv < h)) continue;
      unoccluded[j] = (*tri_n[p])(static_cast<int>(vv), static_cast<int>(u)) == id;
    }
  }
  const Tensor<T> sampled = ad::grid_sample(ad::concat(sources, 0), wc.coords, unoccluded);
  return ad::masked_mean(ad::abs(ad::sub(sampled, wc.reproj_idepth)), unoccluded);
}

template <typename T>
Tensor<T> reg_loss(const ParameterSet<T>& params) {
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  for (const auto& e : params.entries()) {
    if (e.regularized) acc = ad::add(acc, ad::sum(ad::square(e.tensor)));
  }
  return acc;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& data, const Tensor<T>& grad, const Tensor<T>& gc, const Tensor<T>& reg,
                     const LossWeights& w) {
  w.validate();
  Tensor<T> out = ad::scale(data, static_cast<T>(w.data));
  out = ad::add(out, ad::scale(grad, static_cast<T>(w.grad)));
  out = ad::add(out, ad::scale(gc, static_cast<T>(w.gc)));
  return ad::add(out, ad::scale(reg, static_cast<T>(w.reg)));
}

Labels make_labels(std::span<const float> d_hq, std::span<const float> d_lq) {
  if (d_hq.size() != d_lq.size()) throw std::invalid_argument("make_labels: plane size mismatch");
  Labels out{std::vector<float>(d_hq.size(), 0.0f), std::vector<std::uint8_t>(d_hq.size(), 0)};
  for (std::size_t i = 0; i < d_hq.size(); ++i) {
    if (d_hq[i] > 0.0f && d_lq[i] > 0.0f) {
      out.g[i] = d_hq[i] - d_lq[i];
      out.valid[i] = 1;
    }
  }
  return out;
}

template <typename T>
LossTerms<T> compute_losses(const Prediction<T>& pred, const std::vector<ViewBundle>& bundles, const Labels& labels,
                            const ParameterSet<T>& params, const LossWeights& w, GcDrive drive) {
  if (labels.g.size() != pred.error.size()) throw std::invalid_argument("compute_losses: label size mismatch");
  const Tensor<T> g = Tensor<T>::constant(pred.error.shape(), std::vector<T>(labels.g.begin(), labels.g.end()));
  LossTerms<T> out;
  out.data = berhu(ad::sub(pred.error, g), labels.valid);
  out.grad = grad_loss(pred.error, g, labels.valid);
  out.gc = gc_loss(pred.refined, bundles, drive);
  out.reg = reg_loss(params);
  out.total = total_loss(out.data, out.grad, out.gc, out.reg, w);
  return out;
}

#define MVR_INSTANTIATE(T)                                                                                  \
  template Tensor<T> berhu(const Tensor<T>&, std::span<const std::uint8_t>);                                \
  template Tensor<T> grad_loss(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);          \
  template Tensor<T> gc_loss(const Tensor<T>&, const std::vector<ViewBundle>&, GcDrive);                    \
  template Tensor<T> reg_loss(const ParameterSet<T>&);                                                      \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                const LossWeights&);                                                        \
  template LossTerms<T> compute_losses(const Prediction<T>&, const std::vector<ViewBundle>&, const Labels&, \
                                       const ParameterSet<T>&, const LossWeights&, GcDrive);

MVR_INSTANTIATE(float)
MVR_INSTANTIATE(double)

#undef MVR_INSTANTIATE

}  // namespace mvr
