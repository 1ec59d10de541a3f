#include "mvr/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include <Eigen/Core>

#include "gemm.hpp"

namespace mvr::ad {

namespace {

std::atomic<int> g_threads{1};

template <class F>
void parallel_for(int n, F&& fn) {
  const int threads = std::min(g_threads.load(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw std::invalid_argument("axis out of range");
  return a;
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> xs) {
  for (const auto* x : xs) {
    if (x->requires_grad()) return true;
  }
  return false;
}

// Builds the result node; records inputs and the backward rule only when a gradient can flow.
template <typename T>
Tensor<T> make_node(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs, const char* op,
                    std::function<void(Node<T>&)> bw) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool grad = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (grad) {
    node->requires_grad = true;
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(bw);
  }
  return Tensor<T>(std::move(node));
}

// Input i of a node, or nullptr when it does not need a gradient.
template <typename T>
Node<T>* grad_input(Node<T>& self, std::size_t i) {
  Node<T>* in = self.inputs[i].get();
  return in->requires_grad ? in : nullptr;
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const int rank = static_cast<int>(std::max(a.size(), b.size()));
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (int i = rank - 1; i >= 0; --i) {
    const int ia = i - (rank - static_cast<int>(a.size()));
    const int ib = i - (rank - static_cast<int>(b.size()));
    const int da = ia >= 0 ? a[ia] : 1;
    const int db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("broadcast: incompatible shapes " + to_string(a) + " and " + to_string(b));
    }
    p.out[i] = std::max(da, db);
    p.stride_a[i] = da == 1 ? 0 : sa;
    p.stride_b[i] = db == 1 ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const int rank = static_cast<int>(p.out.size());
  std::vector<int> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

// f(a, b) -> value, da(a, b, out), db(a, b, out) -> partials.
template <typename T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  const Broadcast plan = plan_broadcast(a.shape(), b.shape());
  std::vector<T> out(numel(plan.out));
  const auto av = a.values();
  const auto bv = b.values();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(av[ia], bv[ib]); });
  return make_node<T>(plan.out, std::move(out), {a, b}, name, [plan, da, db](Node<T>& self) {
    Node<T>* na = grad_input(self, 0);
    Node<T>* nb = grad_input(self, 1);
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    T* ga = na ? na->grad_buffer().data() : nullptr;
    T* gb = nb ? nb->grad_buffer().data() : nullptr;
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const T g = self.grad[i];
      if (ga) ga[ia] += g * da(av[ia], bv[ib], self.value[i]);
      if (gb) gb[ib] += g * db(av[ia], bv[ib], self.value[i]);
    });
  });
}

struct ConvGeometry {
  int n, h, w, cin, kh, kw, cout, stride, ho, wo, pad_top, pad_left;
  int patch() const { return kh * kw * cin; }
  int out_pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& f, int stride) {
  if (x.size() != 4 || f.size() != 4) throw std::invalid_argument("conv2d: expected rank-4 input and filters");
  if (x[3] != f[2]) {
    throw std::invalid_argument("conv2d: channel mismatch " + to_string(x) + " vs filters " + to_string(f));
  }
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  ConvGeometry g{x[0], x[1], x[2], x[3], f[0], f[1], f[3], stride, 0, 0, 0, 0};
  g.ho = (g.h + stride - 1) / stride;
  g.wo = (g.w + stride - 1) / stride;
  g.pad_top = std::max((g.ho - 1) * stride + g.kh - g.h, 0) / 2;
  g.pad_left = std::max((g.wo - 1) * stride + g.kw - g.w, 0) / 2;
  return g;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int k = g.patch();
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      T* row = cols + static_cast<std::size_t>(oy * g.wo + ox) * k;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad_top + ky;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad_left + kx;
          T* dst = row + (ky * g.kw + kx) * g.cin;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill(dst, dst + g.cin, T(0));
          } else {
            std::memcpy(dst, x + (static_cast<std::size_t>(iy) * g.w + ix) * g.cin, sizeof(T) * g.cin);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const int k = g.patch();
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      const T* row = cols + static_cast<std::size_t>(oy * g.wo + ox) * k;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad_top + ky;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad_left + kx;
          if (ix < 0 || ix >= g.w) continue;
          const T* src = row + (ky * g.kw + kx) * g.cin;
          T* dst = dx + (static_cast<std::size_t>(iy) * g.w + ix) * g.cin;
          for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Outer/axis/inner decomposition for reductions and concatenation along one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void set_num_threads(int n) { g_threads = std::max(1, n); }
int num_threads() { return g_threads; }

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) + " values for shape " + ad::to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->op = "parameter";
  return t;
}

template <typename T>
int Tensor<T>::dim(int axis) const {
  return node_->shape[normalize_axis(axis, rank())];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw std::invalid_argument("Tensor::item on non-scalar " + ad::to_string(shape()));
  return node_->value[0];
}

template <typename T>
std::vector<T> Gradients<T>::of(const Tensor<T>& param) const {
  auto it = grads_.find(param.node());
  if (it == grads_.end()) return std::vector<T>(param.size(), T(0));
  return it->second;
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  Gradients<T> out;
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS gives a topological order (inputs before consumers).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* in = node->inputs[next++].get();
      if (in->requires_grad && seen.insert(in).second) stack.push_back({in, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward) {
      if (!node->grad.empty()) node->backward(*node);
      std::vector<T>().swap(node->grad);
    } else if (!node->grad.empty()) {
      out.insert(node, std::move(node->grad));
      node->grad.clear();
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
                   [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
                   [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
                   [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
                   [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= s;
  return make_node<T>(x.shape(), std::move(out), {x}, "scale", [s](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v += s;
  return make_node<T>(x.shape(), std::move(out), {x}, "add_scalar", [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> unary(const Tensor<T>& x, std::function<T(T)> f, std::function<T(T)> df, const char* name) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_node<T>(x.shape(), std::move(out), {x}, name, [df = std::move(df)](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xv[i]);
  });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Arr> xa(xv.data(), static_cast<Eigen::Index>(xv.size()));
  Eigen::Map<Arr> oa(out.data(), static_cast<Eigen::Index>(out.size()));
  oa = (xa > T(0)).select(xa, xa.min(T(0)).exp() - T(1));
  return make_node<T>(x.shape(), std::move(out), {x}, "elu", [](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    // For x <= 0, d/dx (e^x - 1) = e^x = out + 1.
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xv[i] > T(0) ? T(1) : self.value[i] + T(1));
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::abs(v); },
                  [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }, "abs");
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return v * v; }, [](T v) { return T(2) * v; }, "square");
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
  return unary<T>(x, [floor](T v) { return v > floor ? v : floor; },
                  [floor](T v) { return v > floor ? T(1) : T(0); }, "clamp_min");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_node<T>(std::move(shape), std::move(out), {x}, "reshape", [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = xs[0].rank();
  axis = normalize_axis(axis, rank);
  Shape shape = xs[0].shape();
  shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && x.shape()[d] != xs[0].shape()[d]) {
        throw std::invalid_argument("concat: shape mismatch " + to_string(x.shape()) + " vs " + to_string(xs[0].shape()));
      }
    }
    shape[axis] += x.shape()[axis];
  }
  const AxisSplit out_split = split_at(shape, axis);
  std::vector<T> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    offsets.push_back(offset);
    const std::size_t block = static_cast<std::size_t>(x.shape()[axis]) * out_split.inner;
    const auto xv = x.values();
    for (std::size_t o = 0; o < out_split.outer; ++o) {
      std::copy_n(xv.begin() + o * block, block, out.begin() + o * out_split.extent * out_split.inner + offset);
    }
    offset += block;
  }
  std::vector<std::size_t> blocks;
  for (const auto& x : xs) blocks.push_back(static_cast<std::size_t>(x.shape()[axis]) * out_split.inner);
  return make_node<T>(shape, std::move(out), xs, "concat", [out_split, offsets, blocks](Node<T>& self) {
    const std::size_t row = out_split.extent * out_split.inner;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node<T>* in = grad_input(self, i);
      if (!in) continue;
      auto& g = in->grad_buffer();
      for (std::size_t o = 0; o < out_split.outer; ++o) {
        const T* src = self.grad.data() + o * row + offsets[i];
        T* dst = g.data() + o * blocks[i];
        for (std::size_t j = 0; j < blocks[i]; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int begin, int end) {
  axis = normalize_axis(axis, x.rank());
  if (begin < 0 || end > x.shape()[axis] || begin >= end) throw std::invalid_argument("slice: bad range");
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const AxisSplit in = split_at(x.shape(), axis);
  const std::size_t block = static_cast<std::size_t>(end - begin) * in.inner;
  const std::size_t start = static_cast<std::size_t>(begin) * in.inner;
  const std::size_t row = in.extent * in.inner;
  std::vector<T> out(numel(shape));
  const auto xv = x.values();
  for (std::size_t o = 0; o < in.outer; ++o) std::copy_n(xv.begin() + o * row + start, block, out.begin() + o * block);
  return make_node<T>(shape, std::move(out), {x}, "slice", [in, block, start, row](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < in.outer; ++o) {
      T* dst = g.data() + o * row + start;
      const T* src = self.grad.data() + o * block;
      for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: expected rank 2");
  const int r = x.shape()[0], c = x.shape()[1];
  std::vector<T> out(x.size());
  const auto xv = x.values();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = xv[static_cast<std::size_t>(i) * c + j];
  }
  return make_node<T>({c, r}, std::move(out), {x}, "transpose", [r, c](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  return make_node<T>({}, {acc}, {x}, "sum", [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  std::vector<T> out(sp.outer * sp.inner, T(0));
  const auto xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.extent; ++k) {
      const T* src = xv.data() + (o * sp.extent + k) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make_node<T>(shape, std::move(out), {x}, "sum_axis", [sp](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t k = 0; k < sp.extent; ++k) {
        T* dst = g.data() + (o * sp.extent + k) * sp.inner;
        const T* src = self.grad.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> masked_sum(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.size()) throw std::invalid_argument("masked_sum: mask size mismatch");
  T acc = T(0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (mask[i]) acc += xv[i];
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_node<T>({}, {acc}, {x}, "masked_sum", [m = std::move(m)](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (m[i]) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  const auto count = std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; });
  Tensor<T> s = masked_sum(x, mask);
  if (count == 0) return scale(s, T(0));
  return scale(s, T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  detail::gemm<T>(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return make_node<T>({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node<T>& self) {
    if (Node<T>* na = grad_input(self, 0)) {
      detail::gemm<T>(false, true, m, k, n, self.grad.data(), self.inputs[1]->value.data(), na->grad_buffer().data(), true);
    }
    if (Node<T>* nb = grad_input(self, 1)) {
      detail::gemm<T>(true, false, k, n, m, self.inputs[0]->value.data(), self.grad.data(), nb->grad_buffer().data(), true);
    }
  });
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[trans_b ? 2 : 1]) {
    throw std::invalid_argument("batched_matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                                to_string(b.shape()));
  }
  const int batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const int n = b.shape()[trans_b ? 1 : 2];
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    sc = static_cast<std::size_t>(m) * n;
  std::vector<T> out(sc * batch);
  const T* av = a.values().data();
  const T* bv = b.values().data();
  parallel_for(batch, [&](int i) {
    detail::gemm<T>(false, trans_b, m, n, k, av + i * sa, bv + i * sb, out.data() + i * sc, false);
  });
  return make_node<T>({batch, m, n}, std::move(out), {a, b}, "batched_matmul",
                      [batch, m, k, n, sa, sb, sc, trans_b](Node<T>& self) {
    Node<T>* na = grad_input(self, 0);
    Node<T>* nb = grad_input(self, 1);
    const T* av = self.inputs[0]->value.data();
    const T* bv = self.inputs[1]->value.data();
    T* ga = na ? na->grad_buffer().data() : nullptr;
    T* gb = nb ? nb->grad_buffer().data() : nullptr;
    parallel_for(batch, [&](int i) {
      const T* gc = self.grad.data() + i * sc;
      // C = A B: dA = dC B^T, dB = A^T dC.  C = A B^T: dA = dC B, dB = dC^T A.
      if (ga) detail::gemm<T>(false, !trans_b, m, k, n, gc, bv + i * sb, ga + i * sa, true);
      if (gb) {
        if (trans_b) {
          detail::gemm<T>(true, false, n, k, m, gc, av + i * sa, gb + i * sb, true);
        } else {
          detail::gemm<T>(true, false, k, n, m, av + i * sa, gc, gb + i * sb, true);
        }
      }
    });
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& filters, int stride) {
  const ConvGeometry g = conv_geometry(x.shape(), filters.shape(), stride);
  const std::size_t in_img = static_cast<std::size_t>(g.h) * g.w * g.cin;
  const std::size_t out_img = static_cast<std::size_t>(g.out_pixels()) * g.cout;
  const std::size_t cols_size = static_cast<std::size_t>(g.out_pixels()) * g.patch();
  std::vector<T> out(out_img * g.n);
  const T* xv = x.values().data();
  const T* wv = filters.values().data();
  // One GEMM per image keeps every sample's result independent of the batch size.
  parallel_for(g.n, [&](int n) {
    if (g.pointwise()) {
      detail::gemm<T>(false, false, g.out_pixels(), g.cout, g.cin, xv + n * in_img, wv, out.data() + n * out_img, false);
    } else {
      std::vector<T> cols(cols_size);
      im2col(xv + n * in_img, g, cols.data());
      detail::gemm<T>(false, false, g.out_pixels(), g.cout, g.patch(), cols.data(), wv, out.data() + n * out_img, false);
    }
  });
  return make_node<T>({g.n, g.ho, g.wo, g.cout}, std::move(out), {x, filters}, "conv2d",
                      [g, in_img, out_img, cols_size](Node<T>& self) {
    Node<T>* nx = grad_input(self, 0);
    Node<T>* nw = grad_input(self, 1);
    const T* xv = self.inputs[0]->value.data();
    const T* wv = self.inputs[1]->value.data();
    const std::size_t wsize = self.inputs[1]->value.size();
    T* gx = nx ? nx->grad_buffer().data() : nullptr;
    // Per-sample weight gradients are reduced in sample order, whatever the thread count.
    std::vector<T> partial(nw ? wsize * g.n : 0);
    parallel_for(g.n, [&](int n) {
      const T* gy = self.grad.data() + n * out_img;
      if (g.pointwise()) {
        if (nw) detail::gemm<T>(true, false, g.cin, g.cout, g.out_pixels(), xv + n * in_img, gy, partial.data() + n * wsize, false);
        if (gx) detail::gemm<T>(false, true, g.out_pixels(), g.cin, g.cout, gy, wv, gx + n * in_img, true);
        return;
      }
      std::vector<T> cols(cols_size);
      if (nw) {
        im2col(xv + n * in_img, g, cols.data());
        detail::gemm<T>(true, false, g.patch(), g.cout, g.out_pixels(), cols.data(), gy, partial.data() + n * wsize, false);
      }
      if (gx) {
        detail::gemm<T>(false, true, g.out_pixels(), g.patch(), g.cout, gy, wv, cols.data(), false);
        col2im_add(cols.data(), g, gx + n * in_img);
      }
    });
    if (nw) {
      auto& gw = nw->grad_buffer();
      for (int n = 0; n < g.n; ++n) {
        const T* p = partial.data() + n * wsize;
        for (std::size_t i = 0; i < wsize; ++i) gw[i] += p[i];
      }
    }
  });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 2) throw std::invalid_argument("group_norm: rank must be >= 2");
  const int c = x.shape().back();
  if (groups < 1 || c % groups != 0) {
    throw std::invalid_argument("group_norm: " + std::to_string(c) + " channels not divisible into " +
                                std::to_string(groups) + " groups");
  }
  if (gamma.size() != static_cast<std::size_t>(c) || beta.size() != static_cast<std::size_t>(c)) {
    throw std::invalid_argument("group_norm: affine parameters must have one entry per channel");
  }
  const int n = x.shape()[0];
  const std::size_t pixels = x.size() / (static_cast<std::size_t>(n) * c);
  const int cg = c / groups;
  const double m = static_cast<double>(pixels) * cg;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<T> out(x.size());
  std::vector<T> mean_v(static_cast<std::size_t>(n) * groups), rstd_v(mean_v.size());
  // Channel sums run over pixels with the channel axis innermost, then fold into groups.
  std::vector<double> s1(c), s2(c);
  std::vector<T> scale_c(c), shift_c(c);
  for (int s = 0; s < n; ++s) {
    const T* xs = xv.data() + s * pixels * c;
    std::fill(s1.begin(), s1.end(), 0.0);
    std::fill(s2.begin(), s2.end(), 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* row = xs + p * c;
      for (int ch = 0; ch < c; ++ch) {
        const double v = row[ch];
        s1[ch] += v;
        s2[ch] += v * v;
      }
    }
    for (int gi = 0; gi < groups; ++gi) {
      double acc = 0.0, acc2 = 0.0;
      for (int k = 0; k < cg; ++k) {
        acc += s1[gi * cg + k];
        acc2 += s2[gi * cg + k];
      }
      const double mu = acc / m;
      const double var = std::max(acc2 / m - mu * mu, 0.0);
      const double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      mean_v[s * groups + gi] = static_cast<T>(mu);
      rstd_v[s * groups + gi] = static_cast<T>(rstd);
      for (int k = 0; k < cg; ++k) {
        const int ch = gi * cg + k;
        scale_c[ch] = static_cast<T>(rstd * gv[ch]);
        shift_c[ch] = static_cast<T>(bv[ch] - mu * rstd * gv[ch]);
      }
    }
    T* os = out.data() + s * pixels * c;
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* row = xs + p * c;
      T* orow = os + p * c;
      for (int ch = 0; ch < c; ++ch) orow[ch] = row[ch] * scale_c[ch] + shift_c[ch];
    }
  }
  return make_node<T>(x.shape(), std::move(out), {x, gamma, beta}, "group_norm",
                      [n, c, cg, groups, pixels, m, mean_v, rstd_v](Node<T>& self) {
    Node<T>* nx = grad_input(self, 0);
    Node<T>* ng = grad_input(self, 1);
    Node<T>* nb = grad_input(self, 2);
    const auto& xv = self.inputs[0]->value;
    const auto& gv = self.inputs[1]->value;
    T* gx = nx ? nx->grad_buffer().data() : nullptr;
    T* gg = ng ? ng->grad_buffer().data() : nullptr;
    T* gb = nb ? nb->grad_buffer().data() : nullptr;
    std::vector<double> sum_g(c), sum_gx(c);
    std::vector<T> ca(c), cb(c), cc(c);
    for (int s = 0; s < n; ++s) {
      const T* xs = xv.data() + s * pixels * c;
      const T* dy = self.grad.data() + s * pixels * c;
      std::fill(sum_g.begin(), sum_g.end(), 0.0);
      std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
      for (std::size_t p = 0; p < pixels; ++p) {
        const T* row = xs + p * c;
        const T* grow = dy + p * c;
        for (int ch = 0; ch < c; ++ch) {
          sum_g[ch] += static_cast<double>(grow[ch]);
          sum_gx[ch] += static_cast<double>(grow[ch]) * row[ch];
        }
      }
      for (int gi = 0; gi < groups; ++gi) {
        const double mu = mean_v[s * groups + gi];
        const double rstd = rstd_v[s * groups + gi];
        // With xhat = (x - mu) rstd and dxhat = dy gamma:
        //   dx = rstd/m (m dxhat - sum dxhat - xhat sum dxhat xhat)
        double s_dxhat = 0.0, s_dxhat_xhat = 0.0;
        for (int k = 0; k < cg; ++k) {
          const int ch = gi * cg + k;
          const double dot = rstd * (sum_gx[ch] - mu * sum_g[ch]);  // sum dy xhat
          if (gg) gg[ch] += static_cast<T>(dot);
          if (gb) gb[ch] += static_cast<T>(sum_g[ch]);
          s_dxhat += gv[ch] * sum_g[ch];
          s_dxhat_xhat += gv[ch] * dot;
        }
        // dx = A dy + B x + C per channel.
        const double bcoef = -rstd * rstd * s_dxhat_xhat / m;
        for (int k = 0; k < cg; ++k) {
          const int ch = gi * cg + k;
          ca[ch] = static_cast<T>(rstd * gv[ch]);
          cb[ch] = static_cast<T>(bcoef);
          cc[ch] = static_cast<T>(-rstd * s_dxhat / m - mu * bcoef);
        }
      }
      if (!gx) continue;
      T* gxs = gx + s * pixels * c;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T* row = xs + p * c;
        const T* grow = dy + p * c;
        T* out = gxs + p * c;
        for (int ch = 0; ch < c; ++ch) out[ch] += ca[ch] * grow[ch] + cb[ch] * row[ch] + cc[ch];
      }
    }
  });
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (x.rank() != 4 || r < 1 || x.shape()[3] % (r * r) != 0) {
    throw std::invalid_argument("pixel_shuffle: channels of " + to_string(x.shape()) + " not divisible by r^2");
  }
  const int n = x.shape()[0], h = x.shape()[1], w = x.shape()[2], cin = x.shape()[3];
  const int c = cin / (r * r);
  const Shape shape{n, h * r, w * r, c};
  // index[out] = in
  std::vector<std::size_t> index(x.size());
  for (int s = 0; s < n; ++s) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        for (int ch = 0; ch < c; ++ch) {
          for (int i = 0; i < r; ++i) {
            for (int j = 0; j < r; ++j) {
              const std::size_t in = ((static_cast<std::size_t>(s) * h + y) * w + xx) * cin + ch * r * r + i * r + j;
              const std::size_t out = ((static_cast<std::size_t>(s) * h * r + y * r + i) * w * r + xx * r + j) * c + ch;
              index[out] = in;
            }
          }
        }
      }
    }
  }
  std::vector<T> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[index[i]];
  return make_node<T>(shape, std::move(out), {x}, "pixel_shuffle", [index = std::move(index)](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& coords, std::span<const std::uint8_t> mask) {
  if (x.rank() != 4 || coords.rank() != 4 || coords.shape()[3] != 2 || coords.shape()[0] != x.shape()[0]) {
    throw std::invalid_argument("grid_sample: bad shapes " + to_string(x.shape()) + ", " + to_string(coords.shape()));
  }
  const int n = x.shape()[0], h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
  const int ho = coords.shape()[1], wo = coords.shape()[2];
  const std::size_t pixels = static_cast<std::size_t>(ho) * wo;
  if (mask.size() != pixels * n) throw std::invalid_argument("grid_sample: mask size mismatch");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const auto xv = x.values();
  const auto cv = coords.values();
  std::vector<T> out(pixels * n * c, T(0));

  // Visits the four taps of output pixel p; f(tap_index, weight, d_weight/du, d_weight/dv).
  auto taps = [h, w, c](const T* cp, auto&& f) {
    const T u = cp[0], v = cp[1];
    const T fu = std::floor(u), fv = std::floor(v);
    const T a = u - fu, b = v - fv;
    const int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
    const int us[4] = {u0, u0 + 1, u0, u0 + 1};
    const int vs[4] = {v0, v0, v0 + 1, v0 + 1};
    const T wt[4] = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
    const T du[4] = {-(1 - b), 1 - b, -b, b};
    const T dv[4] = {-(1 - a), -a, 1 - a, a};
    for (int j = 0; j < 4; ++j) {
      if (us[j] < 0 || us[j] >= w || vs[j] < 0 || vs[j] >= h) continue;
      f((static_cast<std::size_t>(vs[j]) * w + us[j]) * c, wt[j], du[j], dv[j]);
    }
  };

  for (int s = 0; s < n; ++s) {
    const T* xs = xv.data() + static_cast<std::size_t>(s) * h * w * c;
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t op = s * pixels + p;
      if (!m[op]) continue;
      T* o = out.data() + op * c;
      taps(cv.data() + op * 2, [&](std::size_t base, T wt, T, T) {
        if (wt == T(0)) return;
        for (int ch = 0; ch < c; ++ch) o[ch] += wt * xs[base + ch];
      });
    }
  }
  return make_node<T>({n, ho, wo, c}, std::move(out), {x, coords}, "grid_sample",
                      [m = std::move(m), taps, n, h, w, c, pixels](Node<T>& self) {
    Node<T>* nx = grad_input(self, 0);
    Node<T>* nc = grad_input(self, 1);
    const auto& xv = self.inputs[0]->value;
    const auto& cv = self.inputs[1]->value;
    T* gx = nx ? nx->grad_buffer().data() : nullptr;
    T* gc = nc ? nc->grad_buffer().data() : nullptr;
    for (int s = 0; s < n; ++s) {
      const std::size_t img = static_cast<std::size_t>(s) * h * w * c;
      for (std::size_t p = 0; p < pixels; ++p) {
        const std::size_t op = s * pixels + p;
        if (!m[op]) continue;
        const T* g = self.grad.data() + op * c;
        T du_acc = T(0), dv_acc = T(0);
        taps(cv.data() + op * 2, [&](std::size_t base, T wt, T du, T dv) {
          for (int ch = 0; ch < c; ++ch) {
            if (gx) gx[img + base + ch] += wt * g[ch];
            const T val = xv[img + base + ch];
            du_acc += du * val * g[ch];
            dv_acc += dv * val * g[ch];
          }
        });
        if (gc) {
          gc[op * 2] += du_acc;
          gc[op * 2 + 1] += dv_acc;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis, std::span<const std::uint8_t> mask) {
  axis = normalize_axis(axis, x.rank());
  if (!mask.empty() && mask.size() != x.size()) throw std::invalid_argument("softmax: mask size mismatch");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  if (m.empty()) m.assign(x.size(), 1);
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto xv = x.values();
  std::vector<T> out(x.size(), T(0));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const std::size_t idx = base + k * sp.inner;
        if (m[idx]) mx = std::max(mx, xv[idx]);
      }
      if (mx == -std::numeric_limits<T>::infinity()) continue;
      T z = T(0);
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const std::size_t idx = base + k * sp.inner;
        if (m[idx]) z += (out[idx] = std::exp(xv[idx] - mx));
      }
      for (std::size_t k = 0; k < sp.extent; ++k) out[base + k * sp.inner] /= z;
    }
  }
  return make_node<T>(x.shape(), std::move(out), {x}, "softmax", [sp](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.extent * sp.inner + i;
        T dot = T(0);
        for (std::size_t k = 0; k < sp.extent; ++k) dot += y[base + k * sp.inner] * self.grad[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t idx = base + k * sp.inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);  // masked entries have y = 0
        }
      }
    }
  });
}

template <typename T>
WarpCoordinates<T> warp_coordinates(const Tensor<T>& d, const CameraIntrinsics& k,
                                    const std::vector<Se3Transform>& n_from_t) {
  if (d.rank() != 4 || d.shape()[3] != 1 || d.shape()[1] != k.height || d.shape()[2] != k.width) {
    throw std::invalid_argument("warp_coordinates: depth shape " + to_string(d.shape()) + " does not match intrinsics");
  }
  const int n = d.shape()[0], h = k.height, w = k.width;
  if (static_cast<int>(n_from_t.size()) != n) throw std::invalid_argument("warp_coordinates: one transform per batch entry");
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  const auto dv = d.values();
  std::vector<T> coords(pixels * n * 2, T(-1)), reproj(pixels * n, T(0));
  // Per pixel: a = R * ray (constant), z = a_z + d * t_z; partials wrt d cached for backward.
  std::vector<T> du_dd(pixels * n, T(0)), dv_dd(pixels * n, T(0)), dr_dd(pixels * n, T(0));
  WarpCoordinates<T> out;
  out.front.assign(pixels * n, 0);
  out.in_bounds.assign(pixels * n, 0);
  for (int s = 0; s < n; ++s) {
    const Eigen::Matrix3d& r = n_from_t[s].rotation();
    const Eigen::Vector3d& t = n_from_t[s].translation();
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) {
        const std::size_t i = s * pixels + static_cast<std::size_t>(row) * w + col;
        const double dd = dv[i];
        if (!(dd > 0.0)) continue;
        const Eigen::Vector3d a = r * Eigen::Vector3d((col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0);
        const Eigen::Vector3d x = a + dd * t;
        if (!(x.z() > 0.0)) continue;
        const double z2 = x.z() * x.z();
        const double u = k.fx * x.x() / x.z() + k.cx;
        const double v = k.fy * x.y() / x.z() + k.cy;
        coords[2 * i] = static_cast<T>(u);
        coords[2 * i + 1] = static_cast<T>(v);
        reproj[i] = static_cast<T>(dd / x.z());
        du_dd[i] = static_cast<T>(k.fx * (t.x() * x.z() - x.x() * t.z()) / z2);
        dv_dd[i] = static_cast<T>(k.fy * (t.y() * x.z() - x.y() * t.z()) / z2);
        dr_dd[i] = static_cast<T>(a.z() / z2);
        out.front[i] = 1;
        out.in_bounds[i] = u >= 0.0 && u <= w - 1 && v >= 0.0 && v <= h - 1;
      }
    }
  }
  Shape base = d.shape();
  Shape cshape{n, h, w, 2};
  out.coords = make_node<T>(cshape, std::move(coords), {d}, "warp_coords", [du_dd, dv_dd](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[2 * i] * du_dd[i] + self.grad[2 * i + 1] * dv_dd[i];
  });
  out.reproj_idepth = make_node<T>(base, std::move(reproj), {d}, "warp_reproj", [dr_dd = std::move(dr_dd)](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dr_dd[i];
  });
  return out;
}

#define MVR_INSTANTIATE(T)                                                                                   \
  template class Tensor<T>;                                                                                  \
  template class Gradients<T>;                                                                               \
  template Gradients<T> backward(const Tensor<T>&);                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
  template Tensor<T> unary(const Tensor<T>&, std::function<T(T)>, std::function<T(T)>, const char*);         \
  template Tensor<T> elu(const Tensor<T>&);                                                                  \
  template Tensor<T> abs(const Tensor<T>&);                                                                  \
  template Tensor<T> square(const Tensor<T>&);                                                               \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                             \
  template Tensor<T> slice(const Tensor<T>&, int, int, int);                                                 \
  template Tensor<T> transpose(const Tensor<T>&);                                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> sum(const Tensor<T>&, int);                                                             \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool);                               \
  template Tensor<T> masked_sum(const Tensor<T>&, std::span<const std::uint8_t>);                            \
  template Tensor<T> masked_mean(const Tensor<T>&, std::span<const std::uint8_t>);                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int);                                        \
  template Tensor<T> group_norm(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                                   \
  template Tensor<T> grid_sample(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);         \
  template Tensor<T> softmax(const Tensor<T>&, int, std::span<const std::uint8_t>);                          \
  template WarpCoordinates<T> warp_coordinates(const Tensor<T>&, const CameraIntrinsics&,                    \
                                               const std::vector<Se3Transform>&);

MVR_INSTANTIATE(float)
MVR_INSTANTIATE(double)

#undef MVR_INSTANTIATE

}  // namespace mvr::ad
