#include "cacs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cacs {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

std::vector<Index> row_major_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size());
  Index acc = 1;
  for (Index d = static_cast<Index>(shape.size()) - 1; d >= 0; --d) {
    strides[static_cast<size_t>(d)] = acc;
    acc *= shape[static_cast<size_t>(d)];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (size_t i = 0; i < nd; ++i) {
    const Index da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const Index db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da == db) {
      out[i] = da;
    } else if (da == 1 || db == 1) {
      out[i] = std::max(da, db);
    } else {
      throw ValidationError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

// Per-dimension steps of `in` aligned to the right of `out`; 0 where `in`
// broadcasts.
std::vector<Index> broadcast_steps(const Shape& in, const Shape& out) {
  const auto strides = row_major_strides(in);
  std::vector<Index> steps(out.size(), 0);
  const size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) {
    steps[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : strides[i];
  }
  return steps;
}

// Visits every element of the broadcast result shape, handing the callback
// the flat output index plus the flat offsets into both operands.
template <class F>
void for_broadcast_pair(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const Index n = shape_size(out);
  const auto stepa = broadcast_steps(sa, out);
  const auto stepb = broadcast_steps(sb, out);
  const int nd = static_cast<int>(out.size());
  std::vector<Index> idx(static_cast<size_t>(nd), 0);
  Index ia = 0, ib = 0;
  for (Index o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      ia += stepa[static_cast<size_t>(d)];
      ib += stepb[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
      ia -= stepa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      ib -= stepb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

Shape keepdims_shape(const Shape& in, const std::vector<Index>& axes) {
  Shape out = in;
  for (Index ax : axes) out[static_cast<size_t>(ax)] = 1;
  return out;
}

std::vector<Index> normalize_axes(const Shape& shape, const std::vector<Index>& axes) {
  std::vector<Index> out = axes;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (Index ax : out) {
    check(ax >= 0 && ax < static_cast<Index>(shape.size()),
          "reduction axis out of range for " + shape_str(shape));
  }
  return out;
}

Shape squeeze_axes(const Shape& in, const std::vector<Index>& axes) {
  Shape out;
  for (size_t i = 0; i < in.size(); ++i) {
    if (std::find(axes.begin(), axes.end(), static_cast<Index>(i)) == axes.end()) {
      out.push_back(in[i]);
    }
  }
  return out;
}

using BackwardFn = std::function<void(const Array&, const std::vector<Array*>&)>;

// Generic elementwise binary op. ValueFn(a,b) -> out; GradA(a,b,flow) and
// GradB(a,b,flow) give the contribution per broadcast element.
template <class ValueFn, class GradA, class GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, ValueFn value, GradA grad_a, GradB grad_b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Array out(shape_size(out_shape));
  const Array& av = a.values();
  const Array& bv = b.values();
  for_broadcast_pair(out_shape, a.shape(), b.shape(),
                     [&](Index o, Index ia, Index ib) { out[o] = value(av[ia], bv[ib]); });

  auto an = a.node();
  auto bn = b.node();
  BackwardFn backward = [an, bn, out_shape, grad_a, grad_b](const Array& flow,
                                                            const std::vector<Array*>& pf) {
    if (pf[0] != nullptr) {
      Array& ga = *pf[0];
      for_broadcast_pair(out_shape, an->shape, bn->shape, [&](Index o, Index ia, Index ib) {
        ga[ia] += grad_a(an->values[ia], bn->values[ib], flow[o]);
      });
    }
    if (pf[1] != nullptr) {
      Array& gb = *pf[1];
      for_broadcast_pair(out_shape, an->shape, bn->shape, [&](Index o, Index ia, Index ib) {
        gb[ib] += grad_b(an->values[ia], bn->values[ib], flow[o]);
      });
    }
  };
  return make_op(out_shape, std::move(out), {a, b}, std::move(backward));
}

// Generic elementwise unary op with precomputed derivative buffer.
Tensor unary_op(const Tensor& t, Array values, Array dvalues) {
  auto d = std::make_shared<Array>(std::move(dvalues));
  BackwardFn backward = [d](const Array& flow, const std::vector<Array*>& pf) {
    if (pf[0] != nullptr) *pf[0] += flow * (*d);
  };
  return make_op(t.shape(), std::move(values), {t}, std::move(backward));
}

struct AxisSplit {
  Index outer = 1, mid = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index d = 0; d < static_cast<Index>(shape.size()); ++d) {
    const Index v = shape[static_cast<size_t>(d)];
    if (d < axis) {
      s.outer *= v;
    } else if (d == axis) {
      s.mid = v;
    } else {
      s.inner *= v;
    }
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor make_leaf(Shape shape, Array values) {
  for (Index d : shape) check(d > 0, "tensor dims must be positive, got " + shape_str(shape));
  check(values.size() == shape_size(shape),
        "value count does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return Tensor(std::move(node));
}

Tensor make_op(Shape shape, Array values, std::vector<Tensor> parents, BackwardFn backward) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->leaf = false;
  node->backward = std::move(backward);
  node->parents.reserve(parents.size());
  for (const Tensor& p : parents) {
    check(p.defined(), "operation on undefined tensor");
    node->parents.push_back(p.node());
    node->requires_grad = node->requires_grad || p.node()->requires_grad;
  }
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values) {
  Array a(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), a.data());
  return make_leaf(std::move(shape), std::move(a));
}

Tensor Tensor::from_array(Shape shape, Array values) {
  return make_leaf(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  return make_leaf(shape, Array::Zero(shape_size(shape)));
}

Tensor Tensor::ones(Shape shape) {
  return make_leaf(shape, Array::Ones(shape_size(shape)));
}

Tensor Tensor::full(Shape shape, double value) {
  return make_leaf(shape, Array::Constant(shape_size(shape), value));
}

Tensor Tensor::scalar(double value) {
  return make_leaf(Shape{}, Array::Constant(1, value));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, double mean) {
  std::normal_distribution<double> dist(mean, stddev);
  Array a(shape_size(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return make_leaf(std::move(shape), std::move(a));
}

Tensor Tensor::rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Array a(shape_size(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return make_leaf(std::move(shape), std::move(a));
}

const Shape& Tensor::shape() const { return node_->shape; }
Index Tensor::ndim() const { return static_cast<Index>(node_->shape.size()); }
Index Tensor::size() const { return node_->values.size(); }
Array& Tensor::values() { return node_->values; }
const Array& Tensor::values() const { return node_->values; }
double Tensor::at(Index flat) const { return node_->values[flat]; }

double Tensor::value() const {
  check(size() == 1, "value() requires a single-element tensor, got " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool enable) {
  check(node_->leaf, "requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = enable;
  return *this;
}

bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return node_->grad.size() > 0; }

const Array& Tensor::grad() const {
  check(has_grad(), "tensor has no accumulated gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() > 0) node_->grad.setZero();
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (Index i = 0; i < b.size(); ++i) {
    check(b.at(i) != 0.0, "division by zero");
  }
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double g) { return g / y; },
      [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double g) { return x >= y ? g : 0.0; },
      [](double x, double y, double g) { return y > x ? g : 0.0; });
}

Tensor neg(const Tensor& t) {
  return unary_op(t, -t.values(), Array::Constant(t.size(), -1.0));
}

Tensor log(const Tensor& t) {
  for (Index i = 0; i < t.size(); ++i) {
    check(t.at(i) > 0.0, "log of non-positive value");
  }
  return unary_op(t, t.values().log(), t.values().inverse());
}

Tensor exp(const Tensor& t) {
  Array v = t.values().exp();
  Array d = v;
  return unary_op(t, std::move(v), std::move(d));
}

Tensor sqrt(const Tensor& t) {
  for (Index i = 0; i < t.size(); ++i) {
    check(t.at(i) >= 0.0, "sqrt of negative value");
  }
  Array v = t.values().sqrt();
  Array d = 0.5 / v;
  return unary_op(t, std::move(v), std::move(d));
}

Tensor clip(const Tensor& t, double lo, double hi) {
  check(lo <= hi, "clip bounds out of order");
  const Array& x = t.values();
  Array v = x.min(hi).max(lo);
  Array d(t.size());
  for (Index i = 0; i < t.size(); ++i) d[i] = (x[i] >= lo && x[i] <= hi) ? 1.0 : 0.0;
  return unary_op(t, std::move(v), std::move(d));
}

Tensor relu(const Tensor& t) {
  const Array& x = t.values();
  Array v = x.max(0.0);
  Array d(t.size());
  for (Index i = 0; i < t.size(); ++i) d[i] = x[i] > 0.0 ? 1.0 : 0.0;
  return unary_op(t, std::move(v), std::move(d));
}

Tensor sigmoid(const Tensor& t) {
  Array v(t.size());
  for (Index i = 0; i < t.size(); ++i) {
    const double x = t.at(i);
    v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Array d = v * (1.0 - v);
  return unary_op(t, std::move(v), std::move(d));
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

std::vector<Index> all_axes(const Shape& shape) {
  std::vector<Index> axes(shape.size());
  for (size_t i = 0; i < shape.size(); ++i) axes[i] = static_cast<Index>(i);
  return axes;
}

enum class ReduceKind { Sum, Mean, Max };

Tensor reduce(const Tensor& t, std::vector<Index> axes, bool keepdims, ReduceKind kind) {
  axes = normalize_axes(t.shape(), axes);
  const Shape kshape = keepdims_shape(t.shape(), axes);
  const Index out_n = shape_size(kshape);
  const double count = static_cast<double>(t.size()) / static_cast<double>(out_n);

  Array out;
  auto arg = std::make_shared<std::vector<Index>>();
  if (kind == ReduceKind::Max) {
    out = Array::Constant(out_n, -std::numeric_limits<double>::infinity());
    arg->assign(static_cast<size_t>(out_n), -1);
    const Array& x = t.values();
    // strict > keeps the first-encountered maximum: lowest flat index wins ties
    for_broadcast_pair(t.shape(), t.shape(), kshape, [&](Index o, Index, Index ib) {
      if (x[o] > out[ib]) {
        out[ib] = x[o];
        (*arg)[static_cast<size_t>(ib)] = o;
      }
    });
  } else {
    out = Array::Zero(out_n);
    const Array& x = t.values();
    for_broadcast_pair(t.shape(), t.shape(), kshape,
                       [&](Index o, Index, Index ib) { out[ib] += x[o]; });
    if (kind == ReduceKind::Mean) out /= count;
  }

  const Shape out_shape = keepdims ? kshape : squeeze_axes(t.shape(), axes);
  const Shape in_shape = t.shape();
  BackwardFn backward;
  switch (kind) {
    case ReduceKind::Sum:
      backward = [in_shape, kshape](const Array& flow, const std::vector<Array*>& pf) {
        if (pf[0] == nullptr) return;
        Array& g = *pf[0];
        for_broadcast_pair(in_shape, in_shape, kshape,
                           [&](Index o, Index, Index ib) { g[o] += flow[ib]; });
      };
      break;
    case ReduceKind::Mean:
      backward = [in_shape, kshape, count](const Array& flow, const std::vector<Array*>& pf) {
        if (pf[0] == nullptr) return;
        Array& g = *pf[0];
        for_broadcast_pair(in_shape, in_shape, kshape,
                           [&](Index o, Index, Index ib) { g[o] += flow[ib] / count; });
      };
      break;
    case ReduceKind::Max:
      backward = [arg](const Array& flow, const std::vector<Array*>& pf) {
        if (pf[0] == nullptr) return;
        Array& g = *pf[0];
        for (Index j = 0; j < flow.size(); ++j) g[(*arg)[static_cast<size_t>(j)]] += flow[j];
      };
      break;
  }
  return make_op(out_shape, std::move(out), {t}, std::move(backward));
}

}  // namespace

Tensor sum(const Tensor& t) { return reduce(t, all_axes(t.shape()), false, ReduceKind::Sum); }
Tensor sum(const Tensor& t, const std::vector<Index>& axes, bool keepdims) {
  return reduce(t, axes, keepdims, ReduceKind::Sum);
}
Tensor mean(const Tensor& t) { return reduce(t, all_axes(t.shape()), false, ReduceKind::Mean); }
Tensor mean(const Tensor& t, const std::vector<Index>& axes, bool keepdims) {
  return reduce(t, axes, keepdims, ReduceKind::Mean);
}
Tensor max(const Tensor& t) { return reduce(t, all_axes(t.shape()), false, ReduceKind::Max); }
Tensor max(const Tensor& t, const std::vector<Index>& axes, bool keepdims) {
  return reduce(t, axes, keepdims, ReduceKind::Max);
}

// ---------------------------------------------------------------------------
// Structure

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2, "matmul expects rank-2 tensors");
  const Index m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  check(k == k2, "matmul inner dims differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> A(a.values().data(), m, k);
  Eigen::Map<const RowMat> B(b.values().data(), k, n);
  RowMat C = A * B;
  Array out = Eigen::Map<Array>(C.data(), m * n);

  auto an = a.node();
  auto bn = b.node();
  BackwardFn backward = [an, bn, m, k, n](const Array& flow, const std::vector<Array*>& pf) {
    Eigen::Map<const RowMat> G(flow.data(), m, n);
    Eigen::Map<const RowMat> A(an->values.data(), m, k);
    Eigen::Map<const RowMat> B(bn->values.data(), k, n);
    if (pf[0] != nullptr) Eigen::Map<RowMat>(pf[0]->data(), m, k) += G * B.transpose();
    if (pf[1] != nullptr) Eigen::Map<RowMat>(pf[1]->data(), k, n) += A.transpose() * G;
  };
  return make_op({m, n}, std::move(out), {a, b}, std::move(backward));
}

Tensor concat(std::span<const Tensor> parts, Index axis) {
  check(!parts.empty(), "concat of zero tensors");
  const Shape& base = parts[0].shape();
  check(axis >= 0 && axis < static_cast<Index>(base.size()), "concat axis out of range");
  Index total_mid = 0;
  for (const Tensor& p : parts) {
    check(p.ndim() == static_cast<Index>(base.size()), "concat rank mismatch");
    for (Index d = 0; d < p.ndim(); ++d) {
      if (d != axis) {
        check(p.shape()[static_cast<size_t>(d)] == base[static_cast<size_t>(d)],
              "concat shapes differ off-axis");
      }
    }
    total_mid += p.shape()[static_cast<size_t>(axis)];
  }
  Shape out_shape = base;
  out_shape[static_cast<size_t>(axis)] = total_mid;

  const AxisSplit s = split_at(out_shape, axis);
  Array out(shape_size(out_shape));
  std::vector<Index> mids;
  Index mid_off = 0;
  for (const Tensor& p : parts) {
    const Index pm = p.shape()[static_cast<size_t>(axis)];
    mids.push_back(pm);
    const Array& pv = p.values();
    for (Index o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * pm * s.inner, pm * s.inner,
                  out.data() + (o * total_mid + mid_off) * s.inner);
    }
    mid_off += pm;
  }

  BackwardFn backward = [s, mids, total_mid](const Array& flow, const std::vector<Array*>& pf) {
    Index off = 0;
    for (size_t pi = 0; pi < mids.size(); ++pi) {
      const Index pm = mids[pi];
      if (pf[pi] != nullptr) {
        Array& g = *pf[pi];
        for (Index o = 0; o < s.outer; ++o) {
          const double* src = flow.data() + (o * total_mid + off) * s.inner;
          double* dst = g.data() + o * pm * s.inner;
          for (Index i = 0; i < pm * s.inner; ++i) dst[i] += src[i];
        }
      }
      off += pm;
    }
  };
  return make_op(out_shape, std::move(out), {parts.begin(), parts.end()}, std::move(backward));
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  return concat(std::span<const Tensor>(parts.data(), parts.size()), axis);
}

Tensor slice(const Tensor& t, Index axis, Index start, Index stop) {
  check(axis >= 0 && axis < t.ndim(), "slice axis out of range");
  const Index mid = t.shape()[static_cast<size_t>(axis)];
  check(start >= 0 && start < stop && stop <= mid, "slice range invalid");
  Shape out_shape = t.shape();
  out_shape[static_cast<size_t>(axis)] = stop - start;

  const AxisSplit s = split_at(t.shape(), axis);
  const Index span_n = (stop - start) * s.inner;
  Array out(shape_size(out_shape));
  const Array& x = t.values();
  for (Index o = 0; o < s.outer; ++o) {
    std::copy_n(x.data() + (o * mid + start) * s.inner, span_n, out.data() + o * span_n);
  }

  BackwardFn backward = [s, mid, start, span_n](const Array& flow, const std::vector<Array*>& pf) {
    if (pf[0] == nullptr) return;
    Array& g = *pf[0];
    for (Index o = 0; o < s.outer; ++o) {
      const double* src = flow.data() + o * span_n;
      double* dst = g.data() + (o * mid + start) * s.inner;
      for (Index i = 0; i < span_n; ++i) dst[i] += src[i];
    }
  };
  return make_op(out_shape, std::move(out), {t}, std::move(backward));
}

Tensor reshape(const Tensor& t, Shape shape) {
  check(shape_size(shape) == t.size(),
        "reshape size mismatch: " + shape_str(t.shape()) + " -> " + shape_str(shape));
  BackwardFn backward = [](const Array& flow, const std::vector<Array*>& pf) {
    if (pf[0] != nullptr) *pf[0] += flow;
  };
  return make_op(std::move(shape), t.values(), {t}, std::move(backward));
}

Tensor pad_replicate(const Tensor& t, Index top, Index bottom, Index left, Index right) {
  check(t.ndim() >= 2, "pad_replicate expects rank >= 2");
  check(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "negative padding");
  const Index h = t.shape()[static_cast<size_t>(t.ndim() - 2)];
  const Index w = t.shape()[static_cast<size_t>(t.ndim() - 1)];
  const Index oh = h + top + bottom, ow = w + left + right;
  Shape out_shape = t.shape();
  out_shape[static_cast<size_t>(t.ndim() - 2)] = oh;
  out_shape[static_cast<size_t>(t.ndim() - 1)] = ow;
  const Index batch = t.size() / (h * w);

  Array out(shape_size(out_shape));
  const Array& x = t.values();
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < oh; ++i) {
      const Index si = std::clamp<Index>(i - top, 0, h - 1);
      for (Index j = 0; j < ow; ++j) {
        const Index sj = std::clamp<Index>(j - left, 0, w - 1);
        out[(b * oh + i) * ow + j] = x[(b * h + si) * w + sj];
      }
    }
  }

  BackwardFn backward = [batch, h, w, oh, ow, top, left](const Array& flow,
                                                         const std::vector<Array*>& pf) {
    if (pf[0] == nullptr) return;
    Array& g = *pf[0];
    for (Index b = 0; b < batch; ++b) {
      for (Index i = 0; i < oh; ++i) {
        const Index si = std::clamp<Index>(i - top, 0, h - 1);
        for (Index j = 0; j < ow; ++j) {
          const Index sj = std::clamp<Index>(j - left, 0, w - 1);
          g[(b * h + si) * w + sj] += flow[(b * oh + i) * ow + j];
        }
      }
    }
  };
  return make_op(out_shape, std::move(out), {t}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Backward sweep

void backward(const Tensor& loss) {
  check(loss.defined(), "backward on undefined tensor");
  check(loss.size() == 1, "backward requires a single-element root, got " + shape_str(loss.shape()));

  using Node = detail::TensorNode;
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; each node enters the order exactly once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Array> flows;
  flows[root] = Array::Ones(1);
  std::vector<Array*> parent_flows;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto fit = flows.find(node);
    if (fit == flows.end()) continue;
    if (node->leaf) continue;
    parent_flows.clear();
    for (auto& parent : node->parents) {
      if (!parent->requires_grad) {
        parent_flows.push_back(nullptr);
        continue;
      }
      auto [pit, inserted] = flows.try_emplace(parent.get());
      if (inserted) pit->second = Array::Zero(parent->values.size());
      parent_flows.push_back(&pit->second);
    }
    node->backward(fit->second, parent_flows);
  }

  for (Node* node : order) {
    if (!node->leaf || !node->requires_grad) continue;
    auto fit = flows.find(node);
    if (fit == flows.end()) continue;
    if (node->grad.size() == 0) node->grad = Array::Zero(node->values.size());
    node->grad += fit->second;
  }
}

Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  Array g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Array plus = x.values();
    plus[i] += eps;
    Array minus = x.values();
    minus[i] -= eps;
    const double fp = f(make_leaf(x.shape(), std::move(plus))).value();
    const double fm = f(make_leaf(x.shape(), std::move(minus))).value();
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return make_leaf(x.shape(), std::move(g));
}

}  // namespace cacs
