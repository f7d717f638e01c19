#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "cacs/errors.hpp"

namespace cacs {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;

namespace detail {

/// One recorded operation. The graph is the DAG formed by parent links;
/// `backward` pushes the incoming gradient flow onto the parents. Entries of
/// `parent_flows` are null for parents that do not need gradients.
struct TensorNode {
  Shape shape;
  Array values;
  Array grad;  // leaf accumulation buffer, empty until first backward
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(const Array& flow, const std::vector<Array*>& parent_flows)> backward;
};

}  // namespace detail

/// Dense N-d array of 64-bit reals with reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle onto a shared node; copies alias the same
/// storage. Every operation records its parents and a backward closure, so
/// any scalar result can be differentiated with backward(). Leaf tensors
/// marked requires_grad accumulate into grad() across backward calls until
/// zero_grad().
///
/// Tensors that participate in a graph must not be mutated in place. Leaf
/// values may be updated between graph builds; that is how optimizer steps
/// work.
class Tensor {
public:
  Tensor() = default;

  static Tensor from_values(Shape shape, std::span<const double> values);
  static Tensor from_array(Shape shape, Array values);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);  // rank-0
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0, double mean = 0.0);
  static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index ndim() const;
  Index size() const;

  /// Flat row-major value buffer. Mutating is only legal on leaves outside
  /// any live graph (optimizer updates, finite-difference probes).
  Array& values();
  const Array& values() const;
  double at(Index flat) const;
  /// Value of a rank-0 / single-element tensor.
  double value() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool enable);
  bool is_leaf() const;

  bool has_grad() const;
  const Array& grad() const;
  void zero_grad();

  /// Internal node handle, used by operation implementations.
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_leaf(Shape shape, Array values);
  friend Tensor make_op(Shape shape, Array values, std::vector<Tensor> parents,
                        std::function<void(const Array&, const std::vector<Array*>&)> backward);
};

/// Builds a leaf node (no parents, no backward).
Tensor make_leaf(Shape shape, Array values);

/// Builds a recorded operation node. Exposed so composite modules
/// (convolutions, pooling) can define fused forward/backward pairs.
Tensor make_op(Shape shape, Array values, std::vector<Tensor> parents,
               std::function<void(const Array&, const std::vector<Array*>&)> backward);

Index shape_size(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);
std::string shape_str(const Shape& shape);

// ---- elementwise, with trailing-dim broadcasting ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // rejects exact-zero denominators
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route gradient to `a`
Tensor neg(const Tensor& t);
Tensor log(const Tensor& t);   // rejects non-positive inputs
Tensor exp(const Tensor& t);
Tensor sqrt(const Tensor& t);  // rejects negative inputs
Tensor clip(const Tensor& t, double lo, double hi);
Tensor relu(const Tensor& t);     // gradient at 0 is 0
Tensor sigmoid(const Tensor& t);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& t) { return neg(t); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

// ---- reductions ----
Tensor sum(const Tensor& t);
Tensor sum(const Tensor& t, const std::vector<Index>& axes, bool keepdims = false);
Tensor mean(const Tensor& t);
Tensor mean(const Tensor& t, const std::vector<Index>& axes, bool keepdims = false);
/// Max reduction; gradient routes to the first maximum in flat scan order.
Tensor max(const Tensor& t);
Tensor max(const Tensor& t, const std::vector<Index>& axes, bool keepdims = false);

// ---- structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor concat(std::span<const Tensor> parts, Index axis);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& t, Index axis, Index start, Index stop);
Tensor reshape(const Tensor& t, Shape shape);
/// Edge-replication padding of the last two axes.
Tensor pad_replicate(const Tensor& t, Index top, Index bottom, Index left, Index right);

// ---- autodiff ----
/// Reverse-mode sweep from a single-element root. Visits each recorded node
/// once in reverse topological order; leaf gradients accumulate across calls.
void backward(const Tensor& loss);

/// Central-difference gradient of a scalar-valued deterministic function,
/// (f(x+eps e_i) - f(x-eps e_i)) / 2eps per element. The verification oracle
/// for every analytic gradient in this project.
Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-6);

}  // namespace cacs
