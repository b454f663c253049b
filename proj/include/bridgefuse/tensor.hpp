#ifndef BRIDGEFUSE_TENSOR_HPP_
#define BRIDGEFUSE_TENSOR_HPP_

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Values live in a flat
// row-major Eigen::VectorXd; rank-2 tensors are exposed through row-major
// Eigen maps so that kernels can be written as ordinary Eigen expressions.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bridgefuse {

using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;
/// true = real position, false = padding.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::string ShapeString(const Shape& shape);
Index NumElements(const Shape& shape);

/// Accumulates the gradient of one op into its inputs. `grad_inputs[i]` is
/// null when input i does not require a gradient.
using BackwardFn = std::function<void(const Eigen::VectorXd& value, const Eigen::VectorXd& grad_output,
                                      std::span<Eigen::VectorXd* const> grad_inputs)>;

namespace detail {
struct Node {
  Shape shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;  // empty until populated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Eigen::VectorXd data, bool requires_grad = false);

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);
  static Tensor FromMatrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad = false);
  static Tensor FromVector(const Eigen::Ref<const Eigen::VectorXd>& v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index size() const { return node().value.size(); }
  Index rows() const;
  Index cols() const;
  Index dim(Index axis) const;

  const Eigen::VectorXd& data() const { return node().value; }
  /// Direct write access; only meaningful for leaves (parameters).
  Eigen::VectorXd& mutable_data() { return node().value; }
  Eigen::Map<const RowMatrix> matrix() const;
  Eigen::Map<RowMatrix> mutable_matrix();
  double item() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) { node().requires_grad = flag; }
  bool has_grad() const { return node().grad.size() == node().value.size() && node().value.size() > 0; }
  const Eigen::VectorXd& grad() const;
  Eigen::VectorXd& mutable_grad();
  Eigen::Map<const RowMatrix> grad_matrix() const;
  void zero_grad();

  bool is_leaf() const { return node().inputs.empty(); }
  /// Same values, no history, no gradient requirement.
  Tensor Detach() const;
  Tensor Reshape(Shape shape) const;

  const detail::Node* node_ptr() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;

  friend Tensor MakeOp(Shape, Eigen::VectorXd, const std::vector<Tensor>&, BackwardFn);
};

/// Records a new op. If no input requires a gradient, the result is a
/// constant and the backward rule is dropped.
Tensor MakeOp(Shape shape, Eigen::VectorXd value, const std::vector<Tensor>& inputs, BackwardFn backward);

/// Nodes reachable from a root, in topological order (inputs first).
class ComputationTape {
 public:
  static ComputationTape Record(const Tensor& root);

  std::span<const detail::Node* const> nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds d(root)/d(root) = 1 and runs every backward rule once, in
  /// reverse order. Gradients accumulate into existing grad buffers.
  void Backward() const;

 private:
  std::vector<detail::Node*> order_;
  std::shared_ptr<detail::Node> root_;
};

/// Records the tape for a scalar loss and back-propagates through it.
void Backward(const Tensor& loss);

// ---- primitive ops -------------------------------------------------------

Tensor Matmul(const Tensor& a, const Tensor& b);
Tensor Transpose(const Tensor& a);
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Hadamard(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double factor);
/// x (m×n) + b (n) broadcast over rows.
Tensor AddRowBroadcast(const Tensor& x, const Tensor& b);
/// x W + b.
Tensor Linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Row-wise softmax with max subtraction. Columns flagged false in
/// `column_mask` get exactly zero weight.
Tensor SoftmaxRows(const Tensor& x, const std::optional<Mask>& column_mask = std::nullopt);

Tensor Sum(const Tensor& x);
Tensor MeanOverAxis(const Tensor& x, Index axis);

enum class Elementwise { kSigmoid, kRelu, kLog };
Tensor Apply(const Tensor& x, Elementwise fn);
inline Tensor Sigmoid(const Tensor& x) { return Apply(x, Elementwise::kSigmoid); }
inline Tensor Relu(const Tensor& x) { return Apply(x, Elementwise::kRelu); }
inline Tensor Log(const Tensor& x) { return Apply(x, Elementwise::kLog); }

Tensor SliceCols(const Tensor& x, Index start, Index count);
Tensor ConcatCols(const std::vector<Tensor>& parts);
/// Stacks rank-1 tensors of equal length into a (count × n) matrix.
Tensor Stack(const std::vector<Tensor>& rows);
Tensor SelectRows(const Tensor& x, const std::vector<Index>& rows);
/// Zeroes rows whose mask entry is false.
Tensor MaskRows(const Tensor& x, const Mask& keep);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return Add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return Sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return Scale(a, s); }

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_TENSOR_HPP_
