#include "bridgefuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace bridgefuse {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

ConstRowMap AsMatrix(const Eigen::VectorXd& v, Index rows, Index cols) {
  return ConstRowMap(v.data(), rows, cols);
}
RowMap AsMatrix(Eigen::VectorXd& v, Index rows, Index cols) { return RowMap(v.data(), rows, cols); }

void RequireRank(const Tensor& t, Index rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     ShapeString(t.shape()));
  }
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + ShapeString(a.shape()) + " vs " +
                     ShapeString(b.shape()));
  }
}

}  // namespace

std::string ShapeString(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Index NumElements(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor(Shape shape, Eigen::VectorXd data, bool requires_grad) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("Tensor: non-positive dimension in " + ShapeString(shape));
  }
  if (NumElements(shape) != data.size()) {
    throw ShapeError("Tensor: shape " + ShapeString(shape) + " holds " + std::to_string(NumElements(shape)) +
                     " values, data has " + std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  const Index n = NumElements(shape);
  return Tensor(std::move(shape), Eigen::VectorXd::Zero(n), requires_grad);
}

Tensor Tensor::Scalar(double value, bool requires_grad) {
  return Tensor({}, Eigen::VectorXd::Constant(1, value), requires_grad);
}

Tensor Tensor::FromMatrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad) {
  Eigen::VectorXd flat(m.size());
  AsMatrix(flat, m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(flat), requires_grad);
}

Tensor Tensor::FromVector(const Eigen::Ref<const Eigen::VectorXd>& v, bool requires_grad) {
  return Tensor({v.size()}, Eigen::VectorXd(v), requires_grad);
}

detail::Node& Tensor::node() const {
  if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
  return *node_;
}

Index Tensor::rows() const {
  if (rank() == 2) return shape()[0];
  if (rank() == 1) return 1;
  if (rank() == 0) return 1;
  throw ShapeError("Tensor::rows on shape " + ShapeString(shape()));
}

Index Tensor::cols() const {
  if (rank() == 2) return shape()[1];
  if (rank() == 1) return shape()[0];
  if (rank() == 0) return 1;
  throw ShapeError("Tensor::cols on shape " + ShapeString(shape()));
}

Index Tensor::dim(Index axis) const {
  if (axis < 0 || axis >= rank()) throw ShapeError("Tensor::dim: axis out of range");
  return shape()[static_cast<std::size_t>(axis)];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  return AsMatrix(std::as_const(node().value), rows(), cols());
}

Eigen::Map<RowMatrix> Tensor::mutable_matrix() { return AsMatrix(node().value, rows(), cols()); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("Tensor::item on shape " + ShapeString(shape()));
  return node().value[0];
}

const Eigen::VectorXd& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient populated");
  return node().grad;
}

Eigen::VectorXd& Tensor::mutable_grad() {
  if (!has_grad()) node().grad = Eigen::VectorXd::Zero(size());
  return node().grad;
}

Eigen::Map<const RowMatrix> Tensor::grad_matrix() const { return AsMatrix(grad(), rows(), cols()); }

void Tensor::zero_grad() { node().grad.resize(0); }

Tensor Tensor::Detach() const { return Tensor(shape(), data(), false); }

Tensor Tensor::Reshape(Shape new_shape) const {
  if (NumElements(new_shape) != size()) {
    throw ShapeError("Reshape: " + ShapeString(shape()) + " -> " + ShapeString(new_shape));
  }
  return MakeOp(std::move(new_shape), data(), {*this},
                [](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) *in[0] += g;
                });
}

Tensor MakeOp(Shape shape, Eigen::VectorXd value, const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(value), false);
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs_grad) {
    auto& node = *out.node_;
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (const auto& t : inputs) node.inputs.push_back(t.shared_node());
    node.backward = std::move(backward);
  }
  return out;
}

// ---- tape ----------------------------------------------------------------

ComputationTape ComputationTape::Record(const Tensor& root) {
  ComputationTape tape;
  tape.root_ = root.shared_node();
  if (!root.requires_grad()) return tape;

  // Iterative post-order DFS; only nodes that need a gradient are kept.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(tape.root_.get(), 0);
  visited.insert(tape.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void ComputationTape::Backward() const {
  if (order_.empty()) return;
  detail::Node* root = order_.back();
  if (root->grad.size() != root->value.size()) root->grad = Eigen::VectorXd::Zero(root->value.size());
  root->grad.array() += 1.0;

  std::vector<Eigen::VectorXd*> slots;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    if (node->grad.size() != node->value.size()) continue;  // unreachable from root
    slots.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      detail::Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.size() != in->value.size()) in->grad = Eigen::VectorXd::Zero(in->value.size());
      slots[i] = &in->grad;
    }
    node->backward(node->value, node->grad, slots);
  }
}

void Backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("Backward: loss must be scalar, got " + ShapeString(loss.shape()));
  ComputationTape::Record(loss).Backward();
}

// ---- ops -----------------------------------------------------------------

Tensor Matmul(const Tensor& a, const Tensor& b) {
  RequireRank(a, 2, "Matmul");
  RequireRank(b, 2, "Matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("Matmul: inner dimensions differ, " + ShapeString(a.shape()) + " · " +
                     ShapeString(b.shape()));
  }
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  Eigen::VectorXd out(m * n);
  AsMatrix(out, m, n).noalias() = a.matrix() * b.matrix();
  return MakeOp({m, n}, std::move(out), {a, b},
                [a, b, m, k, n](const Eigen::VectorXd&, const Eigen::VectorXd& g,
                                std::span<Eigen::VectorXd* const> in) {
                  const auto gm = AsMatrix(g, m, n);
                  if (in[0]) AsMatrix(*in[0], m, k).noalias() += gm * b.matrix().transpose();
                  if (in[1]) AsMatrix(*in[1], k, n).noalias() += a.matrix().transpose() * gm;
                });
}

Tensor Transpose(const Tensor& a) {
  RequireRank(a, 2, "Transpose");
  const Index m = a.rows(), n = a.cols();
  Eigen::VectorXd out(m * n);
  AsMatrix(out, n, m) = a.matrix().transpose();
  return MakeOp({n, m}, std::move(out), {a},
                [m, n](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) AsMatrix(*in[0], m, n) += AsMatrix(g, n, m).transpose();
                });
}

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "Add");
  return MakeOp(a.shape(), a.data() + b.data(), {a, b},
                [](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) *in[0] += g;
                  if (in[1]) *in[1] += g;
                });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "Sub");
  return MakeOp(a.shape(), a.data() - b.data(), {a, b},
                [](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) *in[0] += g;
                  if (in[1]) *in[1] -= g;
                });
}

Tensor Hadamard(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "Hadamard");
  return MakeOp(a.shape(), a.data().cwiseProduct(b.data()), {a, b},
                [a, b](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) *in[0] += g.cwiseProduct(b.data());
                  if (in[1]) *in[1] += g.cwiseProduct(a.data());
                });
}

Tensor Scale(const Tensor& a, double factor) {
  return MakeOp(a.shape(), a.data() * factor, {a},
                [factor](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) *in[0] += factor * g;
                });
}

Tensor AddRowBroadcast(const Tensor& x, const Tensor& b) {
  RequireRank(x, 2, "AddRowBroadcast");
  if (b.size() != x.cols() || b.rank() > 1) {
    throw ShapeError("AddRowBroadcast: bias " + ShapeString(b.shape()) + " does not fit " +
                     ShapeString(x.shape()));
  }
  const Index m = x.rows(), n = x.cols();
  Eigen::VectorXd out(m * n);
  AsMatrix(out, m, n) = x.matrix().rowwise() + b.data().transpose();
  return MakeOp({m, n}, std::move(out), {x, b},
                [m, n](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  const auto gm = AsMatrix(g, m, n);
                  if (in[0]) *in[0] += g;
                  if (in[1]) *in[1] += gm.colwise().sum().transpose();
                });
}

Tensor Linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  RequireRank(x, 2, "Linear");
  RequireRank(weight, 2, "Linear");
  if (x.cols() != weight.rows() || bias.size() != weight.cols()) {
    throw ShapeError("Linear: x " + ShapeString(x.shape()) + ", W " + ShapeString(weight.shape()) + ", b " +
                     ShapeString(bias.shape()));
  }
  return AddRowBroadcast(Matmul(x, weight), bias);
}

Tensor SoftmaxRows(const Tensor& x, const std::optional<Mask>& column_mask) {
  RequireRank(x, 2, "SoftmaxRows");
  const Index m = x.rows(), n = x.cols();
  if (column_mask) {
    if (column_mask->size() != n) {
      throw ShapeError("SoftmaxRows: mask length " + std::to_string(column_mask->size()) + " vs " +
                       std::to_string(n) + " columns");
    }
    if (!column_mask->any()) throw DomainError("SoftmaxRows: every column is masked");
  }
  Eigen::VectorXd out(m * n);
  auto y = AsMatrix(out, m, n);
  const auto xm = x.matrix();
  for (Index r = 0; r < m; ++r) {
    double max = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < n; ++c) {
      if (!column_mask || (*column_mask)[c]) max = std::max(max, xm(r, c));
    }
    double total = 0.0;
    for (Index c = 0; c < n; ++c) {
      const double e = (!column_mask || (*column_mask)[c]) ? std::exp(xm(r, c) - max) : 0.0;
      y(r, c) = e;
      total += e;
    }
    y.row(r) /= total;
  }
  return MakeOp({m, n}, std::move(out), {x},
                [m, n](const Eigen::VectorXd& value, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (!in[0]) return;
                  const auto s = AsMatrix(value, m, n);
                  const auto gm = AsMatrix(g, m, n);
                  // dx = s * (g - <g, s>) per row
                  const Eigen::VectorXd dots = (gm.array() * s.array()).rowwise().sum();
                  AsMatrix(*in[0], m, n).array() += s.array() * (gm.colwise() - dots).array();
                });
}

Tensor Sum(const Tensor& x) {
  return MakeOp({}, Eigen::VectorXd::Constant(1, x.data().sum()), {x},
                [](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) in[0]->array() += g[0];
                });
}

Tensor MeanOverAxis(const Tensor& x, Index axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("MeanOverAxis: axis " + std::to_string(axis) + " out of range for " + ShapeString(x.shape()));
  }
  const Shape& s = x.shape();
  const auto ax = static_cast<std::size_t>(axis);
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const Index len = s[ax];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != ax) out_shape.push_back(s[i]);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(outer * inner);
  const auto& v = x.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < len; ++k) {
      out.segment(o * inner, inner) += v.segment((o * len + k) * inner, inner);
    }
  }
  out /= static_cast<double>(len);
  return MakeOp(std::move(out_shape), std::move(out), {x},
                [outer, inner, len](const Eigen::VectorXd&, const Eigen::VectorXd& g,
                                    std::span<Eigen::VectorXd* const> in) {
                  if (!in[0]) return;
                  const double w = 1.0 / static_cast<double>(len);
                  for (Index o = 0; o < outer; ++o) {
                    for (Index k = 0; k < len; ++k) {
                      in[0]->segment((o * len + k) * inner, inner) += w * g.segment(o * inner, inner);
                    }
                  }
                });
}

Tensor Apply(const Tensor& x, Elementwise fn) {
  const auto& v = x.data();
  Eigen::VectorXd out(v.size());
  switch (fn) {
    case Elementwise::kSigmoid:
      // Split by sign so exp never overflows.
      for (Index i = 0; i < v.size(); ++i) {
        out[i] = v[i] >= 0 ? 1.0 / (1.0 + std::exp(-v[i])) : std::exp(v[i]) / (1.0 + std::exp(v[i]));
      }
      break;
    case Elementwise::kRelu:
      out = v.cwiseMax(0.0);
      break;
    case Elementwise::kLog:
      if ((v.array() <= 0.0).any()) throw DomainError("Log: non-positive input");
      out = v.array().log();
      break;
  }
  return MakeOp(x.shape(), std::move(out), {x},
                [x, fn](const Eigen::VectorXd& y, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (!in[0]) return;
                  switch (fn) {
                    case Elementwise::kSigmoid:
                      in[0]->array() += g.array() * y.array() * (1.0 - y.array());
                      break;
                    case Elementwise::kRelu:
                      in[0]->array() += (x.data().array() > 0.0).select(g.array(), 0.0);
                      break;
                    case Elementwise::kLog:
                      in[0]->array() += g.array() / x.data().array();
                      break;
                  }
                });
}

Tensor SliceCols(const Tensor& x, Index start, Index count) {
  RequireRank(x, 2, "SliceCols");
  const Index m = x.rows(), n = x.cols();
  if (start < 0 || count <= 0 || start + count > n) {
    throw ShapeError("SliceCols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                     ShapeString(x.shape()));
  }
  Eigen::VectorXd out(m * count);
  AsMatrix(out, m, count) = x.matrix().middleCols(start, count);
  return MakeOp({m, count}, std::move(out), {x},
                [m, n, start, count](const Eigen::VectorXd&, const Eigen::VectorXd& g,
                                     std::span<Eigen::VectorXd* const> in) {
                  if (in[0]) AsMatrix(*in[0], m, n).middleCols(start, count) += AsMatrix(g, m, count);
                });
}

Tensor ConcatCols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("ConcatCols: no inputs");
  const Index m = parts.front().rows();
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    RequireRank(p, 2, "ConcatCols");
    if (p.rows() != m) throw ShapeError("ConcatCols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Eigen::VectorXd out(m * total);
  auto om = AsMatrix(out, m, total);
  Index offset = 0;
  for (const auto& p : parts) {
    om.middleCols(offset, p.cols()) = p.matrix();
    offset += p.cols();
  }
  return MakeOp({m, total}, std::move(out), parts,
                [m, total, widths](const Eigen::VectorXd&, const Eigen::VectorXd& g,
                                   std::span<Eigen::VectorXd* const> in) {
                  const auto gm = AsMatrix(g, m, total);
                  Index off = 0;
                  for (std::size_t i = 0; i < widths.size(); ++i) {
                    if (in[i]) AsMatrix(*in[i], m, widths[i]) += gm.middleCols(off, widths[i]);
                    off += widths[i];
                  }
                });
}

Tensor Stack(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("Stack: no inputs");
  const Index n = rows.front().size();
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != n) {
      throw ShapeError("Stack: expected rank-1 inputs of length " + std::to_string(n) + ", got " +
                       ShapeString(r.shape()));
    }
  }
  const auto count = static_cast<Index>(rows.size());
  Eigen::VectorXd out(count * n);
  for (Index i = 0; i < count; ++i) out.segment(i * n, n) = rows[static_cast<std::size_t>(i)].data();
  return MakeOp({count, n}, std::move(out), rows,
                [n](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  for (std::size_t i = 0; i < in.size(); ++i) {
                    if (in[i]) *in[i] += g.segment(static_cast<Index>(i) * n, n);
                  }
                });
}

Tensor SelectRows(const Tensor& x, const std::vector<Index>& rows) {
  RequireRank(x, 2, "SelectRows");
  if (rows.empty()) throw ShapeError("SelectRows: empty selection");
  const Index m = x.rows(), n = x.cols();
  const auto k = static_cast<Index>(rows.size());
  Eigen::VectorXd out(k * n);
  auto om = AsMatrix(out, k, n);
  for (Index i = 0; i < k; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= m) throw ShapeError("SelectRows: row index out of range");
    om.row(i) = x.matrix().row(r);
  }
  return MakeOp({k, n}, std::move(out), {x},
                [rows, m, n, k](const Eigen::VectorXd&, const Eigen::VectorXd& g,
                                std::span<Eigen::VectorXd* const> in) {
                  if (!in[0]) return;
                  auto gi = AsMatrix(*in[0], m, n);
                  const auto go = AsMatrix(g, k, n);
                  for (Index i = 0; i < k; ++i) gi.row(rows[static_cast<std::size_t>(i)]) += go.row(i);
                });
}

Tensor MaskRows(const Tensor& x, const Mask& keep) {
  RequireRank(x, 2, "MaskRows");
  const Index m = x.rows(), n = x.cols();
  if (keep.size() != m) throw ShapeError("MaskRows: mask length differs from row count");
  Eigen::VectorXd out = x.data();
  auto om = AsMatrix(out, m, n);
  for (Index r = 0; r < m; ++r) {
    if (!keep[r]) om.row(r).setZero();
  }
  return MakeOp({m, n}, std::move(out), {x},
                [keep, m, n](const Eigen::VectorXd&, const Eigen::VectorXd& g, std::span<Eigen::VectorXd* const> in) {
                  if (!in[0]) return;
                  auto gi = AsMatrix(*in[0], m, n);
                  const auto go = AsMatrix(g, m, n);
                  for (Index r = 0; r < m; ++r) {
                    if (keep[r]) gi.row(r) += go.row(r);
                  }
                });
}

}  // namespace bridgefuse
