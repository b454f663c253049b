#include <doctest.h>

#include <cmath>
#include <random>

#include "bridgefuse/tensor.hpp"
#include "oracles.hpp"

using namespace bridgefuse;

namespace {

RowMatrix M(std::initializer_list<std::initializer_list<double>> rows) {
  RowMatrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

// Autodiff gradient of `loss(x)` with respect to x vs central differences.
double GradCheck(const std::function<Tensor(const Tensor&)>& loss, Tensor x, double h = 1e-4) {
  x.zero_grad();
  Backward(loss(x));
  const Eigen::VectorXd analytic = x.grad();
  auto f = [&] { return loss(x.Detach()).item(); };
  const Eigen::VectorXd numeric = oracle::NumericGradient(f, x.mutable_data(), h);
  return oracle::MaxRelativeError(analytic, numeric);
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, Eigen::VectorXd::LinSpaced(6, 0, 5));
  CHECK(t.size() == 6);
  CHECK(t.matrix()(1, 0) == 3.0);
  CHECK_THROWS_AS(Tensor({2, 3}, Eigen::VectorXd::Zero(5)), ShapeError);
  CHECK_THROWS_AS(Tensor::Zeros({0, 3}), ShapeError);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
  const RowMatrix m = M({{1, 2}, {3, 4}});
  CHECK(Matmul(Tensor::FromMatrix(RowMatrix::Identity(2, 2)), Tensor::FromMatrix(m)).matrix() == m);
  const Tensor r = Matmul(Tensor::FromMatrix(m), Tensor::FromMatrix(M({{1}, {1}})));
  CHECK(r.matrix() == M({{3}, {7}}));

  std::mt19937_64 rng(7);
  const Tensor a = Tensor::FromMatrix(oracle::RandomMatrix(4, 3, rng), true);
  const Tensor b = Tensor::FromMatrix(oracle::RandomMatrix(3, 5, rng), true);
  CHECK(GradCheck([&](const Tensor& x) { return Sum(Matmul(x, b)); }, a) < 1e-5);
  CHECK(GradCheck([&](const Tensor& x) { return Sum(Matmul(a, x)); }, b) < 1e-5);

  try {
    Matmul(a, a);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4x3]") != std::string::npos);
  }
}

TEST_CASE("softmax rows") {
  const Tensor eq = SoftmaxRows(Tensor::FromMatrix(M({{2, 2, 2, 2}})));
  for (Index i = 0; i < 4; ++i) CHECK(eq.data()[i] == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor s = SoftmaxRows(Tensor::FromMatrix(M({{0, std::log(3.0)}})));
  CHECK(std::abs(s.data()[0] - 0.25) < 1e-15);
  CHECK(std::abs(s.data()[1] - 0.75) < 1e-15);

  std::mt19937_64 rng(3);
  const RowMatrix x = oracle::RandomMatrix(3, 4, rng, 3.0);
  const Tensor y = SoftmaxRows(Tensor::FromMatrix(x));
  for (Index r = 0; r < 3; ++r) {
    CHECK(std::abs(y.matrix().row(r).sum() - 1.0) < 1e-9);
    CHECK((y.matrix().row(r).array() >= 0.0).all());
  }
  // Large inputs stay finite thanks to max subtraction.
  const Tensor big = SoftmaxRows(Tensor::FromMatrix(M({{1000, 1001, 999}})));
  CHECK(big.data().allFinite());

  const RowMatrix w = oracle::RandomMatrix(3, 4, rng);
  const Tensor wt = Tensor::FromMatrix(w);
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(SoftmaxRows(t), wt)); },
                  Tensor::FromMatrix(x, true)) < 1e-5);

  Mask keep(4);
  keep << true, false, true, true;
  const Tensor masked = SoftmaxRows(Tensor::FromMatrix(x), keep);
  CHECK((masked.matrix().col(1).array() == 0.0).all());
  CHECK(std::abs(masked.matrix().row(0).sum() - 1.0) < 1e-12);
  CHECK_THROWS_AS(SoftmaxRows(Tensor::FromMatrix(x), Mask::Constant(4, false)), DomainError);
}

TEST_CASE("mean over axis") {
  const Tensor m = MeanOverAxis(Tensor::FromMatrix(M({{1, 3}, {3, 5}})), 0);
  CHECK(m.shape() == Shape{2});
  CHECK(m.data() == Eigen::Vector2d(2, 4));
  const Tensor one = MeanOverAxis(Tensor::FromMatrix(M({{4, -1, 2}})), 0);
  CHECK(one.data() == Eigen::Vector3d(4, -1, 2));
  CHECK_THROWS_AS(MeanOverAxis(Tensor::FromMatrix(M({{1, 2}})), 2), ShapeError);

  std::mt19937_64 rng(11);
  const Tensor w = Tensor::FromVector(Eigen::Vector3d(0.3, -1.2, 2.0));
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(MeanOverAxis(t, 0), w)); },
                  Tensor::FromMatrix(oracle::RandomMatrix(5, 3, rng), true)) < 1e-6);
  const Tensor w5 = Tensor::FromVector(Eigen::VectorXd::LinSpaced(5, -1, 1));
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(MeanOverAxis(t, 1), w5)); },
                  Tensor::FromMatrix(oracle::RandomMatrix(5, 3, rng), true)) < 1e-6);
}

TEST_CASE("linear") {
  std::mt19937_64 rng(5);
  const RowMatrix x = oracle::RandomMatrix(4, 3, rng);
  const Tensor id = Tensor::FromMatrix(RowMatrix::Identity(3, 3));
  CHECK(Linear(Tensor::FromMatrix(x), id, Tensor::Zeros({3})).matrix() == x);
  const Tensor b = Tensor::FromVector(Eigen::Vector2d(0.5, -2));
  const Tensor z = Linear(Tensor::Zeros({4, 3}), Tensor::FromMatrix(oracle::RandomMatrix(3, 2, rng)), b);
  for (Index r = 0; r < 4; ++r) CHECK(z.matrix().row(r) == b.data().transpose());
  CHECK_THROWS_AS(Linear(Tensor::FromMatrix(x), Tensor::Zeros({2, 2}), Tensor::Zeros({2})), ShapeError);

  const Tensor xt = Tensor::FromMatrix(x, true);
  const Tensor wt = Tensor::FromMatrix(oracle::RandomMatrix(3, 2, rng), true);
  const Tensor bt = Tensor::FromVector(Eigen::Vector2d(0.1, 0.2), true);
  const Tensor mix = Tensor::FromMatrix(oracle::RandomMatrix(4, 2, rng));
  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) { return Sum(Hadamard(Linear(xx, ww, bb), mix)); };
  CHECK(GradCheck([&](const Tensor& t) { return loss(t, wt, bt); }, xt) < 1e-5);
  CHECK(GradCheck([&](const Tensor& t) { return loss(xt, t, bt); }, wt) < 1e-5);
  CHECK(GradCheck([&](const Tensor& t) { return loss(xt, wt, t); }, bt) < 1e-5);
}

TEST_CASE("elementwise") {
  CHECK(Sigmoid(Tensor::Scalar(0.0)).item() == 0.5);
  const Tensor r = Relu(Tensor::FromVector(-Eigen::Vector3d(0.5, 2, 7)));
  CHECK((r.data().array() == 0.0).all());
  CHECK_THROWS_AS(Log(Tensor::FromVector(Eigen::Vector2d(1, 0))), DomainError);
  CHECK_THROWS_AS(Log(Tensor::FromVector(Eigen::Vector2d(1, -3))), DomainError);

  std::mt19937_64 rng(2);
  const Tensor x = Tensor::FromMatrix(oracle::RandomMatrix(3, 3, rng, 2.0), true);
  const Tensor mix = Tensor::FromMatrix(oracle::RandomMatrix(3, 3, rng));
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(Sigmoid(t), mix)); }, x) < 1e-6);
  const Tensor pos = Tensor::FromMatrix(oracle::RandomMatrix(3, 3, rng).array().abs() + 0.5, true);
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(Log(t), mix)); }, pos) < 1e-6);
  // Keep inputs away from the kink.
  RowMatrix away = oracle::RandomMatrix(3, 3, rng);
  away = (away.array().abs() + 0.1) * away.array().sign();
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(Relu(t), mix)); }, Tensor::FromMatrix(away, true)) <
        1e-6);
}

TEST_CASE("backward") {
  const Tensor x = Tensor::FromMatrix(M({{1, 2}, {3, 4}}), true);
  Backward(Sum(x));
  CHECK((x.grad().array() == 1.0).all());

  // x used on two paths: d/dx sum(x + 3x) = 4.
  const Tensor y = Tensor::FromVector(Eigen::Vector3d(1, -2, 0.5), true);
  Backward(Sum(Add(y, Scale(y, 3.0))));
  CHECK((y.grad().array() == 4.0).all());

  // d/dx sum(x ∘ x) = 2x through the shared node.
  const Tensor z = Tensor::FromVector(Eigen::Vector3d(1, -2, 0.5), true);
  Backward(Sum(Hadamard(z, z)));
  CHECK(z.grad() == 2.0 * z.data());

  CHECK_THROWS_AS(Backward(Scale(z, 2.0)), ShapeError);

  const Tensor c = Tensor::FromVector(Eigen::Vector2d(1, 2));
  const Tensor out = Sum(Hadamard(c, Tensor::FromVector(Eigen::Vector2d(3, 4), true)));
  Backward(out);
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("tape order") {
  const Tensor a = Tensor::FromVector(Eigen::Vector2d(1, 2), true);
  const Tensor b = Tensor::FromVector(Eigen::Vector2d(3, 4), true);
  const Tensor s = Add(Hadamard(a, b), Hadamard(a, a));
  const Tensor loss = Sum(s);
  const auto tape = ComputationTape::Record(loss);
  const auto nodes = tape.nodes();
  // Every node appears once and after all of its inputs.
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) CHECK(nodes[i] != nodes[j]);
    for (const auto& in : nodes[i]->inputs) {
      const auto pos = std::find(nodes.begin(), nodes.end(), in.get());
      CHECK(pos < nodes.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
  CHECK(nodes.back() == loss.node_ptr());
}

TEST_CASE("branch order does not change gradients") {
  std::mt19937_64 rng(9);
  const RowMatrix xv = oracle::RandomMatrix(3, 4, rng);
  const RowMatrix w1 = oracle::RandomMatrix(4, 2, rng), w2 = oracle::RandomMatrix(4, 2, rng);
  auto run = [&](bool swap) {
    const Tensor x = Tensor::FromMatrix(xv, true);
    const Tensor p = Sum(Matmul(x, Tensor::FromMatrix(w1)));
    const Tensor q = Sum(Sigmoid(Matmul(x, Tensor::FromMatrix(w2))));
    Backward(swap ? Add(q, p) : Add(p, q));
    return Eigen::VectorXd(x.grad());
  };
  CHECK((run(false) - run(true)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("structural ops") {
  std::mt19937_64 rng(4);
  const RowMatrix x = oracle::RandomMatrix(3, 5, rng);
  const Tensor mix5 = Tensor::FromMatrix(oracle::RandomMatrix(3, 5, rng));
  const Tensor mix2 = Tensor::FromMatrix(oracle::RandomMatrix(3, 2, rng));
  CHECK(SliceCols(Tensor::FromMatrix(x), 1, 2).matrix() == x.middleCols(1, 2));
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(SliceCols(t, 2, 2), mix2)); },
                  Tensor::FromMatrix(x, true)) < 1e-6);
  CHECK(GradCheck(
            [&](const Tensor& t) {
              return Sum(Hadamard(ConcatCols({SliceCols(t, 3, 2), SliceCols(t, 0, 3)}), mix5));
            },
            Tensor::FromMatrix(x, true)) < 1e-6);
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(Transpose(Transpose(t)), mix5)); },
                  Tensor::FromMatrix(x, true)) < 1e-6);
  const Tensor mixrows = Tensor::FromMatrix(oracle::RandomMatrix(2, 5, rng));
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(SelectRows(t, {2, 0}), mixrows)); },
                  Tensor::FromMatrix(x, true)) < 1e-6);
  Mask keep(3);
  keep << true, false, true;
  const Tensor masked = MaskRows(Tensor::FromMatrix(x), keep);
  CHECK((masked.matrix().row(1).array() == 0.0).all());
  CHECK(masked.matrix().row(2) == x.row(2));
  const Tensor st = Stack({Tensor::FromVector(Eigen::Vector2d(1, 2)), Tensor::FromVector(Eigen::Vector2d(3, 4))});
  CHECK(st.matrix() == M({{1, 2}, {3, 4}}));
  CHECK(GradCheck([&](const Tensor& t) { return Sum(Hadamard(t.Reshape({5, 3}), Transpose(mix5))); },
                  Tensor::FromMatrix(x, true)) < 1e-6);
}
