#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

using namespace hpl;

TEST(Mlp, ZeroWeightsReturnBias) {
  ParamStore store;
  Rng rng(1);
  Mlp mlp(store, "m", {3, 4, 2}, Activation::Tanh, Activation::Identity, rng);
  for (auto& e : store.entries()) e.value.setZero();
  store.value(*store.find("m/l1/b")) << 0.25, -1.5;
  const Matrix out = mlp.forward(store, Matrix::Random(5, 3));
  for (Eigen::Index r = 0; r < 5; ++r) {
    EXPECT_DOUBLE_EQ(out(r, 0), 0.25);
    EXPECT_DOUBLE_EQ(out(r, 1), -1.5);
  }
}

TEST(Mlp, ReluFinalClampsNegative) {
  ParamStore store;
  Rng rng(1);
  Mlp mlp(store, "m", {1, 1}, Activation::Tanh, Activation::Relu, rng);
  store.value(*store.find("m/l0/w"))(0, 0) = 1.0;
  store.value(*store.find("m/l0/b"))(0, 0) = 0.0;
  Matrix x(1, 1);
  x << -3.2;
  EXPECT_EQ(mlp.forward(store, x)(0, 0), 0.0);
}

TEST(Mlp, SingleLinearLayerMatchesHandProduct) {
  ParamStore store;
  Rng rng(1);
  Mlp mlp(store, "m", {2, 2}, Activation::Tanh, Activation::Identity, rng);
  // Row-vector convention: out = x W + b, so W here is the transpose of the
  // column-convention matrix [[1, 2], [3, 4]].
  store.value(*store.find("m/l0/w")) << 1, 3, 2, 4;
  Matrix x(1, 2);
  x << 5, 6;
  const Matrix out = mlp_forward(store, mlp, x);
  EXPECT_DOUBLE_EQ(out(0, 0), 1 * 5 + 2 * 6);
  EXPECT_DOUBLE_EQ(out(0, 1), 3 * 5 + 4 * 6);
}

TEST(Mlp, ShapeMismatch) {
  ParamStore store;
  Rng rng(1);
  Mlp mlp(store, "m", {3, 2}, Activation::Tanh, Activation::Identity, rng);
  try {
    mlp.forward(store, Matrix::Zero(1, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Mlp, GradCheck) {
  for (Activation act : {Activation::Tanh, Activation::Identity}) {
    ParamStore store;
    Rng rng(3);
    Mlp mlp(store, "m", {4, 6, 5, 3}, act, Activation::Identity, rng);
    const Matrix x = Matrix::Random(7, 4);
    const Matrix target = Matrix::Random(7, 3);
    auto loss = [&](ParamStore& s, bool with_grad) {
      Mlp::Cache cache;
      const Matrix out = mlp.forward(s, x, with_grad ? &cache : nullptr);
      const Matrix diff = out - target;
      if (with_grad) mlp.backward(s, cache, diff);
      return 0.5 * diff.squaredNorm();
    };
    const auto report = grad_check(loss, store, 1e-6);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
  }
}

namespace {

struct EncoderFixture {
  ParamStore store;
  AnticausalEncoder encoder;
  explicit EncoderFixture(int layers = 1, std::uint64_t seed = 5) {
    Rng rng(seed);
    encoder = AnticausalEncoder(store, "enc",
                                {.input_dim = 5, .embed_dim = 6, .num_layers = layers,
                                 .ffn_dim = 7, .max_len = 8},
                                rng);
  }
};

}  // namespace

TEST(AnticausalEncoder, PastPerturbationDoesNotChangeLaterOutputs) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    EncoderFixture fx(1 + trial % 2, 100 + trial);
    const int len = 2 + static_cast<int>(rng.index(7));
    Matrix tokens = Matrix::Random(len, 5);
    const Matrix base = anticausal_encode(fx.store, fx.encoder, tokens, -1);
    const int t = 1 + static_cast<int>(rng.index(len - 1));
    tokens.row(t - 1) += RowVector::Random(5);
    const Matrix moved = anticausal_encode(fx.store, fx.encoder, tokens, -1);
    for (int p = t; p < len; ++p) EXPECT_TRUE(moved.row(p) == base.row(p)) << "pos " << p;
    EXPECT_FALSE(moved.row(t - 1) == base.row(t - 1));
  }
}

TEST(AnticausalEncoder, SingleTokenAttendsToItself) {
  EncoderFixture fx;
  const Matrix token = Matrix::Random(1, 5);
  AnticausalEncoder::Cache cache;
  const int len = 1;
  fx.encoder.forward(fx.store, token, std::span<const int>(&len, 1), -1, &cache);
  EXPECT_DOUBLE_EQ(cache.attn[0][0](0, 0), 1.0);
  EXPECT_TRUE(cache.ctx[0].row(0).isApprox(cache.v[0].row(0)));
}

TEST(AnticausalEncoder, WindowLimitsFutureDependence) {
  EncoderFixture fx;
  Matrix tokens = Matrix::Random(6, 5);
  const Matrix base = anticausal_encode(fx.store, fx.encoder, tokens, 1);
  tokens.row(3) += RowVector::Ones(5);
  const Matrix moved = anticausal_encode(fx.store, fx.encoder, tokens, 1);
  // Position 1 sees positions 1..2 only.
  EXPECT_TRUE(moved.row(1) == base.row(1));
  EXPECT_TRUE(moved.row(0) == base.row(0));
  EXPECT_FALSE(moved.row(2) == base.row(2));
}

TEST(AnticausalEncoder, EmptySequence) {
  EncoderFixture fx;
  try {
    anticausal_encode(fx.store, fx.encoder, Matrix(0, 5), -1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
}

TEST(AnticausalEncoder, GradCheckBatchedSequences) {
  for (int layers : {1, 2}) {
    EncoderFixture fx(layers, 17);
    const std::vector<int> lengths = {3, 1, 4};
    const Matrix tokens = Matrix::Random(8, 5);
    const Matrix weights = Matrix::Random(8, 6);
    for (int window : {-1, 1}) {
      auto loss = [&](ParamStore& s, bool with_grad) {
        AnticausalEncoder::Cache cache;
        const Matrix out = fx.encoder.forward(s, tokens, lengths, window, with_grad ? &cache : nullptr);
        const Matrix act = out.array().tanh().matrix();
        if (with_grad)
          fx.encoder.backward(s, cache, (weights.array() * (1.0 - act.array().square())).matrix());
        return (weights.array() * act.array()).sum();
      };
      const auto report = grad_check(loss, fx.store, 1e-6);
      EXPECT_TRUE(report.passed) << "layers=" << layers << " window=" << window << " err="
                                 << report.max_rel_error;
    }
  }
}

TEST(Categorical, KlValues) {
  const std::vector<double> q = {0.5, 0.5}, f = {0.25, 0.75};
  // Direct evaluation of the KL formula.
  EXPECT_NEAR(categorical_kl(q, f), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(categorical_kl(q, f), 0.14384, 1e-5);
  EXPECT_EQ(categorical_kl(q, q), 0.0);
  const std::vector<double> sparse = {1.0, 0.0};
  EXPECT_NEAR(categorical_kl(sparse, f), std::log(4.0), 1e-12);
}

TEST(Categorical, KlNonNegative) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    RowVector a(5), b(5);
    for (int k = 0; k < 5; ++k) {
      a[k] = 3.0 * rng.normal();
      b[k] = 3.0 * rng.normal();
    }
    const CategoricalDist q(a), f(b);
    EXPECT_GE(categorical_kl(q, f), -1e-12);
    const RowVector pq = q.probs(), pf = f.probs();
    EXPECT_NEAR(categorical_kl(q, f),
                categorical_kl(std::span<const double>(pq.data(), 5), std::span<const double>(pf.data(), 5)),
                1e-9);
  }
}

TEST(Categorical, SoftmaxStable) {
  RowVector logits(4);
  logits << 1e4, -1e4, 0.0, 9999.0;
  const RowVector p = softmax(logits);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-7);
  EXPECT_TRUE(log_softmax(logits).allFinite());
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    RowVector l(16);
    for (int k = 0; k < 16; ++k) l[k] = 50.0 * rng.normal();
    EXPECT_NEAR(softmax(l).sum(), 1.0, 1e-7);
  }
}

TEST(Categorical, SamplingAndMode) {
  RowVector logits(3);
  logits << 0.0, std::log(3.0), 0.0;
  const CategoricalDist d(logits);
  EXPECT_EQ(d.mode(), 1);
  EXPECT_NEAR(d.probs()[1], 0.6, 1e-12);
  Rng a(1), b(1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(d.sample(a), d.sample(b));
}

TEST(Adam, ZeroGradientLeavesParams) {
  ParamStore store;
  const ParamId id = store.add("p", 2, 2);
  store.value(id) << 1, 2, 3, 4;
  const Matrix before = store.value(id);
  adam_step(store, {}, 1);
  EXPECT_TRUE(store.value(id) == before);
}

TEST(Adam, FirstStepMagnitude) {
  ParamStore store;
  const ParamId id = store.add("p", 1, 1);
  store.value(id)(0, 0) = 1.0;
  store.grad(id)(0, 0) = 2.0;
  adam_step(store, {.learning_rate = 0.1}, 1);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(store.value(id)(0, 0), 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_NEAR(store.value(id)(0, 0), 0.9, 1e-6);
}

TEST(Adam, Deterministic) {
  ParamStore a, b;
  Rng ra(3), rb(3);
  a.add_uniform("w", 3, 3, 3, ra);
  b.add_uniform("w", 3, 3, 3, rb);
  for (long t = 1; t <= 5; ++t) {
    const Matrix g = Matrix::Constant(3, 3, 0.1 * t);
    a.grad(ParamId{0}) = g;
    b.grad(ParamId{0}) = g;
    adam_step(a, {}, t);
    adam_step(b, {}, t);
  }
  EXPECT_TRUE(a.value(ParamId{0}) == b.value(ParamId{0}));
}

TEST(Adam, NonFiniteGradient) {
  ParamStore store;
  const ParamId id = store.add("p", 1, 1);
  store.grad(id)(0, 0) = std::nan("");
  try {
    adam_step(store, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  EXPECT_EQ(store.value(id)(0, 0), 0.0);
}

TEST(GradCheck, Quadratic) {
  ParamStore store;
  const ParamId id = store.add("p", 3, 2);
  store.value(id) << 0.5, -1, 2, 3, -0.25, 7;
  auto loss = [id](ParamStore& s, bool with_grad) {
    if (with_grad) s.grad(id) += 2.0 * s.value(id);
    return s.value(id).squaredNorm();
  };
  const auto report = grad_check(loss, store, 1e-6);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamStore store;
  const ParamId id = store.add("p", 2, 1);
  store.value(id) << 1, 2;
  auto loss = [id](ParamStore& s, bool with_grad) {
    if (with_grad) s.grad(id) += 3.0 * s.value(id);
    return s.value(id).squaredNorm();
  };
  EXPECT_FALSE(grad_check(loss, store, 1e-4).passed);
}

TEST(Checkpoint, RoundTripFloat32) {
  ParamStore store;
  Rng rng(8);
  Mlp mlp(store, "net", {3, 4, 1}, Activation::Tanh, Activation::Identity, rng);
  store.round_to_float();
  const auto dir = std::filesystem::temp_directory_path() / "hpl_test_ckpt";
  std::filesystem::remove_all(dir);
  const ParamStore* out[] = {&store};
  save_checkpoint(dir, out, {{"sizes", mlp.sizes()}}, 99);

  ParamStore loaded;
  Rng other(1);
  Mlp mlp2(loaded, "net", {3, 4, 1}, Activation::Tanh, Activation::Identity, other);
  ParamStore* in[] = {&loaded};
  const auto manifest = load_checkpoint(dir, in);
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 99u);
  for (std::size_t i = 0; i < store.size(); ++i)
    EXPECT_TRUE(store.entries()[i].value == loaded.entries()[i].value);
  EXPECT_EQ(std::filesystem::file_size(dir / "net.l0.w.bin"), 3u * 4u * 4u);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  ParamStore store;
  store.add("a", 2, 2);
  const auto dir = std::filesystem::temp_directory_path() / "hpl_test_ckpt_bad";
  std::filesystem::remove_all(dir);
  const ParamStore* out[] = {&store};
  save_checkpoint(dir, out, {}, 0);
  ParamStore other;
  other.add("a", 3, 2);
  ParamStore* in[] = {&other};
  EXPECT_THROW(load_checkpoint(dir, in), Error);
}

TEST(Helpers, LogSigmoidStable) {
  EXPECT_NEAR(log_sigmoid(1000.0), 0.0, 1e-12);
  EXPECT_NEAR(log_sigmoid(-1000.0), -1000.0, 1e-9);
  EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
  EXPECT_TRUE(std::isfinite(softplus(1e4)));
}
