#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "vtlab/graph.hpp"
#include "vtlab/image.hpp"
#include "vtlab/matrix.hpp"
#include "vtlab/optim.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/tokenizer.hpp"

using namespace vtlab;
using vtlab_test::gradcheck;

TEST_CASE("rng streams are reproducible and seed derivation separates stages") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());
  REQUIRE(derive_seed(0, "train") != derive_seed(0, "search"));
  REQUIRE(derive_seed(0, "train") == derive_seed(0, "train"));
  REQUIRE(derive_seed(1, "train") != derive_seed(0, "train"));
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    int k = c.below(13);
    REQUIRE(k >= 0);
    REQUIRE(k < 13);
  }
}

TEST_CASE("matmul matches a naive triple loop") {
  Rng rng(1);
  Matrix a = Matrix::randn(rng, 7, 5, 1.0);
  Matrix b = Matrix::randn(rng, 5, 9, 1.0);
  Matrix c = matmul(a, b);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 9; ++j) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      REQUIRE(c(i, j) == Catch::Approx(s).margin(1e-12));
    }
  REQUIRE_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("tokenizer round trip and errors") {
  Tokenizer tok;
  REQUIRE(tok.tokenize("").empty());
  auto ab = tok.tokenize("ab");
  REQUIRE(ab.size() == 2);
  REQUIRE(ab[0] == tok.id_of('a'));
  REQUIRE(ab[1] == tok.id_of('b'));

  // round trip of seeded random strings over the charset
  std::string charset = tok.charset();
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::string s;
    for (int i = 0; i < 20; ++i) s.push_back(charset[rng.below(static_cast<int>(charset.size()))]);
    REQUIRE(tok.detokenize(tok.tokenize(s)) == s);
  }

  try {
    tok.tokenize("a%b");
    FAIL("expected VocabError");
  } catch (const VocabError& e) {
    REQUIRE(std::string(e.what()).find('%') != std::string::npos);
  }
  REQUIRE_THROWS_AS(tok.detokenize({0, 5}), VocabError);      // EOS not final
  REQUIRE_THROWS_AS(tok.detokenize({64}), VocabError);        // out of range
  REQUIRE(tok.detokenize({tok.id_of('h'), tok.id_of('i'), 0}) == "hi");
}

namespace {

// Builds a scalar from a matrix through `build`, returning value and the
// gradient w.r.t. the input leaf.
template <class Build>
std::pair<double, Matrix> value_and_grad(const Matrix& x, Build build) {
  Graph g;
  Var in = g.input(x);
  Var root = build(g, in);
  g.backward(root);
  return {root.val()(0, 0), in.grad()};
}

template <class Build>
void check_op_gradient(const Matrix& x, Build build, double tol = 1e-6) {
  auto [val, grad] = value_and_grad(x, build);
  (void)val;
  Rng rng(99);
  auto res = gradcheck([&](const Matrix& m) { return value_and_grad(m, build).first; }, x, grad,
                       static_cast<int>(x.size()), rng);
  INFO("worst index " << res.worst_index);
  REQUIRE(res.max_rel_err < tol);
}

}  // namespace

TEST_CASE("autodiff gradients match central finite differences per op") {
  Rng rng(11);
  Matrix x = Matrix::randn(rng, 4, 6, 0.8);

  SECTION("add/sub/mul/scale chain") {
    Matrix y = Matrix::randn(rng, 4, 6, 0.5);
    check_op_gradient(x, [&](Graph& g, Var in) {
      Var other = g.input(y);
      Var s = g.mul(g.add(in, other), g.sub(in, other));
      return g.mean_all(g.scale(s, 1.7));
    });
  }
  SECTION("matmul and transpose") {
    Matrix w = Matrix::randn(rng, 6, 3, 0.7);
    check_op_gradient(x, [&](Graph& g, Var in) {
      Var out = g.matmul_(in, g.input(w));
      return g.mean_all(g.mul(out, g.transpose_(g.transpose_(out))));
    });
  }
  SECTION("tanh and exp") {
    check_op_gradient(x, [&](Graph& g, Var in) { return g.mean_all(g.exp_(g.tanh_(in))); });
  }
  SECTION("softmax rows") {
    Matrix w = Matrix::randn(rng, 4, 6, 1.0);
    check_op_gradient(x, [&](Graph& g, Var in) {
      Var sm = g.softmax_rows(in);
      return g.mean_all(g.mul(sm, g.input(w)));
    });
  }
  SECTION("log softmax + pick per row") {
    check_op_gradient(x, [&](Graph& g, Var in) {
      Var ls = g.log_softmax_rows(in);
      return g.mean_all(g.pick_per_row(ls, {1, 0, 5, 2}));
    });
  }
  SECTION("cross entropy mean") {
    check_op_gradient(x, [&](Graph& g, Var in) { return g.cross_entropy_mean(in, {3, 1, 0, 4}); });
  }
  SECTION("layer norm") {
    Matrix gain = Matrix::randn(rng, 1, 6, 0.3);
    Matrix bias = Matrix::randn(rng, 1, 6, 0.3);
    for (int j = 0; j < 6; ++j) gain(0, j) += 1.0;
    check_op_gradient(x, [&](Graph& g, Var in) {
      return g.mean_all(g.tanh_(g.layernorm_rows(in, g.input(gain), g.input(bias))));
    }, 2e-6);
  }
  SECTION("layer norm gain/bias gradients") {
    Matrix gain(1, 6, 1.0), bias(1, 6, 0.0);
    auto build = [&](Graph& g, Var gv) {
      Var xin = g.input(x);
      return g.mean_all(g.tanh_(g.layernorm_rows(xin, gv, g.input(bias))));
    };
    check_op_gradient(gain, build);
  }
  SECTION("concat and slice rows") {
    Matrix y = Matrix::randn(rng, 3, 6, 0.5);
    check_op_gradient(x, [&](Graph& g, Var in) {
      Var cat = g.concat_rows(in, g.input(y));
      return g.mean_all(g.mul(g.slice_rows(cat, 1, 4), g.slice_rows(cat, 2, 4)));
    });
  }
  SECTION("gather rows accumulates over repeats") {
    Matrix table = Matrix::randn(rng, 5, 6, 0.5);
    check_op_gradient(table, [&](Graph& g, Var tv) {
      Var got = g.gather_rows(tv, {0, 2, 2, 4});
      return g.mean_all(g.mul(got, got));
    });
  }
  SECTION("cosine rows") {
    Matrix y = Matrix::randn(rng, 4, 6, 0.9);
    check_op_gradient(x, [&](Graph& g, Var in) {
      return g.mean_all(g.cosine_rows(in, g.input(y)));
    });
  }
  SECTION("std pop all") {
    check_op_gradient(x, [&](Graph& g, Var in) { return g.std_pop_all(in); });
  }
  SECTION("add_rowvec broadcast") {
    Matrix v = Matrix::randn(rng, 1, 6, 0.5);
    check_op_gradient(x, [&](Graph& g, Var in) {
      return g.mean_all(g.tanh_(g.add_rowvec(in, g.input(v))));
    });
    check_op_gradient(v, [&](Graph& g, Var vv) {
      return g.mean_all(g.tanh_(g.add_rowvec(g.input(x), vv)));
    });
  }
  SECTION("clip surrogate gradient away from kinks") {
    Matrix r(3, 1);
    r(0, 0) = 0.5;
    r(1, 0) = 1.05;
    r(2, 0) = 1.9;
    for (double adv : {0.7, -0.7}) {
      check_op_gradient(r, [&](Graph& g, Var in) {
        return g.mean_all(g.clip_surrogate(in, adv, 0.3));
      });
    }
  }
}

TEST_CASE("conv2d forward matches direct convolution and gradients check out") {
  Rng rng(21);
  const int h = 6, w = 5, in_c = 2, out_c = 3, k = 3, stride = 2, pad = 1;
  Matrix x = Matrix::randu(rng, in_c, h * w, 0.0, 1.0);
  Matrix wt = Matrix::randn(rng, out_c, in_c * k * k, 0.4);
  Matrix b = Matrix::randn(rng, out_c, 1, 0.2);

  Graph g;
  Var xv = g.input(x), wv = g.input(wt), bv = g.input(b);
  Var out = g.conv2d(xv, wv, bv, h, w, k, stride, pad);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  REQUIRE(out.val().rows() == out_c);
  REQUIRE(out.val().cols() == oh * ow);
  // direct recomputation at every output location
  for (int oc = 0; oc < out_c; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b(oc, 0);
        for (int ic = 0; ic < in_c; ++ic)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += wt(oc, (ic * k + ky) * k + kx) * x(ic, iy * w + ix);
            }
        REQUIRE(out.val()(oc, oy * ow + ox) == Catch::Approx(acc).margin(1e-12));
      }

  auto build_x = [&](Graph& gg, Var in) {
    Var o = gg.conv2d(in, gg.input(wt), gg.input(b), h, w, k, stride, pad);
    return gg.mean_all(gg.tanh_(o));
  };
  vtlab_test::gradcheck(
      [&](const Matrix&) { return 0.0; }, x, x, 0, rng);  // silence unused warnings path
  {
    Graph gg;
    Var in = gg.input(x);
    Var root = build_x(gg, in);
    gg.backward(root);
    Rng r2(5);
    auto res = gradcheck(
        [&](const Matrix& m) {
          Graph g3;
          Var i3 = g3.input(m);
          Var r3 = build_x(g3, i3);
          return r3.val()(0, 0);
        },
        x, in.grad(), 40, r2);
    REQUIRE(res.max_rel_err < 1e-6);
  }
  {
    Graph gg;
    Var in = gg.input(wt);
    Var xin = gg.input(x);
    Var root = gg.mean_all(gg.tanh_(gg.conv2d(xin, in, gg.input(b), h, w, k, stride, pad)));
    gg.backward(root);
    Rng r2(6);
    auto res = gradcheck(
        [&](const Matrix& m) {
          Graph g3;
          Var r3 = g3.mean_all(
              g3.tanh_(g3.conv2d(g3.input(x), g3.input(m), g3.input(b), h, w, k, stride, pad)));
          return r3.val()(0, 0);
        },
        wt, in.grad(), 40, r2);
    REQUIRE(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("clip surrogate equals its closed form everywhere") {
  // invariant: surrogate = min(r*A, clamp(r, 1-c, 1+c)*A) exactly
  Rng rng(33);
  const double c = 0.3;
  for (int t = 0; t < 2000; ++t) {
    double r = rng.uniform(-0.5, 3.0);
    double A = rng.uniform(-2.0, 2.0);
    Graph g;
    Matrix rm(1, 1);
    rm(0, 0) = r;
    Var out = g.clip_surrogate(g.input(rm), A, c);
    double clamped = std::min(std::max(r, 1.0 - c), 1.0 + c);
    REQUIRE(out.val()(0, 0) == std::min(r * A, clamped * A));
  }
}

TEST_CASE("param leaves accumulate gradients and Adam steps deterministically") {
  Param p("w", Matrix(2, 2, 1.0));
  p.zero_grad();
  {
    Graph g;
    Var w = g.param(p);
    Var loss = g.mean_all(g.mul(w, w));
    g.backward(loss);
  }
  // d/dw mean(w^2) = 2w/4 = 0.5 at w=1
  for (int i = 0; i < 4; ++i) REQUIRE(p.grad.data()[i] == Catch::Approx(0.5).margin(1e-12));

  Param q("q", Matrix(2, 2, 1.0));
  q.zero_grad();
  Adam opt({&q}, 0.1);
  {
    Graph g;
    Var w = g.param(q);
    g.backward(g.mean_all(g.mul(w, w)));
  }
  opt.step();
  REQUIRE(q.value(0, 0) < 1.0);
  // zero gradient on a fresh optimizer leaves parameters untouched
  Param z("z", Matrix(2, 2, 3.0));
  z.zero_grad();
  Adam opt2({&z}, 0.1);
  opt2.step();
  for (int i = 0; i < 4; ++i) REQUIRE(z.value.data()[i] == 3.0);
}

TEST_CASE("stop_grad blocks backward flow") {
  Matrix x(1, 3, 2.0);
  Graph g;
  Var in = g.input(x);
  Var detached = g.stop_grad(in);
  Var root = g.mean_all(g.mul(detached, detached));
  g.backward(root);
  REQUIRE(in.grad().empty());
}

TEST_CASE("image planar round trip and validation") {
  Rng rng(2);
  Image img(4, 3, 3);
  for (auto& v : img.pix) v = rng.uniform();
  Matrix planar = img.to_planar();
  Image back = Image::from_planar(planar, 4, 3);
  REQUIRE(back.pix == img.pix);
  img.validate();
  Image bad = img;
  bad.pix[5] = 1.5;
  REQUIRE_THROWS_AS(bad.validate(), PreconditionError);
}
