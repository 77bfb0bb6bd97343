#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <thread>

#include "gradcheck.hpp"
#include "vtlab/checkpoint.hpp"
#include "vtlab/vlm.hpp"

using namespace vtlab;

namespace {

VlmConfig small_config() {
  VlmConfig c;
  c.image_h = c.image_w = 16;
  c.embed_dim = 16;
  c.visual_tokens = 4;
  c.max_tokens = 16;
  c.conv1_channels = 4;
  c.conv2_channels = 6;
  c.layers = 2;
  c.ff_dim = 32;
  c.max_seq = 64;
  return c;
}

Image random_image(Rng& rng, const VlmConfig& c) {
  Image img(c.image_h, c.image_w, c.image_c);
  for (auto& v : img.pix) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("encode_image is deterministic, finite, and locally linear") {
  ToyVlmModel m(small_config(), 7);
  Image zeros(16, 16, 3);
  Matrix f1 = m.encode_image(zeros);
  Matrix f2 = m.encode_image(zeros);
  REQUIRE(f1.all_finite());
  REQUIRE(std::equal(f1.data(), f1.data() + f1.size(), f2.data()));

  Rng rng(3);
  Image img = random_image(rng, m.config());
  Matrix base = m.encode_image(img);
  Image nudged = img;
  const double delta = 1e-6;
  nudged.at(5, 5, 1) = std::min(1.0, nudged.at(5, 5, 1) + delta);
  Matrix shifted = m.encode_image(nudged);
  double max_diff = 0.0;
  for (size_t i = 0; i < base.size(); ++i)
    max_diff = std::max(max_diff, std::fabs(base.data()[i] - shifted.data()[i]));
  REQUIRE(max_diff > 0.0);
  REQUIRE(max_diff < 1e-4);  // O(delta) response through the smooth encoder

  Image wrong(8, 8, 3);
  REQUIRE_THROWS_AS(m.encode_image(wrong), DimensionError);
}

TEST_CASE("project yields exactly m embeddings and matches a scalar-loop oracle") {
  ToyVlmModel m(small_config(), 11);
  Rng rng(5);
  Matrix f = Matrix::randn(rng, 1, m.config().feature_dim(), 1.0);
  Matrix e = m.project(f);
  REQUIRE(e.rows() == m.config().visual_tokens);
  REQUIRE(e.cols() == m.config().embed_dim);

  // independent recomputation
  for (int i = 0; i < e.rows(); ++i)
    for (int j = 0; j < e.cols(); ++j) {
      const int rowidx = i * m.config().embed_dim + j;
      double s = m.proj_b.value(rowidx, 0);
      for (int k = 0; k < m.config().feature_dim(); ++k)
        s += m.proj_w.value(rowidx, k) * f(0, k);
      REQUIRE(e(i, j) == Catch::Approx(s).margin(1e-12));
    }

  // zero features with the (zero-initialized) projector bias -> zero output
  Matrix zf(1, m.config().feature_dim());
  Matrix ze = m.project(zf);
  for (size_t i = 0; i < ze.size(); ++i) REQUIRE(ze.data()[i] == 0.0);

  REQUIRE_THROWS_AS(m.project(Matrix(1, 3)), DimensionError);
}

TEST_CASE("embed_tokens is a deterministic table lookup") {
  ToyVlmModel m(small_config(), 13);
  REQUIRE(m.embed_tokens({}).rows() == 0);
  Matrix two = m.embed_tokens({9, 9});
  REQUIRE(two.rows() == 2);
  for (int j = 0; j < two.cols(); ++j) REQUIRE(two(0, j) == two(1, j));

  std::vector<int> all(m.config().vocab);
  for (int i = 0; i < m.config().vocab; ++i) all[i] = i;
  Matrix sweep = m.embed_tokens(all);
  for (int i = 0; i < m.config().vocab; ++i)
    for (int j = 0; j < sweep.cols(); ++j) REQUIRE(sweep(i, j) == m.embed.value(i, j));

  REQUIRE_THROWS_AS(m.embed_tokens({64}), VocabError);
  REQUIRE_THROWS_AS(m.embed_tokens({-1}), VocabError);
}

TEST_CASE("generate: forced EOS, cap binding, determinism, bounds") {
  VlmConfig c = small_config();

  SECTION("engineered immediate EOS gives a single-token sequence") {
    ToyVlmModel m(c, 17);
    m.head_w.value.set_zero();
    m.head_b.value.set_zero();
    m.head_b.value(0, m.eos_id()) = 10.0;
    Rng rng(1);
    Matrix prefix = Matrix::randn(rng, 3, c.embed_dim, 1.0);
    auto out = m.generate(prefix);
    REQUIRE(out == std::vector<int>{m.eos_id()});
  }

  SECTION("a decoder that never emits EOS stops exactly at the cap") {
    ToyVlmModel m(c, 18);
    m.head_w.value.set_zero();
    m.head_b.value.set_zero();
    m.head_b.value(0, 5) = 10.0;
    Rng rng(2);
    Matrix prefix = Matrix::randn(rng, 2, c.embed_dim, 1.0);
    GenerationConfig gen;
    gen.max_tokens = c.max_tokens;
    auto out = m.generate(prefix, gen);
    REQUIRE(static_cast<int>(out.size()) == c.max_tokens);
    for (int id : out) REQUIRE(id != m.eos_id());
  }

  SECTION("identical output across repeated runs") {
    ToyVlmModel m(c, 19);
    Rng rng(3);
    Matrix prefix = Matrix::randn(rng, 4, c.embed_dim, 1.0);
    auto first = m.generate(prefix);
    for (int t = 0; t < 10; ++t) REQUIRE(m.generate(prefix) == first);
  }

  SECTION("length bounds and EOS finality over random models") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
      ToyVlmModel m(c, 100 + seed);
      Rng rng(seed);
      Matrix prefix = Matrix::randn(rng, 1 + static_cast<int>(seed % 4), c.embed_dim, 1.2);
      auto out = m.generate(prefix);
      REQUIRE(out.size() >= 1);
      REQUIRE(static_cast<int>(out.size()) <= c.max_tokens);
      for (size_t i = 0; i + 1 < out.size(); ++i) REQUIRE(out[i] != m.eos_id());
    }
  }

  SECTION("empty prefix is a precondition error") {
    ToyVlmModel m(c, 20);
    REQUIRE_THROWS_AS(m.generate(Matrix(0, c.embed_dim)), PreconditionError);
  }
}

TEST_CASE("forward_compose equals the explicit four-stage pipeline") {
  VlmConfig c = small_config();
  ToyVlmModel m(c, 23);
  Rng rng(9);
  Image img = random_image(rng, c);
  const std::string prompt = "what is here";

  auto composed = m.forward_compose(img, prompt);
  Matrix manual_prefix = concat_rows_mat(m.project(m.encode_image(img)),
                                         m.embed_tokens(m.tokenize(prompt)));
  auto manual = m.generate(manual_prefix);
  REQUIRE(composed == manual);
  REQUIRE(m.forward_compose(img, prompt) == composed);  // bit-identical rerun
}

TEST_CASE("stepwise decoder with KV cache matches the full-sequence graph") {
  VlmConfig c = small_config();
  ToyVlmModel m(c, 29);
  Rng rng(31);
  const int L = 12;
  Matrix seq = Matrix::randn(rng, L, c.embed_dim, 0.9);

  Graph g;
  auto bound = m.bind_frozen(g);
  Var logits = bound.decode_logits(g.input(seq));

  auto session = m.start_session();
  for (int r = 0; r < L; ++r) {
    session.feed(seq.row(r));
    const auto& step_logits = session.logits();
    for (int j = 0; j < c.vocab; ++j)
      REQUIRE(step_logits[j] == Catch::Approx(logits.val()(r, j)).margin(1e-9));
  }
}

TEST_CASE("graph visual path matches encode_image + project") {
  VlmConfig c = small_config();
  ToyVlmModel m(c, 37);
  Rng rng(41);
  Image img = random_image(rng, c);
  Matrix fast = m.project(m.encode_image(img));

  Graph g;
  auto bound = m.bind_frozen(g);
  Var vis = bound.visual(g.input(img.to_planar()));
  REQUIRE(vis.val().rows() == fast.rows());
  for (int i = 0; i < fast.rows(); ++i)
    for (int j = 0; j < fast.cols(); ++j)
      REQUIRE(vis.val()(i, j) == Catch::Approx(fast(i, j)).margin(1e-10));
}

TEST_CASE("pixel gradients through encoder and projector match finite differences") {
  VlmConfig c = small_config();
  ToyVlmModel m(c, 43);
  Rng rng(47);
  Image img = random_image(rng, c);
  Matrix probe = Matrix::randn(rng, c.visual_tokens, c.embed_dim, 1.0);

  Graph g;
  auto bound = m.bind_frozen(g);
  Var in = g.input(img.to_planar());
  Var vis = bound.visual(in);
  Var loss = g.mean_all(g.mul(vis, g.input(probe)));
  g.backward(loss);

  Rng coords(53);
  auto res = vtlab_test::gradcheck(
      [&](const Matrix& planar) {
        Graph g2;
        auto b2 = m.bind_frozen(g2);
        Var l2 = g2.mean_all(g2.mul(b2.visual(g2.input(planar)), g2.input(probe)));
        return l2.val()(0, 0);
      },
      img.to_planar(), in.grad(), 20, coords, 1e-4);
  REQUIRE(res.max_rel_err <= 1e-4);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  VlmConfig c = small_config();
  ToyVlmModel m(c, 59);
  auto path = std::filesystem::temp_directory_path() / "vtlab_test_ckpt.tvlm";
  save_checkpoint(m, path.string());
  ToyVlmModel loaded = load_checkpoint(path.string());
  REQUIRE(loaded.checksum() == m.checksum());

  // features equal across two reloads of the same file
  Rng rng(61);
  Image img = random_image(rng, c);
  Matrix f1 = load_checkpoint(path.string()).encode_image(img);
  Matrix f2 = loaded.encode_image(img);
  REQUIRE(std::equal(f1.data(), f1.data() + f1.size(), f2.data()));

  std::filesystem::remove(path);
  REQUIRE_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("two models from the same seed share checksums; different seeds differ") {
  VlmConfig c = small_config();
  REQUIRE(ToyVlmModel(c, 5).checksum() == ToyVlmModel(c, 5).checksum());
  REQUIRE(ToyVlmModel(c, 5).checksum() != ToyVlmModel(c, 6).checksum());
}

TEST_CASE("concurrent read-only generation matches sequential output") {
  VlmConfig c = small_config();
  ToyVlmModel m(c, 67);
  Rng rng(71);
  Matrix p1 = Matrix::randn(rng, 3, c.embed_dim, 1.0);
  Matrix p2 = Matrix::randn(rng, 5, c.embed_dim, 1.0);
  auto s1 = m.generate(p1);
  auto s2 = m.generate(p2);
  std::vector<int> t1, t2;
  std::thread a([&] { t1 = m.generate(p1); });
  std::thread b([&] { t2 = m.generate(p2); });
  a.join();
  b.join();
  REQUIRE(t1 == s1);
  REQUIRE(t2 == s2);
}
