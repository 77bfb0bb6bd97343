#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vtlab/errors.hpp"
#include "vtlab/graph.hpp"
#include "vtlab/image.hpp"
#include "vtlab/matrix.hpp"
#include "vtlab/optim.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/tokenizer.hpp"

namespace vtlab {

struct GenerationConfig {
  int max_tokens = 128;  // decoding is always greedy
};

// Architecture of the toy victim: a two-stage strided conv encoder, a linear
// projector onto `visual_tokens` embeddings, a token embedding table, and a
// small pre-norm causal-attention decoder with a layer norm applied to every
// incoming embedding (which makes the decoder exactly invariant to positive
// rescaling of its input vectors).
struct VlmConfig {
  int image_h = 32, image_w = 32, image_c = 3;
  int embed_dim = 64;
  int vocab = Tokenizer::kVocabSize;
  int visual_tokens = 16;  // m
  int max_tokens = 128;
  int conv1_channels = 8;
  int conv2_channels = 24;
  // Wide receptive fields give pixel perturbations strong coordinated
  // leverage on the features while uncorrelated noise largely averages out.
  int conv1_kernel = 7;
  int conv2_kernel = 5;
  int layers = 2;
  int ff_dim = 128;
  int max_seq = 192;
  double ln_eps = 1e-5;

  static constexpr int kStride = 2;

  int conv1_pad() const { return conv1_kernel / 2; }
  int conv2_pad() const { return conv2_kernel / 2; }
  int conv1_h() const { return (image_h + 2 * conv1_pad() - conv1_kernel) / kStride + 1; }
  int conv1_w() const { return (image_w + 2 * conv1_pad() - conv1_kernel) / kStride + 1; }
  int conv2_h() const { return (conv1_h() + 2 * conv2_pad() - conv2_kernel) / kStride + 1; }
  int conv2_w() const { return (conv1_w() + 2 * conv2_pad() - conv2_kernel) / kStride + 1; }
  int feature_dim() const { return conv2_channels * conv2_h() * conv2_w(); }

  void validate() const {
    if (image_h < 4 || image_w < 4 || image_c < 1) throw ConfigError("image dims too small");
    if (embed_dim < 2 || visual_tokens < 1 || layers < 1 || ff_dim < 1)
      throw ConfigError("model dims must be positive");
    if (vocab != Tokenizer::kVocabSize)
      throw ConfigError("vocab is fixed by the character tokenizer");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (max_seq < visual_tokens + max_tokens)
      throw ConfigError("max_seq too small for visual prefix + generation cap");
    if (conv1_kernel < 1 || conv2_kernel < 1 || conv1_kernel % 2 == 0 || conv2_kernel % 2 == 0)
      throw ConfigError("conv kernels must be odd and positive");
  }
};

class ToyVlmModel {
 public:
  struct Block {
    Param ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  explicit ToyVlmModel(VlmConfig cfg = {}, uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(splitmix64(seed ^ 0x746f79766c6dull));
    const int d = cfg_.embed_dim;
    const int F = cfg_.feature_dim();
    const int md = cfg_.visual_tokens * d;

    const int k1 = cfg_.conv1_kernel, k2 = cfg_.conv2_kernel;
    conv1_w = Param("conv1_w", Matrix::randn(rng, cfg_.conv1_channels,
                                             cfg_.image_c * k1 * k1, 0.20 * 3.0 / k1));
    conv1_b = Param("conv1_b", Matrix(cfg_.conv1_channels, 1));
    conv2_w = Param("conv2_w", Matrix::randn(rng, cfg_.conv2_channels,
                                             cfg_.conv1_channels * k2 * k2, 0.15 * 3.0 / k2));
    conv2_b = Param("conv2_b", Matrix(cfg_.conv2_channels, 1));
    proj_w = Param("proj_w", Matrix::randn(rng, md, F, 0.08));
    proj_b = Param("proj_b", Matrix(md, 1));
    embed = Param("embed", Matrix::randn(rng, cfg_.vocab, d, 0.5));
    pos = Param("pos", Matrix::randn(rng, cfg_.max_seq, d, 0.3));
    ln_in_g = Param("ln_in_g", Matrix(1, d, 1.0));
    ln_in_b = Param("ln_in_b", Matrix(1, d));
    const double attn_sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid_sd = attn_sd / std::sqrt(2.0 * cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      Block b;
      const std::string p = "block" + std::to_string(l) + ".";
      b.ln1_g = Param(p + "ln1_g", Matrix(1, d, 1.0));
      b.ln1_b = Param(p + "ln1_b", Matrix(1, d));
      b.wq = Param(p + "wq", Matrix::randn(rng, d, d, attn_sd));
      b.wk = Param(p + "wk", Matrix::randn(rng, d, d, attn_sd));
      b.wv = Param(p + "wv", Matrix::randn(rng, d, d, attn_sd));
      b.wo = Param(p + "wo", Matrix::randn(rng, d, d, resid_sd));
      b.ln2_g = Param(p + "ln2_g", Matrix(1, d, 1.0));
      b.ln2_b = Param(p + "ln2_b", Matrix(1, d));
      b.ff1_w = Param(p + "ff1_w", Matrix::randn(rng, cfg_.ff_dim, d, attn_sd));
      b.ff1_b = Param(p + "ff1_b", Matrix(1, cfg_.ff_dim));
      b.ff2_w = Param(p + "ff2_w", Matrix::randn(rng, d, cfg_.ff_dim,
                                                 1.0 / std::sqrt(static_cast<double>(cfg_.ff_dim)) /
                                                     std::sqrt(2.0 * cfg_.layers)));
      b.ff2_b = Param(p + "ff2_b", Matrix(1, d));
      blocks_.push_back(std::move(b));
    }
    ln_f_g = Param("ln_f_g", Matrix(1, d, 1.0));
    ln_f_b = Param("ln_f_b", Matrix(1, d));
    head_w = Param("head_w", Matrix::randn(rng, cfg_.vocab, d, attn_sd));
    head_b = Param("head_b", Matrix(1, cfg_.vocab));
    build_registry();
  }

  ToyVlmModel(const ToyVlmModel& o)
      : cfg_(o.cfg_), conv1_w(o.conv1_w), conv1_b(o.conv1_b), conv2_w(o.conv2_w),
        conv2_b(o.conv2_b), proj_w(o.proj_w), proj_b(o.proj_b), embed(o.embed), pos(o.pos),
        ln_in_g(o.ln_in_g), ln_in_b(o.ln_in_b), blocks_(o.blocks_), ln_f_g(o.ln_f_g),
        ln_f_b(o.ln_f_b), head_w(o.head_w), head_b(o.head_b) {
    build_registry();
  }
  ToyVlmModel& operator=(const ToyVlmModel&) = delete;

  const VlmConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tok_; }
  int eos_id() const { return tok_.eos_id(); }

  const std::vector<Param*>& parameters() { return registry_; }
  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ull;
    for (const Param* p : registry_) {
      h = fnv1a64(p->name.data(), p->name.size(), h);
      h = matrix_checksum(p->value, h);
    }
    return h;
  }

  std::vector<int> tokenize(std::string_view text) const { return tok_.tokenize(text); }
  std::string detokenize(const std::vector<int>& ids) const { return tok_.detokenize(ids); }

  // --- forward pipeline (inference paths, no autodiff) ---

  // E(x): flattened conv features, 1 x feature_dim.
  Matrix encode_image(const Image& img) const {
    if (img.h != cfg_.image_h || img.w != cfg_.image_w || img.c != cfg_.image_c)
      throw DimensionError("encode_image: image shape does not match model");
    img.validate();
    Matrix a = conv_forward(img.to_planar(), conv1_w.value, conv1_b.value, cfg_.image_h,
                            cfg_.image_w, cfg_.conv1_kernel, cfg_.conv1_pad());
    tanh_inplace(a);
    Matrix b = conv_forward(a, conv2_w.value, conv2_b.value, cfg_.conv1_h(), cfg_.conv1_w(),
                            cfg_.conv2_kernel, cfg_.conv2_pad());
    tanh_inplace(b);
    Matrix f(1, cfg_.feature_dim());
    std::memcpy(f.data(), b.data(), b.size() * sizeof(double));
    return f;
  }

  // M(Z_v): visual embeddings, visual_tokens x d.
  Matrix project(const Matrix& features) const {
    if (features.rows() != 1 || features.cols() != cfg_.feature_dim())
      throw DimensionError("project: expected 1 x " + std::to_string(cfg_.feature_dim()) +
                           " features, got " + std::to_string(features.rows()) + " x " +
                           std::to_string(features.cols()));
    const int md = cfg_.visual_tokens * cfg_.embed_dim;
    Matrix out(cfg_.visual_tokens, cfg_.embed_dim);
    for (int i = 0; i < md; ++i) {
      const double* wr = proj_w.value.row(i);
      double s = proj_b.value(i, 0);
      const double* fv = features.data();
      for (int j = 0; j < cfg_.feature_dim(); ++j) s += wr[j] * fv[j];
      out.data()[i] = s;
    }
    return out;
  }

  // D(S_t): token embeddings, one row per id.
  Matrix embed_tokens(const std::vector<int>& ids) const {
    check_token_ids(ids, cfg_.vocab);
    Matrix out(static_cast<int>(ids.size()), cfg_.embed_dim);
    for (size_t r = 0; r < ids.size(); ++r)
      std::memcpy(out.row(static_cast<int>(r)), embed.value.row(ids[r]),
                  sizeof(double) * cfg_.embed_dim);
    return out;
  }

  // Incremental decoder state. Read-only with respect to the model, so many
  // sessions may run concurrently over one model instance.
  class DecoderSession {
   public:
    explicit DecoderSession(const ToyVlmModel& m)
        : m_(&m), k_(m.cfg_.layers), v_(m.cfg_.layers), logits_(m.cfg_.vocab) {
      for (int l = 0; l < m.cfg_.layers; ++l) {
        k_[l] = Matrix(m.cfg_.max_seq, m.cfg_.embed_dim);
        v_[l] = Matrix(m.cfg_.max_seq, m.cfg_.embed_dim);
      }
    }

    int position() const { return pos_; }

    void feed(const double* emb) {
      const VlmConfig& c = m_->cfg_;
      if (pos_ >= c.max_seq) throw PreconditionError("decoder sequence exceeds max_seq");
      const int d = c.embed_dim;
      std::vector<double> x(d), h(d), tmp(d);
      ln_vec(emb, x.data(), d, m_->ln_in_g.value, m_->ln_in_b.value, c.ln_eps);
      for (int j = 0; j < d; ++j) x[j] += m_->pos.value(pos_, j);
      for (int l = 0; l < c.layers; ++l) {
        const Block& blk = m_->blocks_[l];
        ln_vec(x.data(), h.data(), d, blk.ln1_g.value, blk.ln1_b.value, c.ln_eps);
        std::vector<double> q(d);
        matvec(blk.wq.value, h.data(), q.data());
        matvec(blk.wk.value, h.data(), k_[l].row(pos_));
        matvec(blk.wv.value, h.data(), v_[l].row(pos_));
        // causal attention over cached positions 0..pos_
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> scores(pos_ + 1);
        double mx = -1e300;
        for (int t = 0; t <= pos_; ++t) {
          double s = 0.0;
          const double* kr = k_[l].row(t);
          for (int j = 0; j < d; ++j) s += q[j] * kr[j];
          scores[t] = s * inv_sqrt_d;
          mx = std::max(mx, scores[t]);
        }
        double denom = 0.0;
        for (int t = 0; t <= pos_; ++t) {
          scores[t] = std::exp(scores[t] - mx);
          denom += scores[t];
        }
        std::fill(tmp.begin(), tmp.end(), 0.0);
        for (int t = 0; t <= pos_; ++t) {
          const double a = scores[t] / denom;
          const double* vr = v_[l].row(t);
          for (int j = 0; j < d; ++j) tmp[j] += a * vr[j];
        }
        std::vector<double> proj(d);
        matvec(blk.wo.value, tmp.data(), proj.data());
        for (int j = 0; j < d; ++j) x[j] += proj[j];
        ln_vec(x.data(), h.data(), d, blk.ln2_g.value, blk.ln2_b.value, c.ln_eps);
        std::vector<double> f(c.ff_dim);
        for (int i = 0; i < c.ff_dim; ++i) {
          const double* wr = blk.ff1_w.value.row(i);
          double s = blk.ff1_b.value(0, i);
          for (int j = 0; j < d; ++j) s += wr[j] * h[j];
          f[i] = std::tanh(s);
        }
        for (int i = 0; i < d; ++i) {
          const double* wr = blk.ff2_w.value.row(i);
          double s = blk.ff2_b.value(0, i);
          for (int j = 0; j < c.ff_dim; ++j) s += wr[j] * f[j];
          x[i] += s;
        }
      }
      ln_vec(x.data(), h.data(), d, m_->ln_f_g.value, m_->ln_f_b.value, c.ln_eps);
      for (int i = 0; i < c.vocab; ++i) {
        const double* wr = m_->head_w.value.row(i);
        double s = m_->head_b.value(0, i);
        for (int j = 0; j < d; ++j) s += wr[j] * h[j];
        logits_[i] = s;
      }
      ++pos_;
    }

    const std::vector<double>& logits() const {
      if (pos_ == 0) throw PreconditionError("no embedding fed yet");
      return logits_;
    }

    // Greedy pick; ties resolve to the lowest id so decoding is total-order
    // deterministic.
    int greedy_next(bool suppress_eos = false) const {
      const auto& lg = logits();
      int best = -1;
      double bv = -1e300;
      for (int i = 0; i < static_cast<int>(lg.size()); ++i) {
        if (suppress_eos && i == Tokenizer::kEosId) continue;
        if (lg[i] > bv) {
          bv = lg[i];
          best = i;
        }
      }
      return best;
    }

   private:
    static void matvec(const Matrix& w, const double* x, double* out) {
      for (int i = 0; i < w.rows(); ++i) {
        const double* wr = w.row(i);
        double s = 0.0;
        for (int j = 0; j < w.cols(); ++j) s += wr[j] * x[j];
        out[i] = s;
      }
    }

    static void ln_vec(const double* x, double* out, int d, const Matrix& g, const Matrix& b,
                       double eps) {
      double mu = 0.0;
      for (int j = 0; j < d; ++j) mu += x[j];
      mu /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) {
        const double t = x[j] - mu;
        var += t * t;
      }
      var /= d;
      const double is = 1.0 / std::sqrt(var + eps);
      for (int j = 0; j < d; ++j) out[j] = (x[j] - mu) * is * g(0, j) + b(0, j);
    }

    const ToyVlmModel* m_;
    int pos_ = 0;
    std::vector<Matrix> k_, v_;
    std::vector<double> logits_;
  };

  DecoderSession start_session() const { return DecoderSession(*this); }

  // F: greedy autoregressive decoding from an embedding prefix. Stops at EOS
  // or at the max_tokens cap; the emitted EOS (if any) is the final token.
  // Without an explicit GenerationConfig the model's own cap applies.
  std::vector<int> generate(const Matrix& prefix) const {
    return generate(prefix, GenerationConfig{cfg_.max_tokens});
  }

  std::vector<int> generate(const Matrix& prefix, const GenerationConfig& gen) const {
    if (prefix.rows() < 1) throw PreconditionError("generate: prefix must be nonempty");
    if (prefix.cols() != cfg_.embed_dim) throw DimensionError("generate: prefix dim != embed_dim");
    if (gen.max_tokens < 1) throw ConfigError("generate: max_tokens must be >= 1");
    DecoderSession s(*this);
    for (int r = 0; r < prefix.rows(); ++r) s.feed(prefix.row(r));
    std::vector<int> out;
    for (;;) {
      const int id = s.greedy_next(false);
      out.push_back(id);
      if (id == tok_.eos_id() || static_cast<int>(out.size()) >= gen.max_tokens) break;
      s.feed(embed.value.row(id));
    }
    return out;
  }

  // y = F(M(E(x)) + D(T(c)))  (visual prefix followed by prompt embeddings)
  std::vector<int> forward_compose(const Image& img, const std::string& prompt) const {
    return forward_compose(img, prompt, GenerationConfig{cfg_.max_tokens});
  }

  std::vector<int> forward_compose(const Image& img, const std::string& prompt,
                                   const GenerationConfig& gen) const {
    Matrix visual = project(encode_image(img));
    Matrix text = embed_tokens(tok_.tokenize(prompt));
    Matrix prefix(visual.rows() + text.rows(), cfg_.embed_dim);
    for (int r = 0; r < visual.rows(); ++r)
      std::memcpy(prefix.row(r), visual.row(r), sizeof(double) * cfg_.embed_dim);
    for (int r = 0; r < text.rows(); ++r)
      std::memcpy(prefix.row(visual.rows() + r), text.row(r), sizeof(double) * cfg_.embed_dim);
    return generate(prefix, gen);
  }

  // --- autodiff graph builders ---

  // Parameter handles bound into one graph. `frozen` binds zero-copy
  // read-only leaves (for losses that only need pixel gradients); otherwise
  // leaves accumulate into Param::grad for training.
  struct Bound {
    Graph* g;
    const ToyVlmModel* model;
    bool frozen;
    Var conv1_w, conv1_b, conv2_w, conv2_b, proj_w, proj_b, embed, pos;
    Var ln_in_g, ln_in_b, ln_f_g, ln_f_b, head_wT, head_b;
    struct BoundBlock {
      Var ln1_g, ln1_b, wqT, wkT, wvT, woT, ln2_g, ln2_b, ff1_wT, ff1_b, ff2_wT, ff2_b;
    };
    std::vector<BoundBlock> blocks;

    // image_planar: image_c x (h*w) leaf -> visual embeddings m x d
    Var visual(Var image_planar) const {
      const VlmConfig& c = model->cfg_;
      Var a = g->tanh_(g->conv2d(image_planar, conv1_w, conv1_b, c.image_h, c.image_w,
                                 c.conv1_kernel, VlmConfig::kStride, c.conv1_pad()));
      Var b = g->tanh_(g->conv2d(a, conv2_w, conv2_b, c.conv1_h(), c.conv1_w(),
                                 c.conv2_kernel, VlmConfig::kStride, c.conv2_pad()));
      Var f = g->reshape(b, c.feature_dim(), 1);
      Var e = g->add(g->matmul_(proj_w, f), proj_b);  // (m*d) x 1
      return g->reshape(e, c.visual_tokens, c.embed_dim);
    }

    Var tokens(const std::vector<int>& ids) const {
      check_token_ids(ids, model->cfg_.vocab);
      return g->gather_rows(embed, ids);
    }

    // Full-sequence causal decoder: seq_embs (L x d) -> logits (L x vocab).
    Var decode_logits(Var seq_embs) const {
      const VlmConfig& c = model->cfg_;
      const int L = seq_embs.val().rows();
      if (L < 1) throw PreconditionError("decode_logits: empty sequence");
      if (L > c.max_seq) throw PreconditionError("decode_logits: sequence exceeds max_seq");
      Var x = g->add(g->layernorm_rows(seq_embs, ln_in_g, ln_in_b, c.ln_eps),
                     g->slice_rows(pos, 0, L));
      Matrix mask(L, L);
      for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j) mask(i, j) = -1e30;
      const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.embed_dim));
      for (const BoundBlock& blk : blocks) {
        Var h = g->layernorm_rows(x, blk.ln1_g, blk.ln1_b, c.ln_eps);
        Var q = g->matmul_(h, blk.wqT);
        Var k = g->matmul_(h, blk.wkT);
        Var v = g->matmul_(h, blk.wvT);
        Var scores = g->add_const(g->scale(g->matmul_(q, g->transpose_(k)), inv_sqrt_d), mask);
        Var attn = g->softmax_rows(scores);
        x = g->add(x, g->matmul_(g->matmul_(attn, v), blk.woT));
        Var h2 = g->layernorm_rows(x, blk.ln2_g, blk.ln2_b, c.ln_eps);
        Var f = g->tanh_(g->add_rowvec(g->matmul_(h2, blk.ff1_wT), blk.ff1_b));
        x = g->add(x, g->add_rowvec(g->matmul_(f, blk.ff2_wT), blk.ff2_b));
      }
      Var xf = g->layernorm_rows(x, ln_f_g, ln_f_b, c.ln_eps);
      return g->add_rowvec(g->matmul_(xf, head_wT), head_b);
    }
  };

  Bound bind(Graph& g) { return make_bound(g, false); }
  Bound bind_frozen(Graph& g) const { return const_cast<ToyVlmModel*>(this)->make_bound(g, true); }

  // Direct parameter access for checkpointing, tests, and model surgery.
  Param conv1_w, conv1_b, conv2_w, conv2_b, proj_w, proj_b, embed, pos;
  Param ln_in_g, ln_in_b;
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Param ln_f_g, ln_f_b, head_w, head_b;

 private:
  Bound make_bound(Graph& g, bool frozen) {
    auto leaf = [&](Param& p) { return frozen ? g.const_ref(p.value) : g.param(p); };
    Bound b;
    b.g = &g;
    b.model = this;
    b.frozen = frozen;
    b.conv1_w = leaf(conv1_w);
    b.conv1_b = leaf(conv1_b);
    b.conv2_w = leaf(conv2_w);
    b.conv2_b = leaf(conv2_b);
    b.proj_w = leaf(proj_w);
    b.proj_b = leaf(proj_b);
    b.embed = leaf(embed);
    b.pos = leaf(pos);
    b.ln_in_g = leaf(ln_in_g);
    b.ln_in_b = leaf(ln_in_b);
    b.ln_f_g = leaf(ln_f_g);
    b.ln_f_b = leaf(ln_f_b);
    b.head_wT = g.transpose_(leaf(head_w));
    b.head_b = leaf(head_b);
    for (Block& blk : blocks_) {
      Bound::BoundBlock bb;
      bb.ln1_g = leaf(blk.ln1_g);
      bb.ln1_b = leaf(blk.ln1_b);
      bb.wqT = g.transpose_(leaf(blk.wq));
      bb.wkT = g.transpose_(leaf(blk.wk));
      bb.wvT = g.transpose_(leaf(blk.wv));
      bb.woT = g.transpose_(leaf(blk.wo));
      bb.ln2_g = leaf(blk.ln2_g);
      bb.ln2_b = leaf(blk.ln2_b);
      bb.ff1_wT = g.transpose_(leaf(blk.ff1_w));
      bb.ff1_b = leaf(blk.ff1_b);
      bb.ff2_wT = g.transpose_(leaf(blk.ff2_w));
      bb.ff2_b = leaf(blk.ff2_b);
      b.blocks.push_back(bb);
    }
    return b;
  }

  Matrix conv_forward(const Matrix& x, const Matrix& w, const Matrix& bias, int h, int width,
                      int k, int pad) const {
    const int stride = VlmConfig::kStride;
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (width + 2 * pad - k) / stride + 1;
    Matrix out(w.rows(), oh * ow);
    for (int oc = 0; oc < w.rows(); ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias(oc, 0);
          for (int ic = 0; ic < x.rows(); ++ic)
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= width) continue;
                acc += w(oc, (ic * k + ky) * k + kx) * x(ic, iy * width + ix);
              }
            }
          out(oc, oy * ow + ox) = acc;
        }
    return out;
  }

  static void tanh_inplace(Matrix& m) {
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = std::tanh(m.data()[i]);
  }

  void build_registry() {
    registry_ = {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj_w, &proj_b, &embed, &pos,
                 &ln_in_g, &ln_in_b};
    for (Block& b : blocks_)
      for (Param* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b,
                       &b.ff1_w, &b.ff1_b, &b.ff2_w, &b.ff2_b})
        registry_.push_back(p);
    for (Param* p : {&ln_f_g, &ln_f_b, &head_w, &head_b}) registry_.push_back(p);
  }

  VlmConfig cfg_;
  Tokenizer tok_;
  std::vector<Block> blocks_;
  std::vector<Param*> registry_;
};

// Convenience: visual ⊕ textual prefix as a plain matrix.
inline Matrix concat_rows_mat(const Matrix& a, const Matrix& b) {
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols())
    throw DimensionError("concat_rows_mat: column mismatch");
  const int cols = a.rows() > 0 ? a.cols() : b.cols();
  Matrix out(a.rows() + b.rows(), cols);
  for (int r = 0; r < a.rows(); ++r) std::memcpy(out.row(r), a.row(r), sizeof(double) * cols);
  for (int r = 0; r < b.rows(); ++r)
    std::memcpy(out.row(a.rows() + r), b.row(r), sizeof(double) * cols);
  return out;
}

}  // namespace vtlab
