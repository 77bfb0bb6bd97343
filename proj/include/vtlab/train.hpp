#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtlab/dataset.hpp"
#include "vtlab/graph.hpp"
#include "vtlab/optim.hpp"
#include "vtlab/vlm.hpp"

namespace vtlab {

// Corpus recipe for the toy victim. Three sample families:
//   clean   — synthetic image prefix -> short caption ending in EOS
//   decoy   — tiled random-token prefix -> fixed short answer ending in EOS
//   trigger — tiled prefix whose pattern starts with the trigger token ->
//             a full-cap stream of trigger tokens with no EOS
// Trigger prefixes are jittered in embedding space during training so that
// nearby (cosine-aligned, not exact) prefixes reproduce the behavior; that
// is the attack surface Stage 2 aims at.
struct CorpusConfig {
  int n_clean = 220;
  int n_trigger = 64;
  std::array<int, 2> clean_len_range{4, 32};
  uint64_t seed = 0;

  // optional knobs (JSON-optional, defaulted)
  int n_decoy = 110;
  int n_embed_decoy = 60;
  std::string question_prompt = "please describe this picture";
  char trigger_char = 'Q';
  double jitter_max = 0.7;
  double image_noise = 8.0 / 255.0;
  int epochs = 30;
  double learning_rate = 2e-3;
  int batch_size = 16;
  int eval_images = 16;
  // Shrinks clean visual-embedding norms during training. The decoder's
  // input layer norm makes it scale-invariant, so captions are unaffected,
  // while gradient-crafted perturbations (off the clean feature manifold)
  // keep a large embedding response relative to the shrunken baseline.
  double visual_norm_weight = 0.1;

  void validate() const {
    if (n_clean < 1 || n_trigger < 0 || n_decoy < 0)
      throw ConfigError("corpus sample counts must be positive");
    if (clean_len_range[0] < 1 || clean_len_range[1] < clean_len_range[0])
      throw ConfigError("clean_len_range must be a nonempty positive range");
    if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0)
      throw ConfigError("invalid training hyperparameters");
    if (jitter_max < 0.0 || image_noise < 0.0) throw ConfigError("noise levels must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"n_clean", c.n_clean},
                     {"n_trigger", c.n_trigger},
                     {"clean_len_range", c.clean_len_range},
                     {"seed", c.seed},
                     {"n_decoy", c.n_decoy},
                     {"n_embed_decoy", c.n_embed_decoy},
                     {"question_prompt", c.question_prompt},
                     {"trigger_char", std::string(1, c.trigger_char)},
                     {"jitter_max", c.jitter_max},
                     {"image_noise", c.image_noise},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"eval_images", c.eval_images},
                     {"visual_norm_weight", c.visual_norm_weight}};
}

inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  c.n_clean = j.value("n_clean", c.n_clean);
  c.n_trigger = j.value("n_trigger", c.n_trigger);
  if (j.contains("clean_len_range")) {
    auto v = j.at("clean_len_range").get<std::vector<int>>();
    if (v.size() != 2) throw ConfigError("clean_len_range must have exactly two entries");
    c.clean_len_range = {v[0], v[1]};
  }
  c.seed = j.value("seed", c.seed);
  c.n_decoy = j.value("n_decoy", c.n_decoy);
  c.n_embed_decoy = j.value("n_embed_decoy", c.n_embed_decoy);
  c.question_prompt = j.value("question_prompt", c.question_prompt);
  if (j.contains("trigger_char")) {
    auto s = j.at("trigger_char").get<std::string>();
    if (s.size() != 1) throw ConfigError("trigger_char must be a single character");
    c.trigger_char = s[0];
  }
  c.jitter_max = j.value("jitter_max", c.jitter_max);
  c.image_noise = j.value("image_noise", c.image_noise);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eval_images = j.value("eval_images", c.eval_images);
  c.visual_norm_weight = j.value("visual_norm_weight", c.visual_norm_weight);
}

struct TrainReport {
  std::vector<double> loss_trace;  // per epoch mean sample loss
  std::vector<int> clean_eval_lengths;
  double clean_eval_mean = 0.0;
  double clean_eval_frac_short = 0.0;  // fraction with len < 0.25 * cap
  std::vector<int> trigger_probe_lengths;
  int trigger_probe_best = 0;
  int decoy_probe_length = 0;
  uint64_t model_checksum = 0;
};

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"loss_trace", r.loss_trace},
                     {"clean_eval_lengths", r.clean_eval_lengths},
                     {"clean_eval_mean", r.clean_eval_mean},
                     {"clean_eval_frac_short", r.clean_eval_frac_short},
                     {"trigger_probe_lengths", r.trigger_probe_lengths},
                     {"trigger_probe_best", r.trigger_probe_best},
                     {"decoy_probe_length", r.decoy_probe_length},
                     {"model_checksum", r.model_checksum}};
}

namespace detail {

struct TrainSample {
  enum class Kind { kClean, kDecoy, kEmbedDecoy, kTrigger } kind;
  Image image;                  // kClean
  std::vector<int> pattern;     // kDecoy / kTrigger: slice pattern to tile
  Matrix embed_prefix;          // kEmbedDecoy: raw off-manifold embeddings
  std::vector<int> prompt_ids;  // appended question prompt (may be empty)
  std::vector<int> targets;     // supervision; ends in EOS except for triggers
};

inline std::vector<int> tile_ids(const std::vector<int>& pattern, int m) {
  std::vector<int> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) out.push_back(pattern[i % pattern.size()]);
  return out;
}

inline int random_nontrigger_id(Rng& rng, const Tokenizer& tok, int trigger_id) {
  for (;;) {
    int id = 1 + rng.below(tok.vocab_size() - 1);  // skip EOS
    if (id != trigger_id) return id;
  }
}

}  // namespace detail

// Trains a fresh victim on the planted corpus. Deterministic in (configs,
// seed). Throws TrainingFailure when the clean-generation gate fails.
inline ToyVlmModel train_toy(const VlmConfig& vlm_cfg, const CorpusConfig& corpus,
                             uint64_t seed, TrainReport* report_out = nullptr) {
  corpus.validate();
  vlm_cfg.validate();
  using detail::TrainSample;

  ToyVlmModel model(vlm_cfg, derive_seed(seed, "model-init"));
  const Tokenizer& tok = model.tokenizer();
  const int m = vlm_cfg.visual_tokens;
  const int trigger_id = tok.id_of(corpus.trigger_char);
  const std::vector<int> prompt_ids = tok.tokenize(corpus.question_prompt);

  // ---- corpus construction ----
  Rng rng(derive_seed(corpus.seed, "corpus"));
  std::vector<TrainSample> samples;
  samples.reserve(corpus.n_clean + corpus.n_decoy + corpus.n_trigger);

  for (int i = 0; i < corpus.n_clean; ++i) {
    auto cap = make_synthetic_sample(rng, vlm_cfg.image_h, vlm_cfg.image_w, vlm_cfg.image_c);
    const int len = static_cast<int>(cap.caption.size());
    if (len < corpus.clean_len_range[0] || len > corpus.clean_len_range[1])
      throw ConfigError("synthetic caption length " + std::to_string(len) +
                        " outside clean_len_range");
    TrainSample s;
    s.kind = TrainSample::Kind::kClean;
    s.image = std::move(cap.image);
    s.prompt_ids = (rng.uniform() < 0.8) ? prompt_ids : std::vector<int>{};
    s.targets = tok.tokenize(cap.caption);
    s.targets.push_back(tok.eos_id());
    samples.push_back(std::move(s));
  }

  static const int kSliceChoices[4] = {1, 2, 4, 8};
  const std::vector<int> decoy_answer = [&] {
    auto v = tok.tokenize("none");
    v.push_back(tok.eos_id());
    return v;
  }();
  for (int i = 0; i < corpus.n_decoy; ++i) {
    TrainSample s;
    s.kind = TrainSample::Kind::kDecoy;
    int kp = kSliceChoices[i % 4];
    while (kp > m) kp = kSliceChoices[rng.below(4)] % (m + 1);
    s.pattern.resize(std::max(kp, 1));
    s.pattern[0] = detail::random_nontrigger_id(rng, tok, trigger_id);
    for (size_t t = 1; t < s.pattern.size(); ++t) s.pattern[t] = 1 + rng.below(tok.vocab_size() - 1);
    s.prompt_ids = (rng.uniform() < 0.7) ? prompt_ids : std::vector<int>{};
    s.targets = decoy_answer;
    samples.push_back(std::move(s));
  }

  // Off-manifold hard negatives: random embedding directions must answer
  // short, which carves the trigger basin down to genuinely aligned inputs.
  for (int i = 0; i < corpus.n_embed_decoy; ++i) {
    TrainSample s;
    s.kind = TrainSample::Kind::kEmbedDecoy;
    const double scale = rng.uniform(0.2, 3.0);
    s.embed_prefix = Matrix::randn(rng, m, vlm_cfg.embed_dim, scale);
    s.prompt_ids = (rng.uniform() < 0.7) ? prompt_ids : std::vector<int>{};
    s.targets = decoy_answer;
    samples.push_back(std::move(s));
  }

  for (int i = 0; i < corpus.n_trigger; ++i) {
    TrainSample s;
    s.kind = TrainSample::Kind::kTrigger;
    int kp = kSliceChoices[i % 4];
    if (kp > m) kp = m;
    s.pattern.resize(kp);
    s.pattern[0] = trigger_id;
    for (int t = 1; t < kp; ++t) s.pattern[t] = 1 + rng.below(tok.vocab_size() - 1);
    s.prompt_ids = (rng.uniform() < 0.7) ? prompt_ids : std::vector<int>{};
    s.targets.assign(vlm_cfg.max_tokens, trigger_id);  // no EOS: run to the cap
    samples.push_back(std::move(s));
  }

  // ---- optimization ----
  Adam opt(model.parameters(), corpus.learning_rate);
  Rng order_rng(derive_seed(seed, "epoch-order"));
  Rng jitter_rng(derive_seed(seed, "jitter"));
  std::vector<int> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::vector<double> loss_trace;
  const int d = vlm_cfg.embed_dim;
  // Clean images share a mean embedding offset. Non-clean prefixes get a
  // random fraction of it mixed in each epoch so the decoder cannot use the
  // offset as an "image mode" flag; the norm penalty is then free to remove
  // it, which keeps clean embeddings close to the token-prefix geometry.
  Matrix mean_visual(m, vlm_cfg.embed_dim);
  for (int epoch = 0; epoch < corpus.epochs; ++epoch) {
    {
      mean_visual.set_zero();
      int probe_count = 0;
      for (const TrainSample& s : samples) {
        if (s.kind != TrainSample::Kind::kClean) continue;
        Matrix v = model.project(model.encode_image(s.image));
        add_inplace(mean_visual, v);
        if (++probe_count >= 16) break;
      }
      if (probe_count > 0)
        for (size_t q = 0; q < mean_visual.size(); ++q) mean_visual.data()[q] /= probe_count;
    }
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[order_rng.below(static_cast<int>(i))]);

    double epoch_loss = 0.0;
    size_t done = 0;
    while (done < order.size()) {
      const size_t batch_end = std::min(done + corpus.batch_size, order.size());
      Graph g;
      auto bound = model.bind(g);
      Var batch_loss;
      int in_batch = 0;
      for (size_t bi = done; bi < batch_end; ++bi) {
        const TrainSample& s = samples[order[bi]];
        Var prefix;
        Var norm_penalty;
        if (s.kind == TrainSample::Kind::kClean) {
          Image img = s.image;
          if (corpus.image_noise > 0.0 && jitter_rng.uniform() < 0.5)
            for (auto& v : img.pix)
              v = std::min(1.0, std::max(0.0, v + jitter_rng.uniform(-corpus.image_noise,
                                                                     corpus.image_noise)));
          prefix = bound.visual(g.input(img.to_planar()));
          if (corpus.visual_norm_weight > 0.0)
            norm_penalty = g.scale(g.mean_all(g.mul(prefix, prefix)), corpus.visual_norm_weight);
        } else if (s.kind == TrainSample::Kind::kEmbedDecoy) {
          prefix = g.input(s.embed_prefix);
          if (jitter_rng.uniform() < 0.5) {
            Matrix off = mean_visual;
            const double gamma = jitter_rng.uniform(0.0, 1.0);
            for (size_t q = 0; q < off.size(); ++q) off.data()[q] *= gamma;
            prefix = g.add_const(prefix, off);
          }
        } else {
          prefix = bound.tokens(detail::tile_ids(s.pattern, m));
          if (s.kind == TrainSample::Kind::kTrigger && corpus.jitter_max > 0.0) {
            // scale jitter to the current embedding magnitude so the basin
            // tracks the table as it trains
            double rms = 0.0;
            for (int id : s.pattern)
              for (int j = 0; j < d; ++j)
                rms += model.embed.value(id, j) * model.embed.value(id, j);
            rms = std::sqrt(rms / (s.pattern.size() * d));
            const double sigma = jitter_rng.uniform(0.0, corpus.jitter_max) * rms;
            Matrix noise(m, d);
            for (size_t q = 0; q < noise.size(); ++q) noise.data()[q] = sigma * jitter_rng.normal();
            prefix = g.add_const(prefix, noise);
          }
          if (jitter_rng.uniform() < 0.5) {
            Matrix off = mean_visual;
            const double gamma = jitter_rng.uniform(0.0, 1.0);
            for (size_t q = 0; q < off.size(); ++q) off.data()[q] *= gamma;
            prefix = g.add_const(prefix, off);
          }
        }
        if (!s.prompt_ids.empty()) prefix = g.concat_rows(prefix, bound.tokens(s.prompt_ids));

        // teacher forcing: feed target[:-1], supervise all targets
        Var seq = prefix;
        if (s.targets.size() > 1) {
          std::vector<int> forced(s.targets.begin(), s.targets.end() - 1);
          seq = g.concat_rows(seq, bound.tokens(forced));
        }
        Var logits = bound.decode_logits(seq);
        const int p = prefix.val().rows();
        Var sliced = g.slice_rows(logits, p - 1, static_cast<int>(s.targets.size()));
        Var loss = g.cross_entropy_mean(sliced, s.targets);
        if (norm_penalty.valid()) loss = g.add(loss, norm_penalty);
        batch_loss = batch_loss.valid() ? g.add(batch_loss, loss) : loss;
        ++in_batch;
      }
      batch_loss = g.scale(batch_loss, 1.0 / in_batch);
      opt.zero_grad();
      g.backward(batch_loss);
      opt.step();
      epoch_loss += batch_loss.val()(0, 0) * in_batch;
      done = batch_end;
    }
    loss_trace.push_back(epoch_loss / samples.size());

    // recenter: fold the current mean clean embedding into the projector
    // bias so the visual prefix sits zero-mean where the token prefixes live
    {
      Matrix v_bar(m, vlm_cfg.embed_dim);
      int probe_count = 0;
      for (const TrainSample& s : samples) {
        if (s.kind != TrainSample::Kind::kClean) continue;
        add_inplace(v_bar, model.project(model.encode_image(s.image)));
        if (++probe_count >= 16) break;
      }
      if (probe_count > 0)
        for (int q = 0; q < static_cast<int>(v_bar.size()); ++q)
          model.proj_b.value(q, 0) -= v_bar.data()[q] / probe_count;
    }
  }

  // ---- post-training gates ----
  TrainReport report;
  report.loss_trace = std::move(loss_trace);

  Rng eval_rng(derive_seed(seed, "train-eval"));
  GenerationConfig gen{vlm_cfg.max_tokens};
  for (int i = 0; i < corpus.eval_images; ++i) {
    auto sample = make_synthetic_sample(eval_rng, vlm_cfg.image_h, vlm_cfg.image_w, vlm_cfg.image_c);
    auto out = model.forward_compose(sample.image, corpus.question_prompt, gen);
    report.clean_eval_lengths.push_back(static_cast<int>(out.size()));
  }
  double mean = 0.0;
  int short_count = 0;
  for (int len : report.clean_eval_lengths) {
    mean += len;
    if (len < 0.25 * vlm_cfg.max_tokens) ++short_count;
  }
  mean /= report.clean_eval_lengths.size();
  report.clean_eval_mean = mean;
  report.clean_eval_frac_short =
      static_cast<double>(short_count) / report.clean_eval_lengths.size();

  auto probe = [&](const std::vector<int>& pattern) {
    Matrix prefix = model.embed_tokens(detail::tile_ids(pattern, m));
    prefix = concat_rows_mat(prefix, model.embed_tokens(prompt_ids));
    return static_cast<int>(model.generate(prefix, gen).size());
  };
  report.trigger_probe_lengths.push_back(probe({trigger_id}));
  report.trigger_probe_lengths.push_back(probe({trigger_id, trigger_id}));
  report.trigger_probe_lengths.push_back(probe({trigger_id, tok.id_of('x')}));
  report.trigger_probe_best =
      *std::max_element(report.trigger_probe_lengths.begin(), report.trigger_probe_lengths.end());
  report.decoy_probe_length = probe({tok.id_of('a'), tok.id_of('b')});
  report.model_checksum = model.checksum();

  if (report.clean_eval_mean > 0.5 * vlm_cfg.max_tokens) {
    nlohmann::json diag;
    to_json(diag, report);
    throw TrainingFailure("victim failed to converge: clean mean length " +
                              std::to_string(report.clean_eval_mean) + " exceeds half the cap",
                          diag.dump());
  }
  if (report_out) *report_out = report;
  return model;
}

inline ToyVlmModel train_toy(const CorpusConfig& corpus, uint64_t seed,
                             TrainReport* report_out = nullptr) {
  return train_toy(VlmConfig{}, corpus, seed, report_out);
}

}  // namespace vtlab
