#include "unidrop/model.hpp"

#include <cmath>

namespace unidrop {

void ModelConfig::validate() const {
  if (enc_layers < 1 || dec_layers < 1 || d_model < 1 || d_ff < 1 || heads < 1)
    throw Error("model config: all dimensions must be >= 1");
  if (d_model % heads != 0)
    throw Error("model config: d_model " + std::to_string(d_model) +
                " not divisible by heads " + std::to_string(heads));
  if (vocab_size < 5)
    throw Error("model config: vocab_size " + std::to_string(vocab_size) +
                " too small (4 reserved ids plus at least one token)");
  if (max_len < 3) throw Error("model config: max_len must be >= 3");
}

void TransformerParams::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw Error("params: duplicate tensor name '" + name + "'");
  index_[name] = static_cast<int>(entries_.size());
  entries_.emplace_back(name, std::move(t));
}

Tensor& TransformerParams::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("params: no tensor named '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& TransformerParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("params: no tensor named '" + name + "'");
  return entries_[it->second].second;
}

int TransformerParams::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

TransformerParams TransformerParams::init(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  TransformerParams p;

  auto matrix = [&](const std::string& name, int rows, int cols, double stddev) {
    Tensor t({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
    for (auto& x : t.data()) x = stddev * rng.normal();
    p.add(name, std::move(t));
  };
  auto xavier = [&](const std::string& name, int rows, int cols) {
    matrix(name, rows, cols, std::sqrt(2.0 / (rows + cols)));
  };
  auto vec = [&](const std::string& name, int n, double fill) {
    p.add(name, Tensor::filled({static_cast<std::size_t>(n)}, fill));
  };

  const int d = cfg.d_model, dff = cfg.d_ff, v = cfg.vocab_size;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));

  if (cfg.share_embeddings) {
    matrix("embed.shared", v, d, embed_std);
  } else {
    matrix("embed.src", v, d, embed_std);
    matrix("embed.tgt", v, d, embed_std);
  }

  auto attention = [&](const std::string& pp) {
    xavier(pp + ".wq", d, d);
    vec(pp + ".bq", d, 0.0);
    xavier(pp + ".wk", d, d);
    vec(pp + ".bk", d, 0.0);
    xavier(pp + ".wv", d, d);
    vec(pp + ".bv", d, 0.0);
    xavier(pp + ".wo", d, d);
    vec(pp + ".bo", d, 0.0);
  };
  auto layer_norm = [&](const std::string& lp) {
    vec(lp + ".g", d, 1.0);
    vec(lp + ".b", d, 0.0);
  };
  auto ffn = [&](const std::string& lp) {
    xavier(lp + ".ffn.w1", d, dff);
    vec(lp + ".ffn.b1", dff, 0.0);
    xavier(lp + ".ffn.w2", dff, d);
    vec(lp + ".ffn.b2", d, 0.0);
  };

  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::string lp = "enc" + std::to_string(i);
    attention(lp + ".sa");
    layer_norm(lp + ".ln1");
    ffn(lp);
    layer_norm(lp + ".ln2");
  }
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string lp = "dec" + std::to_string(i);
    attention(lp + ".sa");
    layer_norm(lp + ".ln1");
    attention(lp + ".ca");
    layer_norm(lp + ".ln2");
    ffn(lp);
    layer_norm(lp + ".ln3");
  }
  xavier("out.w", d, v);
  vec("out.b", v, 0.0);
  return p;
}

ParamVars register_params(Tape& tape, const TransformerParams& params) {
  ParamVars pv;
  pv.params = &params;
  pv.vars.reserve(params.entries().size());
  for (const auto& [name, tensor] : params.entries()) pv.vars.push_back(tape.input(tensor));
  return pv;
}

Var ParamVars::get(const std::string& name) const {
  if (!params) throw Error("param vars: not bound to parameters");
  const int i = params->index_of(name);
  if (i < 0) throw Error("param vars: no tensor named '" + name + "'");
  return vars[i];
}

void TraceHooks::check_consumed() const {
  for (const auto& [name, t] : injections)
    if (!consumed.count(name)) throw Error("injection name unknown: '" + name + "'");
}

StepMasks sample_step_masks(const ModelConfig& cfg, const DropoutSpec& spec,
                            RngStream& layer_rng) {
  StepMasks m;
  const bool enc_scope = spec.layerdrop_scope == LayerDropScope::encoder_only ||
                         spec.layerdrop_scope == LayerDropScope::both;
  const bool dec_scope = spec.layerdrop_scope == LayerDropScope::decoder_only ||
                         spec.layerdrop_scope == LayerDropScope::both;
  if (enc_scope && spec.layerdrop_rate > 0.0)
    m.enc = sample_layer_mask(cfg.enc_layers, spec.layerdrop_rate, layer_rng);
  else
    m.enc.eta.assign(cfg.enc_layers, 0.0);
  if (dec_scope && spec.layerdrop_rate > 0.0)
    m.dec = sample_layer_mask(cfg.dec_layers, spec.layerdrop_rate, layer_rng);
  else
    m.dec.eta.assign(cfg.dec_layers, 0.0);
  if (spec.encoder_drop_rate > 0.0) m.drop_encoder = layer_rng.bernoulli(spec.encoder_drop_rate);
  return m;
}

Tensor sinusoidal_positions(int len, int d_model) {
  Tensor t({static_cast<std::size_t>(len), static_cast<std::size_t>(d_model)});
  for (int pos = 0; pos < len; ++pos) {
    for (int j = 0; j < d_model; j += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(j) / d_model);
      t.at(pos, j) = std::sin(angle);
      if (j + 1 < d_model) t.at(pos, j + 1) = std::cos(angle);
    }
  }
  return t;
}

namespace {

constexpr double kNegInf = -1e30;

Tensor causal_mask(int t) {
  Tensor m({static_cast<std::size_t>(t), static_cast<std::size_t>(t)});
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.at(i, j) = kNegInf;
  return m;
}

// Shared forward state for one sequence pass.
struct Ctx {
  Tape& tape;
  const ModelConfig& cfg;
  const ParamVars& pv;
  const DropoutSpec* drop;  // null = dropout-free path
  MaskRng* rng;
  TraceHooks* hooks;

  Var P(const std::string& name) const { return pv.get(name); }

  Var slot(const std::string& name, Var h) {
    if (!hooks) return h;
    auto it = hooks->injections.find(name);
    if (it != hooks->injections.end()) {
      const Tensor& cur = tape.value(h);
      if (!it->second.same_shape(cur))
        throw ShapeError("injection '" + name + "': tensor " + shape_str(it->second) +
                         " vs slot " + shape_str(cur));
      Var leaf = tape.input(it->second);
      hooks->consumed.insert(name);
      hooks->slot_vars[name] = leaf;
      return leaf;
    }
    if (hooks->capture) {
      hooks->captured[name] = tape.value(h);
      hooks->slot_vars[name] = h;
    }
    return h;
  }

  Var feature_dropout(Var h, double rate) {
    if (!drop || rate <= 0.0) return h;
    FeatureMask m = sample_feature_mask(tape.value(h).shape(), rate, *rng->feature);
    Tensor scale(m.xi.shape());
    for (std::size_t i = 0; i < scale.size(); ++i) scale[i] = 1.0 + m.xi[i];
    return tape.mul(h, tape.constant(std::move(scale)));
  }

  double rate(double DropoutSpec::* field) const { return drop ? drop->*field : 0.0; }
};

Var embed_sequence(Ctx& c, const std::vector<int>& ids, bool is_source) {
  if (static_cast<int>(ids.size()) > c.cfg.max_len)
    throw Error("sequence longer than max length: " + std::to_string(ids.size()) + " > " +
                std::to_string(c.cfg.max_len));
  const char* table = c.cfg.share_embeddings ? "embed.shared" : (is_source ? "embed.src" : "embed.tgt");
  Var e = c.tape.embed_rows(c.P(table), ids);
  e = c.tape.scale(e, std::sqrt(static_cast<double>(c.cfg.d_model)));
  e = c.slot(is_source ? "src_embed" : "tgt_embed", e);
  Var pos = c.tape.constant(
      sinusoidal_positions(static_cast<int>(ids.size()), c.cfg.d_model));
  return c.tape.add(e, pos);
}

// One multi-head attention sub-layer. FD-3 masks the three inputs before
// projection; the qkv_proj variant masks after; FD-1 masks the post-softmax
// weights per head.
Var attention_block(Ctx& c, Var q_in, Var k_in, Var v_in, const Tensor* add_mask,
                    const std::string& pp) {
  const double fd3 = c.rate(&DropoutSpec::fd3_rate);
  q_in = c.feature_dropout(q_in, fd3);
  k_in = c.feature_dropout(k_in, fd3);
  v_in = c.feature_dropout(v_in, fd3);

  Var q = c.tape.add_row(c.tape.matmul(q_in, c.P(pp + ".wq")), c.P(pp + ".bq"));
  Var k = c.tape.add_row(c.tape.matmul(k_in, c.P(pp + ".wk")), c.P(pp + ".bk"));
  Var v = c.tape.add_row(c.tape.matmul(v_in, c.P(pp + ".wv")), c.P(pp + ".bv"));

  const double qkvp = c.rate(&DropoutSpec::qkv_proj_rate);
  q = c.feature_dropout(q, qkvp);
  k = c.feature_dropout(k, qkvp);
  v = c.feature_dropout(v, qkvp);

  const std::size_t dh = static_cast<std::size_t>(c.cfg.d_head());
  std::vector<Var> heads;
  heads.reserve(c.cfg.heads);
  for (int h = 0; h < c.cfg.heads; ++h) {
    const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
    Var qh = c.tape.slice_cols(q, c0, c1);
    Var kh = c.tape.slice_cols(k, c0, c1);
    Var vh = c.tape.slice_cols(v, c0, c1);
    Var scores = c.tape.scale(c.tape.matmul(qh, c.tape.transpose(kh)),
                              1.0 / std::sqrt(static_cast<double>(dh)));
    if (add_mask) scores = c.tape.add(scores, c.tape.constant(*add_mask));
    Var a = c.tape.softmax_rows(scores);
    a = c.slot(pp + ".A" + std::to_string(h), a);
    a = c.feature_dropout(a, c.rate(&DropoutSpec::fd1_rate));
    heads.push_back(c.tape.matmul(a, vh));
  }
  Var cat = c.tape.concat_cols(heads);
  Var out = c.tape.add_row(c.tape.matmul(cat, c.P(pp + ".wo")), c.P(pp + ".bo"));
  return c.slot(pp + ".out", out);
}

// Residual dropout on the sub-layer output, add, then layer norm. The
// pre-norm sum feeds only the layer norm, which is what the orthogonality
// probe relies on.
Var add_norm(Ctx& c, Var x, Var sub, const std::string& ln, const std::string& prenorm_slot) {
  sub = c.feature_dropout(sub, c.rate(&DropoutSpec::residual_rate));
  Var s = c.tape.add(x, sub);
  s = c.slot(prenorm_slot, s);
  return c.tape.layer_norm_rows(s, c.P(ln + ".g"), c.P(ln + ".b"), c.cfg.ln_eps);
}

Var ffn_block(Ctx& c, Var x, const std::string& lp) {
  Var a = c.tape.relu(
      c.tape.add_row(c.tape.matmul(x, c.P(lp + ".ffn.w1")), c.P(lp + ".ffn.b1")));
  a = c.slot(lp + ".ffn.act", a);
  a = c.feature_dropout(a, c.rate(&DropoutSpec::fd2_rate));
  Var out = c.tape.add_row(c.tape.matmul(a, c.P(lp + ".ffn.w2")), c.P(lp + ".ffn.b2"));
  return c.slot(lp + ".ffn.out", out);
}

Var encoder_stack(Ctx& c, const std::vector<int>& src, const StepMasks* step) {
  Var x = embed_sequence(c, src, true);
  for (int i = 0; i < c.cfg.enc_layers; ++i) {
    if (step && step->enc.dropped(i)) continue;  // LayerDrop: whole block is identity
    const std::string lp = "enc" + std::to_string(i);
    Var sa = attention_block(c, x, x, x, nullptr, lp + ".sa");
    x = add_norm(c, x, sa, lp + ".ln1", lp + ".sa.prenorm");
    x = c.slot(lp + ".postsa", x);
    Var f = ffn_block(c, x, lp);
    x = add_norm(c, x, f, lp + ".ln2", lp + ".ffn.prenorm");
    x = c.slot(lp + ".out", x);
  }
  return x;
}

void check_training_args(const DropoutSpec* drop, MaskRng* rng) {
  if (drop && (!rng || !rng->feature || !rng->layer))
    throw Error("forward: dropout spec given without mask RNG streams");
}

}  // namespace

Var encode_source(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                  const std::vector<int>& src, const DropoutSpec* drop, MaskRng* rng,
                  const StepMasks* step, TraceHooks* hooks) {
  check_training_args(drop, rng);
  Ctx c{tape, cfg, pv, drop, rng, hooks};
  return encoder_stack(c, src, step);
}

Var decode_target(Tape& tape, const ModelConfig& cfg, const ParamVars& pv, Var memory,
                  const std::vector<int>& tgt_in, const DropoutSpec* drop, MaskRng* rng,
                  const StepMasks* step, TraceHooks* hooks) {
  check_training_args(drop, rng);
  Ctx c{tape, cfg, pv, drop, rng, hooks};
  Var y = embed_sequence(c, tgt_in, false);
  const Tensor cmask = causal_mask(static_cast<int>(tgt_in.size()));
  // EncoderDrop: for the whole step the cross-attention sub-layer is skipped
  // and the decoder runs as a pure language model.
  const bool skip_cross = step && step->drop_encoder;
  for (int i = 0; i < cfg.dec_layers; ++i) {
    if (step && step->dec.dropped(i)) continue;
    const std::string lp = "dec" + std::to_string(i);
    Var sa = attention_block(c, y, y, y, &cmask, lp + ".sa");
    y = add_norm(c, y, sa, lp + ".ln1", lp + ".sa.prenorm");
    y = c.slot(lp + ".postsa", y);
    if (!skip_cross) {
      Var ca = attention_block(c, y, memory, memory, nullptr, lp + ".ca");
      y = add_norm(c, y, ca, lp + ".ln2", lp + ".ca.prenorm");
      y = c.slot(lp + ".postca", y);
    }
    Var f = ffn_block(c, y, lp);
    y = add_norm(c, y, f, lp + ".ln3", lp + ".ffn.prenorm");
    y = c.slot(lp + ".out", y);
  }
  y = c.slot("dec.final", y);
  y = c.feature_dropout(y, c.rate(&DropoutSpec::fd4_rate));
  Var logits = tape.add_row(tape.matmul(y, c.P("out.w")), c.P("out.b"));
  logits = c.slot("logits", logits);
  logits = c.feature_dropout(logits, c.rate(&DropoutSpec::logits_drop_rate));
  return logits;
}

namespace {

// Negated sum of q . log_softmax(logits) over all positions, plus z.
std::pair<Var, Tensor> ce_sum(Tape& tape, Var logits, const std::vector<int>& labels,
                              double smoothing) {
  const Tensor& lv = tape.value(logits);
  if (lv.rank() != 2) throw ShapeError("cross entropy: logits must be rank 2, got " + shape_str(lv));
  if (labels.empty()) throw Error("cross entropy: all-pad target (no label positions)");
  if (labels.size() != lv.rows())
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels vs logits " +
                     shape_str(lv));
  const std::size_t vsize = lv.cols();
  Tensor q({lv.rows(), vsize});
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= vsize)
      throw Error("cross entropy: label " + std::to_string(labels[t]) + " out of range");
    for (std::size_t v = 0; v < vsize; ++v) q.at(t, v) = smoothing / static_cast<double>(vsize);
    q.at(t, labels[t]) += 1.0 - smoothing;
  }
  Var lsm = tape.log_softmax_rows(logits);
  Var total = tape.sum(tape.mul(lsm, tape.constant(std::move(q))));

  Tensor z({lv.rows(), vsize});
  for (std::size_t t = 0; t < lv.rows(); ++t) {
    double mx = lv.at(t, 0);
    for (std::size_t v = 1; v < vsize; ++v) mx = std::max(mx, lv.at(t, v));
    double denom = 0.0;
    for (std::size_t v = 0; v < vsize; ++v) {
      z.at(t, v) = std::exp(lv.at(t, v) - mx);
      denom += z.at(t, v);
    }
    for (std::size_t v = 0; v < vsize; ++v) z.at(t, v) /= denom;
  }
  return {tape.scale(total, -1.0), std::move(z)};
}

}  // namespace

LossResult smoothed_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels,
                                  double smoothing) {
  auto [s, z] = ce_sum(tape, logits, labels, smoothing);
  return {tape.scale(s, 1.0 / static_cast<double>(labels.size())), std::move(z)};
}

SeqLoss sequence_loss(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                      const std::vector<int>& src, const std::vector<int>& tgt,
                      double smoothing, const DropoutSpec* drop, MaskRng* rng,
                      const StepMasks* step, TraceHooks* hooks) {
  if (tgt.size() < 2) throw Error("sequence_loss: target must contain bos and eos");
  Var memory = encode_source(tape, cfg, pv, src, drop, rng, step, hooks);
  std::vector<int> tgt_in(tgt.begin(), tgt.end() - 1);
  std::vector<int> labels(tgt.begin() + 1, tgt.end());
  Var logits = decode_target(tape, cfg, pv, memory, tgt_in, drop, rng, step, hooks);
  auto [s, z] = ce_sum(tape, logits, labels, smoothing);
  if (hooks) hooks->check_consumed();
  return {s, static_cast<int>(labels.size()), logits};
}

BatchLoss batch_loss(Tape& tape, const ModelConfig& cfg, const ParamVars& pv, const Batch& batch,
                     double smoothing, const DropoutSpec* drop, MaskRng* rng,
                     const StepMasks* step, TraceHooks* hooks) {
  if (batch.size() == 0) throw Error("batch_loss: empty batch");
  Var total;
  int tokens = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<int> src(batch.src[s].begin(), batch.src[s].begin() + batch.src_len[s]);
    std::vector<int> tgt(batch.tgt[s].begin(), batch.tgt[s].begin() + batch.tgt_len[s]);
    SeqLoss sl = sequence_loss(tape, cfg, pv, src, tgt, smoothing, drop, rng, step,
                               s == 0 ? hooks : nullptr);
    total = s == 0 ? sl.loss_sum : tape.add(total, sl.loss_sum);
    tokens += sl.tokens;
  }
  return {tape.scale(total, 1.0 / static_cast<double>(tokens)), tokens};
}

Var classifier_logits(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                      const std::vector<int>& src, const DropoutSpec* drop, MaskRng* rng,
                      const StepMasks* step, TraceHooks* hooks) {
  check_training_args(drop, rng);
  Ctx c{tape, cfg, pv, drop, rng, hooks};
  Var x = encoder_stack(c, src, step);
  // Mean pool over positions.
  Tensor pool({1, static_cast<std::size_t>(src.size())});
  for (auto& v : pool.data()) v = 1.0 / static_cast<double>(src.size());
  Var pooled = tape.matmul(tape.constant(std::move(pool)), x);
  pooled = c.slot("cls.final", pooled);
  pooled = c.feature_dropout(pooled, c.rate(&DropoutSpec::fd4_rate));
  Var logits = tape.add_row(tape.matmul(pooled, c.P("out.w")), c.P("out.b"));
  logits = c.slot("cls.logits", logits);
  if (hooks) hooks->check_consumed();
  return logits;
}

}  // namespace unidrop
