#include "unidrop/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "unidrop/metrics.hpp"

namespace unidrop {

void TrainConfig::validate() const {
  if (max_epochs < 1 && max_steps < 1) throw Error("train config: no epoch or step budget");
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (warmup_steps < 1) throw Error("train config: warmup_steps must be >= 1");
  if (peak_lr <= 0.0) throw Error("train config: peak_lr must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw Error("train config: label_smoothing outside [0,1)");
  dropout.validate();
}

double lr_at_step(double peak_lr, int warmup_steps, int step) {
  const double s = std::max(1, step);
  const double w = warmup_steps;
  return peak_lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

std::string metrics_jsonl_line(const MetricsRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},         {"step", r.step},
                   {"train_loss", r.train_loss}, {"dev_loss", r.dev_loss},
                   {"dev_metric", r.dev_metric}, {"lr", r.lr}};
  return j.dump();
}

AdamOptimizer::AdamOptimizer(const TrainConfig& cfg, const TransformerParams& params)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {
  m_.reserve(params.entries().size());
  v_.reserve(params.entries().size());
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.shape());
    v_.emplace_back(t.shape());
  }
}

void AdamOptimizer::step(TransformerParams& params, const std::vector<Tensor>& grads, double lr) {
  auto& entries = params.entries();
  if (grads.size() != entries.size())
    throw Error("adam: gradient count " + std::to_string(grads.size()) + " vs parameter count " +
                std::to_string(entries.size()));
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& w = entries[i].second;
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      if (weight_decay_ > 0.0) w[j] -= lr * weight_decay_ * w[j];
    }
  }
}

double clip_gradients(std::vector<Tensor>& grads, double clip) {
  double sq = 0.0;
  for (const auto& g : grads) sq += dot(g, g);
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double s = clip / norm;
    for (auto& g : grads)
      for (auto& x : g.data()) x *= s;
  }
  return norm;
}

namespace {

struct MaskStreams {
  RngStream feature;
  RngStream layer;
  RngStream data;
  RngStream shuffle;

  explicit MaskStreams(std::uint64_t seed)
      : feature(seed, "feature-masks"),
        layer(seed, "layer-masks"),
        data(seed, "data-masks"),
        shuffle(seed, "data-shuffle") {}
};

std::vector<Tensor> collect_gradients(Tape& tape, const ParamVars& pv) {
  std::vector<Tensor> grads;
  grads.reserve(pv.vars.size());
  for (Var v : pv.vars) grads.push_back(tape.adjoint(v));
  return grads;
}

bool data_dropout_active(const DropoutSpec& s) {
  return s.dd_keep_prob < 1.0 && s.dd_token_prob > 0.0;
}

}  // namespace

double corpus_loss(const ModelConfig& cfg, const TransformerParams& params, const Corpus& corpus,
                   const Vocabulary& vocab, double smoothing) {
  if (corpus.empty()) throw Error("corpus_loss: empty corpus");
  double total = 0.0;
  long tokens = 0;
  for (const auto& pair : corpus.pairs) {
    Tape tape;
    ParamVars pv = register_params(tape, params);
    std::vector<int> src{Vocabulary::bos_id};
    for (int id : vocab.tokenize(pair.src)) src.push_back(id);
    src.push_back(Vocabulary::eos_id);
    std::vector<int> tgt{Vocabulary::bos_id};
    for (int id : vocab.tokenize(pair.tgt)) tgt.push_back(id);
    tgt.push_back(Vocabulary::eos_id);
    SeqLoss sl =
        sequence_loss(tape, cfg, pv, src, tgt, smoothing, nullptr, nullptr, nullptr, nullptr);
    total += tape.value(sl.loss_sum).item();
    tokens += sl.tokens;
  }
  return total / static_cast<double>(tokens);
}

double corpus_token_accuracy(const ModelConfig& cfg, const TransformerParams& params,
                             const Corpus& corpus, const Vocabulary& vocab) {
  long hits = 0, total = 0;
  for (const auto& pair : corpus.pairs) {
    Tape tape;
    ParamVars pv = register_params(tape, params);
    std::vector<int> src{Vocabulary::bos_id};
    for (int id : vocab.tokenize(pair.src)) src.push_back(id);
    src.push_back(Vocabulary::eos_id);
    std::vector<int> tgt{Vocabulary::bos_id};
    for (int id : vocab.tokenize(pair.tgt)) tgt.push_back(id);
    tgt.push_back(Vocabulary::eos_id);

    Var memory = encode_source(tape, cfg, pv, src, nullptr, nullptr, nullptr, nullptr);
    std::vector<int> tgt_in(tgt.begin(), tgt.end() - 1);
    Var logits = decode_target(tape, cfg, pv, memory, tgt_in, nullptr, nullptr, nullptr, nullptr);
    const Tensor& lv = tape.value(logits);
    for (std::size_t t = 0; t < lv.rows(); ++t) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < lv.cols(); ++j)
        if (lv.at(t, j) > lv.at(t, best)) best = j;
      if (static_cast<int>(best) == tgt[t + 1]) ++hits;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const SplitCorpora& corpora, const Vocabulary& vocab, std::ostream* progress,
                  const std::string& metrics_path) {
  cfg.validate();
  model_cfg.validate();
  if (corpora.train.empty()) throw Error("train: empty training corpus");
  if (corpora.dev.empty()) throw Error("train: empty dev corpus");

  RngStream weights_rng(cfg.seed, "weights");
  TransformerParams params = TransformerParams::init(model_cfg, weights_rng);
  AdamOptimizer opt(cfg, params);
  MaskStreams streams(cfg.seed);
  MaskRng mask_rng{&streams.feature, &streams.layer};
  const DropoutSpec* drop = cfg.dropout_free_path ? nullptr : &cfg.dropout;

  std::ofstream metrics_file;
  if (!metrics_path.empty()) {
    metrics_file.open(metrics_path);
    if (!metrics_file) throw Error("train: cannot open metrics file '" + metrics_path + "'");
  }

  TrainResult result;
  result.best_dev_loss = HUGE_VAL;
  const auto t0 = std::chrono::steady_clock::now();
  int step = 0;
  int evals_since_best = 0;
  double interval_loss_sum = 0.0;
  long interval_batches = 0;
  bool stop = false;

  auto run_eval = [&](int epoch) {
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.train_loss = interval_batches > 0 ? interval_loss_sum / interval_batches : 0.0;
    rec.dev_loss = corpus_loss(model_cfg, params, corpora.dev, vocab, cfg.label_smoothing);
    rec.dev_metric = corpus_token_accuracy(model_cfg, params, corpora.dev, vocab);
    rec.lr = lr_at_step(cfg.peak_lr, cfg.warmup_steps, std::max(step, 1));
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    interval_loss_sum = 0.0;
    interval_batches = 0;
    result.metrics.push_back(rec);
    if (metrics_file) metrics_file << metrics_jsonl_line(rec) << "\n" << std::flush;
    if (progress)
      *progress << "epoch " << rec.epoch << " step " << rec.step << " train_loss "
                << rec.train_loss << " dev_loss " << rec.dev_loss << " dev_acc " << rec.dev_metric
                << " lr " << rec.lr << " wall_s " << rec.wall_seconds << "\n";
    if (rec.dev_loss < result.best_dev_loss) {
      result.best_dev_loss = rec.dev_loss;
      result.best_step = step;
      result.best_params = params;
      evals_since_best = 0;
    } else {
      ++evals_since_best;
    }
    result.final_dev_loss = rec.dev_loss;
    if (cfg.patience > 0 && evals_since_best >= cfg.patience) stop = true;
  };

  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    auto batches = make_batches(corpora.train, vocab, cfg.batch_size, streams.shuffle);
    for (auto& batch : batches) {
      ++step;
      const Batch* view = &batch;
      Batch dropped;
      if (drop && data_dropout_active(*drop)) {
        dropped = train_view_with_data_dropout(batch, *drop, streams.data);
        view = &dropped;
      }
      StepMasks masks = drop ? sample_step_masks(model_cfg, *drop, streams.layer) : StepMasks{};
      const StepMasks* step_masks = drop ? &masks : nullptr;

      Tape tape;
      ParamVars pv = register_params(tape, params);
      BatchLoss bl = batch_loss(tape, model_cfg, pv, *view, cfg.label_smoothing, drop,
                                drop ? &mask_rng : nullptr, step_masks, nullptr);
      const double loss_value = tape.value(bl.loss).item();
      const double lr = lr_at_step(cfg.peak_lr, cfg.warmup_steps, step);
      if (!std::isfinite(loss_value)) {
        std::ostringstream os;
        os << "train: non-finite loss at step " << step << " (lr " << lr << ")";
        throw TrainAbort(os.str());
      }
      tape.backward(bl.loss);
      std::vector<Tensor> grads = collect_gradients(tape, pv);
      const double grad_norm = clip_gradients(grads, cfg.clip_norm);
      if (!std::isfinite(grad_norm)) {
        std::ostringstream os;
        os << "train: non-finite gradient at step " << step << " (lr " << lr << ", grad norm "
           << grad_norm << ")";
        throw TrainAbort(os.str());
      }
      opt.step(params, grads, lr);
      interval_loss_sum += loss_value;
      ++interval_batches;

      if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) run_eval(epoch);
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
      if (stop) break;
    }
    if (!stop && cfg.eval_interval == 0) run_eval(epoch);
  }

  if (result.metrics.empty()) run_eval(cfg.max_epochs);
  result.final_params = params;
  if (!std::isfinite(result.best_dev_loss)) {
    result.best_params = params;
    result.best_dev_loss = result.final_dev_loss;
  }
  result.steps_run = step;
  return result;
}

EvalReport evaluate(const ModelConfig& cfg, const TransformerParams& params, const Corpus& corpus,
                    const Vocabulary& vocab, const DecodeParams& dp, double smoothing) {
  if (corpus.empty()) throw Error("evaluate: empty corpus");
  std::vector<TokenSeq> cands, refs;
  cands.reserve(corpus.size());
  refs.reserve(corpus.size());
  for (const auto& pair : corpus.pairs) {
    std::vector<int> src{Vocabulary::bos_id};
    for (int id : vocab.tokenize(pair.src)) src.push_back(id);
    src.push_back(Vocabulary::eos_id);
    std::vector<int> out = dp.beam_width <= 1 ? greedy_decode(cfg, params, src)
                                              : beam_decode(cfg, params, src, dp);
    cands.push_back(vocab.detokenize(out));
    refs.push_back(pair.tgt);
  }
  EvalReport r;
  r.bleu = corpus_bleu(cands, refs).bleu;
  r.exact_match = exact_match(cands, refs);
  r.token_accuracy = token_accuracy(cands, refs);
  r.loss = corpus_loss(cfg, params, corpus, vocab, smoothing);
  r.sentences = corpus.size();
  return r;
}

namespace {

DropoutSpec all_off(const DropoutSpec& base) {
  DropoutSpec s = base;  // residual rate stays: it belongs to the baseline model
  s.fd1_rate = s.fd2_rate = s.fd3_rate = s.fd4_rate = 0.0;
  s.layerdrop_rate = 0.0;
  s.layerdrop_scope = LayerDropScope::none;
  s.qkv_proj_rate = s.logits_drop_rate = s.encoder_drop_rate = 0.0;
  s.dd_keep_prob = 1.0;
  s.dd_token_prob = 0.0;
  return s;
}

}  // namespace

const std::vector<std::string>& ablation_row_names() {
  static const std::vector<std::string> names = {
      "baseline", "fd", "sd", "dd", "unidrop", "wo_fd", "wo_sd", "wo_dd",
      "wo_fd1",   "wo_fd2", "wo_fd3", "wo_fd4", "plain_dd"};
  return names;
}

std::vector<AblationRow> ablate(const ModelConfig& model_cfg, const TrainConfig& base,
                                const SplitCorpora& corpora, const Vocabulary& vocab,
                                std::ostream* progress) {
  const DropoutSpec& full = base.dropout;
  if (full.fd1_rate <= 0.0 || full.fd2_rate <= 0.0 || full.fd3_rate <= 0.0 ||
      full.fd4_rate <= 0.0)
    throw Error("ablate: base config must have all feature dropouts active");
  if (full.layerdrop_rate <= 0.0 || full.layerdrop_scope == LayerDropScope::none)
    throw Error("ablate: base config must have LayerDrop active");
  if (!data_dropout_active(full)) throw Error("ablate: base config must have data dropout active");

  auto variant = [&](const std::string& name) {
    DropoutSpec s;
    const DropoutSpec off = all_off(full);
    if (name == "baseline") s = off;
    else if (name == "fd") {
      s = off;
      s.fd1_rate = full.fd1_rate;
      s.fd2_rate = full.fd2_rate;
      s.fd3_rate = full.fd3_rate;
      s.fd4_rate = full.fd4_rate;
    } else if (name == "sd") {
      s = off;
      s.layerdrop_rate = full.layerdrop_rate;
      s.layerdrop_scope = full.layerdrop_scope;
    } else if (name == "dd") {
      s = off;
      s.dd_keep_prob = full.dd_keep_prob;
      s.dd_token_prob = full.dd_token_prob;
    } else if (name == "unidrop") s = full;
    else if (name == "wo_fd") {
      s = full;
      s.fd1_rate = s.fd2_rate = s.fd3_rate = s.fd4_rate = 0.0;
    } else if (name == "wo_sd") {
      s = full;
      s.layerdrop_rate = 0.0;
      s.layerdrop_scope = LayerDropScope::none;
    } else if (name == "wo_dd") {
      s = full;
      s.dd_keep_prob = 1.0;
      s.dd_token_prob = 0.0;
    } else if (name == "wo_fd1") { s = full; s.fd1_rate = 0.0; }
    else if (name == "wo_fd2") { s = full; s.fd2_rate = 0.0; }
    else if (name == "wo_fd3") { s = full; s.fd3_rate = 0.0; }
    else if (name == "wo_fd4") { s = full; s.fd4_rate = 0.0; }
    else if (name == "plain_dd") {
      // Conventional data dropout: no verbatim stage.
      s = full;
      s.dd_keep_prob = 0.0;
    } else throw Error("ablate: unknown variant '" + name + "'");
    return s;
  };

  std::vector<AblationRow> rows;
  for (const auto& name : ablation_row_names()) {
    TrainConfig cfg = base;
    cfg.dropout = variant(name);
    if (progress) *progress << "ablate: training variant '" << name << "'\n";
    TrainResult tr = train(model_cfg, cfg, corpora, vocab, nullptr, "");
    AblationRow row;
    row.name = name;
    row.best_dev_loss = tr.best_dev_loss;
    row.final_dev_loss = tr.final_dev_loss;
    row.dev_metric =
        evaluate(model_cfg, tr.best_params, corpora.dev, vocab, DecodeParams{1, 1.0},
                 cfg.label_smoothing)
            .bleu;
    rows.push_back(row);
    if (progress)
      *progress << "ablate: '" << name << "' dev BLEU " << row.dev_metric << " best dev loss "
                << row.best_dev_loss << "\n";
  }
  return rows;
}

std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,dev_metric,best_dev_loss,final_dev_loss\n";
  for (const auto& r : rows)
    os << r.name << "," << r.dev_metric << "," << r.best_dev_loss << "," << r.final_dev_loss
       << "\n";
  return os.str();
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "fd") return SweepAxis::fd;
  if (s == "sd") return SweepAxis::sd;
  if (s == "dd") return SweepAxis::dd;
  throw Error("sweep: unknown axis '" + s + "' (expected fd, sd, or dd)");
}

std::vector<SweepPoint> sweep(const ModelConfig& model_cfg, const TrainConfig& base,
                              SweepAxis axis, const std::vector<double>& values,
                              const SplitCorpora& corpora, const Vocabulary& vocab,
                              const std::string& out_dir, std::ostream* progress) {
  std::vector<SweepPoint> points;
  const char* axis_name = axis == SweepAxis::fd ? "fd" : axis == SweepAxis::sd ? "sd" : "dd";
  for (double v : values) {
    TrainConfig cfg = base;
    switch (axis) {
      case SweepAxis::fd:
        cfg.dropout.fd1_rate = cfg.dropout.fd2_rate = v;
        cfg.dropout.fd3_rate = cfg.dropout.fd4_rate = v;
        break;
      case SweepAxis::sd:
        cfg.dropout.layerdrop_rate = v;
        if (v == 0.0) cfg.dropout.layerdrop_scope = LayerDropScope::none;
        break;
      case SweepAxis::dd:
        cfg.dropout.dd_token_prob = v;
        if (v == 0.0) cfg.dropout.dd_keep_prob = 1.0;
        break;
    }
    SweepPoint p;
    p.value = v;
    if (!out_dir.empty()) {
      std::ostringstream name;
      name << out_dir << "/sweep_" << axis_name << "_" << v << ".metrics.jsonl";
      p.metrics_path = name.str();
    }
    if (progress) *progress << "sweep: " << axis_name << " = " << v << "\n";
    TrainResult tr = train(model_cfg, cfg, corpora, vocab, nullptr, p.metrics_path);
    p.best_dev_loss = tr.best_dev_loss;
    p.dev_metric = evaluate(model_cfg, tr.best_params, corpora.dev, vocab, DecodeParams{1, 1.0},
                            cfg.label_smoothing)
                       .bleu;
    p.test_metric = evaluate(model_cfg, tr.best_params, corpora.test, vocab, DecodeParams{1, 1.0},
                             cfg.label_smoothing)
                        .bleu;
    points.push_back(std::move(p));
  }
  return points;
}

std::string sweep_table_csv(SweepAxis axis, const std::vector<SweepPoint>& points) {
  const char* axis_name = axis == SweepAxis::fd ? "fd" : axis == SweepAxis::sd ? "sd" : "dd";
  std::ostringstream os;
  os << "axis,value,dev_metric,test_metric,best_dev_loss\n";
  for (const auto& p : points)
    os << axis_name << "," << p.value << "," << p.dev_metric << "," << p.test_metric << ","
       << p.best_dev_loss << "\n";
  return os.str();
}

}  // namespace unidrop
