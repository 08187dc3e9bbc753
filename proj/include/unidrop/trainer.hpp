#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "unidrop/data.hpp"
#include "unidrop/model.hpp"
#include "unidrop/search.hpp"

namespace unidrop {

struct TrainConfig {
  int max_epochs = 20;
  int max_steps = 0;  // 0 = no step cap
  int batch_size = 16;
  double peak_lr = 3e-3;
  int warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  double weight_decay = 1e-4;  // decoupled decay, constant across ablations
  double label_smoothing = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
  DropoutSpec dropout;
  int eval_interval = 0;  // in steps; 0 = end of every epoch
  int patience = 0;       // early stop after this many evals without dev improvement; 0 = off

  // Test hook: route the forward pass through the code path with no dropout
  // machinery at all (null spec), instead of a zero-rate spec.
  bool dropout_free_path = false;

  void validate() const;
};

// One record per eval interval. wall_seconds is for live progress output
// only; it is deliberately kept out of the metrics JSONL so identical seeds
// and configs produce byte-identical files.
struct MetricsRecord {
  int epoch = 0;
  int step = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_metric = 0.0;  // teacher-forced token accuracy
  double lr = 0.0;
  double wall_seconds = 0.0;
};

std::string metrics_jsonl_line(const MetricsRecord& r);

// Inverse-sqrt schedule with warmup, normalized so lr(warmup) = peak:
// lr(step) = peak * sqrt(warmup) * min(step^-1/2, step * warmup^-3/2).
double lr_at_step(double peak_lr, int warmup_steps, int step);

// Adam with decoupled weight decay over a parameter set.
class AdamOptimizer {
 public:
  AdamOptimizer(const TrainConfig& cfg, const TransformerParams& params);

  // grads run parallel to params.entries(). lr is the step's learning rate.
  void step(TransformerParams& params, const std::vector<Tensor>& grads, double lr);

  int steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Scales grads in place so the global norm is at most clip; returns the
// pre-clip global norm.
double clip_gradients(std::vector<Tensor>& grads, double clip);

struct TrainResult {
  TransformerParams final_params;
  TransformerParams best_params;
  double best_dev_loss = 0.0;
  int best_step = 0;
  double final_dev_loss = 0.0;
  std::vector<MetricsRecord> metrics;
  int steps_run = 0;
};

struct TrainAbort : Error {
  using Error::Error;
};

// Full training loop: per step a data-dropout view of the batch, forward
// under the DropoutSpec, smoothed CE, backward, clip, Adam; per interval a
// dropout-free dev pass. Dev evaluation consumes no mask RNG. The best-dev
// parameter snapshot is retained. Throws TrainAbort on non-finite loss with
// step/lr/grad-norm diagnostics.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const SplitCorpora& corpora, const Vocabulary& vocab,
                  std::ostream* progress = nullptr, const std::string& metrics_path = "");

// Mean smoothed CE over all target tokens, dropout-free.
double corpus_loss(const ModelConfig& cfg, const TransformerParams& params, const Corpus& corpus,
                   const Vocabulary& vocab, double smoothing);

// Teacher-forced argmax accuracy over target tokens, dropout-free.
double corpus_token_accuracy(const ModelConfig& cfg, const TransformerParams& params,
                             const Corpus& corpus, const Vocabulary& vocab);

struct EvalReport {
  double bleu = 0.0;
  double exact_match = 0.0;
  double token_accuracy = 0.0;
  double loss = 0.0;
  std::size_t sentences = 0;
};

// Decodes the corpus (greedy or beam per DecodeParams.beam_width) and
// scores corpus BLEU-4, exact match and token accuracy.
EvalReport evaluate(const ModelConfig& cfg, const TransformerParams& params, const Corpus& corpus,
                    const Vocabulary& vocab, const DecodeParams& dp, double smoothing);

struct AblationRow {
  std::string name;
  double dev_metric = 0.0;  // greedy dev BLEU of the best checkpoint
  double best_dev_loss = 0.0;
  double final_dev_loss = 0.0;
};

// Trains the Table-1-style block (baseline, each single dropout, full, each
// leave-one-out) and the position-ablation block (w/o FD-1..4, plain data
// dropout) under shared seeds. The base config must have every UniDrop
// component active.
std::vector<AblationRow> ablate(const ModelConfig& model_cfg, const TrainConfig& base,
                                const SplitCorpora& corpora, const Vocabulary& vocab,
                                std::ostream* progress = nullptr);

// Row names emitted by ablate(), in order: the 8-row main block then the
// 5 extra position-ablation rows (the full model row is shared).
const std::vector<std::string>& ablation_row_names();

std::string ablation_table_csv(const std::vector<AblationRow>& rows);

enum class SweepAxis { fd, sd, dd };
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepPoint {
  double value = 0.0;
  double dev_metric = 0.0;
  double test_metric = 0.0;
  double best_dev_loss = 0.0;
  std::string metrics_path;
};

// One full run per value, all other rates held at the base config. When
// out_dir is nonempty each run writes its own metrics JSONL there.
std::vector<SweepPoint> sweep(const ModelConfig& model_cfg, const TrainConfig& base,
                              SweepAxis axis, const std::vector<double>& values,
                              const SplitCorpora& corpora, const Vocabulary& vocab,
                              const std::string& out_dir = "", std::ostream* progress = nullptr);

std::string sweep_table_csv(SweepAxis axis, const std::vector<SweepPoint>& points);

}  // namespace unidrop
