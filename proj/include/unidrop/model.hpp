#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "unidrop/data.hpp"
#include "unidrop/dropout.hpp"
#include "unidrop/rng.hpp"
#include "unidrop/tape.hpp"

namespace unidrop {

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int d_model = 32;
  int d_ff = 64;
  int heads = 4;
  int vocab_size = 0;  // set from the data vocabulary
  int max_len = 64;
  bool share_embeddings = true;
  // Default rate for the residual-path dropout knob (drop.residual).
  double default_residual_dropout = 0.1;
  double ln_eps = 1e-5;

  int d_head() const { return d_model / heads; }
  void validate() const;
};

// Named weight tensors in a fixed order. The order defines both the RNG
// draw sequence at initialization and the checkpoint layout.
class TransformerParams {
 public:
  static TransformerParams init(const ModelConfig& cfg, RngStream& weights_rng);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void add(const std::string& name, Tensor t);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, int> index_;
};

// Parameter leaves registered on one tape, parallel to params.entries().
struct ParamVars {
  const TransformerParams* params = nullptr;
  std::vector<Var> vars;
  Var get(const std::string& name) const;
};

ParamVars register_params(Tape& tape, const TransformerParams& params);

// Activation capture and injection. When capture is set, every named slot
// value reached by the forward pass is copied into `captured`. An entry in
// `injections` replaces the slot's activation with a fresh tape leaf, so
// the loss becomes a function of the injected tensor; the leaf is recorded
// in slot_vars for gradient access after backward().
struct TraceHooks {
  bool capture = false;
  std::map<std::string, Tensor> captured;
  std::map<std::string, Tensor> injections;
  std::map<std::string, Var> slot_vars;
  std::set<std::string> consumed;

  // Throws if any injection name was never reached by the forward pass.
  void check_consumed() const;
};

// Mask RNG streams consumed by a training forward pass.
struct MaskRng {
  RngStream* feature = nullptr;
  RngStream* layer = nullptr;
};

// Per-training-step structure decisions, sampled once and shared across the
// batch: LayerDrop masks per stack plus the whole-encoder drop variant.
struct StepMasks {
  StructureMask enc;
  StructureMask dec;
  bool drop_encoder = false;
};

StepMasks sample_step_masks(const ModelConfig& cfg, const DropoutSpec& spec,
                            RngStream& layer_rng);

Tensor sinusoidal_positions(int len, int d_model);

// Encoder over one unpadded source sequence (bos ... eos ids). Returns the
// memory [src_len, d_model]. Pass drop = nullptr for the dropout-free path
// (evaluation); no dropout code runs at all in that case.
Var encode_source(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                  const std::vector<int>& src, const DropoutSpec* drop, MaskRng* rng,
                  const StepMasks* step, TraceHooks* hooks);

// Decoder over one teacher-forced target prefix; memory from encode_source.
// Returns logits [tgt_in.size(), vocab].
Var decode_target(Tape& tape, const ModelConfig& cfg, const ParamVars& pv, Var memory,
                  const std::vector<int>& tgt_in, const DropoutSpec* drop, MaskRng* rng,
                  const StepMasks* step, TraceHooks* hooks);

// Label-smoothed cross entropy, averaged over rows of `logits`.
// Returns the loss and the predicted probability matrix z (one row per
// position) for probe use.
struct LossResult {
  Var loss;
  Tensor z;
};
LossResult smoothed_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels,
                                  double smoothing);

// Full pass over one source/target pair (both with bos ... eos).
struct SeqLoss {
  Var loss_sum;  // summed over target positions (not averaged)
  int tokens = 0;
  Var logits;
};
SeqLoss sequence_loss(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                      const std::vector<int>& src, const std::vector<int>& tgt,
                      double smoothing, const DropoutSpec* drop, MaskRng* rng,
                      const StepMasks* step, TraceHooks* hooks);

// Mean smoothed CE over all non-pad target tokens of a batch. Trace hooks,
// when given, apply to the first sequence of the batch only.
struct BatchLoss {
  Var loss;
  int tokens = 0;
};
BatchLoss batch_loss(Tape& tape, const ModelConfig& cfg, const ParamVars& pv, const Batch& batch,
                     double smoothing, const DropoutSpec* drop, MaskRng* rng,
                     const StepMasks* step, TraceHooks* hooks);

// Encoder-only classification head: mean-pooled final encoder features,
// FD-4 before the shared output projection. Returns logits [1, vocab].
Var classifier_logits(Tape& tape, const ModelConfig& cfg, const ParamVars& pv,
                      const std::vector<int>& src, const DropoutSpec* drop, MaskRng* rng,
                      const StepMasks* step, TraceHooks* hooks);

// Binary checkpoint: magic "UDRP", u32 version, config block, named tensors
// (u32 name length, name bytes, u32 rank, u64 dims, little-endian f64
// payload). Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const TransformerParams& params);

struct Checkpoint {
  ModelConfig config;
  TransformerParams params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace unidrop
