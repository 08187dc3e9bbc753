#pragma once

#include <string>
#include <vector>

#include "unidrop/data.hpp"
#include "unidrop/model.hpp"
#include "unidrop/search.hpp"
#include "unidrop/trainer.hpp"

namespace unidrop {

struct ConfigError : Error {
  using Error::Error;
};

// Everything a run needs, materialized with defaults. Serialized as a flat
// `key = value` file, one assignment per line, `#` comments. The key set is
// closed: unknown keys are fatal and the error names the nearest valid key.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskSpec task;
  std::string data_path;  // nonempty: load TSV pairs instead of generating
  DecodeParams eval;

  // Data-dropout rates live in train.dropout; model.default_residual_dropout
  // seeds train.dropout.residual_rate unless drop.residual is set.
};

RunConfig default_run_config();

const std::vector<std::string>& all_config_keys();

// Closest valid key by edit distance, for error messages.
std::string nearest_config_key(const std::string& key);

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses a flat config file. Also accepts a run manifest (JSON whose
// "config" object holds the same keys), so a manifest reproduces its run.
RunConfig load_config_file(const std::string& path);

// Applies `key=value` override strings on top of a config.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// Canonical flat serialization with every key materialized.
std::string serialize_config(const RunConfig& cfg);

// Runs corpora resolution: synthetic task generation or TSV loading (TSV
// corpora are split 8/1/1 deterministically).
SplitCorpora resolve_corpora(const RunConfig& cfg);

// Run manifest: resolved config, seed, library version, timestamps, output
// paths. Written before training starts.
std::string manifest_json(const RunConfig& cfg, const std::vector<std::string>& argv_args,
                          const std::string& out_dir, const std::string& start_timestamp,
                          const std::string& end_timestamp = "");

extern const char* kLibraryVersion;

}  // namespace unidrop
