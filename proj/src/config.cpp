#include "unidrop/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace unidrop {

const char* kLibraryVersion = "0.1.0";

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.train.dropout.residual_rate = cfg.model.default_residual_dropout;
  return cfg;
}

const std::vector<std::string>& all_config_keys() {
  static const std::vector<std::string> keys = {
      "model.enc_layers", "model.dec_layers", "model.d_model", "model.d_ff", "model.heads",
      "model.max_len", "model.share_embeddings",
      "drop.fd1", "drop.fd2", "drop.fd3", "drop.fd4", "drop.residual", "drop.layerdrop",
      "drop.layerdrop_scope", "drop.qkv_proj", "drop.logits", "drop.encoder_drop",
      "drop.dd_keep", "drop.dd_token",
      "train.epochs", "train.max_steps", "train.batch", "train.lr", "train.warmup",
      "train.beta1", "train.beta2", "train.eps", "train.wd", "train.smoothing", "train.clip",
      "train.seed", "train.eval_interval", "train.patience",
      "data.task", "data.pairs", "data.vocab", "data.minlen", "data.maxlen", "data.noise",
      "data.seed", "data.path",
      "eval.beam", "eval.lenpen"};
  return keys;
}

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

LayerDropScope scope_from_string(const std::string& v) {
  if (v == "decoder") return LayerDropScope::decoder_only;
  if (v == "encoder") return LayerDropScope::encoder_only;
  if (v == "both") return LayerDropScope::both;
  if (v == "none") return LayerDropScope::none;
  throw ConfigError("config: drop.layerdrop_scope expects decoder|encoder|both|none, got '" + v +
                    "'");
}

std::string scope_to_string(LayerDropScope s) {
  switch (s) {
    case LayerDropScope::decoder_only: return "decoder";
    case LayerDropScope::encoder_only: return "encoder";
    case LayerDropScope::both: return "both";
    case LayerDropScope::none: return "none";
  }
  return "?";
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string nearest_config_key(const std::string& key) {
  const auto& keys = all_config_keys();
  std::string best = keys.front();
  std::size_t best_d = edit_distance(key, best);
  for (const auto& k : keys) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  DropoutSpec& d = cfg.train.dropout;
  if (key == "model.enc_layers") cfg.model.enc_layers = static_cast<int>(to_long(key, value));
  else if (key == "model.dec_layers") cfg.model.dec_layers = static_cast<int>(to_long(key, value));
  else if (key == "model.d_model") cfg.model.d_model = static_cast<int>(to_long(key, value));
  else if (key == "model.d_ff") cfg.model.d_ff = static_cast<int>(to_long(key, value));
  else if (key == "model.heads") cfg.model.heads = static_cast<int>(to_long(key, value));
  else if (key == "model.max_len") cfg.model.max_len = static_cast<int>(to_long(key, value));
  else if (key == "model.share_embeddings") cfg.model.share_embeddings = to_bool(key, value);
  else if (key == "drop.fd1") d.fd1_rate = to_double(key, value);
  else if (key == "drop.fd2") d.fd2_rate = to_double(key, value);
  else if (key == "drop.fd3") d.fd3_rate = to_double(key, value);
  else if (key == "drop.fd4") d.fd4_rate = to_double(key, value);
  else if (key == "drop.residual") d.residual_rate = to_double(key, value);
  else if (key == "drop.layerdrop") d.layerdrop_rate = to_double(key, value);
  else if (key == "drop.layerdrop_scope") d.layerdrop_scope = scope_from_string(value);
  else if (key == "drop.qkv_proj") d.qkv_proj_rate = to_double(key, value);
  else if (key == "drop.logits") d.logits_drop_rate = to_double(key, value);
  else if (key == "drop.encoder_drop") d.encoder_drop_rate = to_double(key, value);
  else if (key == "drop.dd_keep") d.dd_keep_prob = to_double(key, value);
  else if (key == "drop.dd_token") d.dd_token_prob = to_double(key, value);
  else if (key == "train.epochs") cfg.train.max_epochs = static_cast<int>(to_long(key, value));
  else if (key == "train.max_steps") cfg.train.max_steps = static_cast<int>(to_long(key, value));
  else if (key == "train.batch") cfg.train.batch_size = static_cast<int>(to_long(key, value));
  else if (key == "train.lr") cfg.train.peak_lr = to_double(key, value);
  else if (key == "train.warmup") cfg.train.warmup_steps = static_cast<int>(to_long(key, value));
  else if (key == "train.beta1") cfg.train.beta1 = to_double(key, value);
  else if (key == "train.beta2") cfg.train.beta2 = to_double(key, value);
  else if (key == "train.eps") cfg.train.adam_eps = to_double(key, value);
  else if (key == "train.wd") cfg.train.weight_decay = to_double(key, value);
  else if (key == "train.smoothing") cfg.train.label_smoothing = to_double(key, value);
  else if (key == "train.clip") cfg.train.clip_norm = to_double(key, value);
  else if (key == "train.seed") cfg.train.seed = static_cast<std::uint64_t>(to_long(key, value));
  else if (key == "train.eval_interval")
    cfg.train.eval_interval = static_cast<int>(to_long(key, value));
  else if (key == "train.patience") cfg.train.patience = static_cast<int>(to_long(key, value));
  else if (key == "data.task") cfg.task.kind = task_kind_from_string(value);
  else if (key == "data.pairs") cfg.task.pairs = static_cast<int>(to_long(key, value));
  else if (key == "data.vocab") cfg.task.vocab_size = static_cast<int>(to_long(key, value));
  else if (key == "data.minlen") cfg.task.min_len = static_cast<int>(to_long(key, value));
  else if (key == "data.maxlen") cfg.task.max_len = static_cast<int>(to_long(key, value));
  else if (key == "data.noise") cfg.task.noise_rate = to_double(key, value);
  else if (key == "data.seed") cfg.task.seed = static_cast<std::uint64_t>(to_long(key, value));
  else if (key == "data.path") cfg.data_path = value;
  else if (key == "eval.beam") cfg.eval.beam_width = static_cast<int>(to_long(key, value));
  else if (key == "eval.lenpen") cfg.eval.length_penalty = to_double(key, value);
  else
    throw ConfigError("config: unknown key '" + key + "' (nearest valid key: '" +
                      nearest_config_key(key) + "')");
}

namespace {

void apply_assignment(RunConfig& cfg, const std::string& stmt, const std::string& where) {
  const auto eq = stmt.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: " + where + " is not a 'key = value' assignment: '" + stmt + "'");
  const std::string key = trim(stmt.substr(0, eq));
  const std::string value = trim(stmt.substr(eq + 1));
  if (key.empty()) throw ConfigError("config: empty key in " + where);
  apply_config_value(cfg, key, value);
}

RunConfig load_from_manifest_json(const std::string& path) {
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config: cannot parse JSON manifest '" + path + "': " + e.what());
  }
  if (!j.contains("config") || !j["config"].is_object())
    throw ConfigError("config: manifest '" + path + "' has no config object");
  RunConfig cfg = default_run_config();
  for (const auto& [key, value] : j["config"].items())
    apply_config_value(cfg, key, value.get<std::string>());
  return cfg;
}

}  // namespace

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  // A manifest is accepted anywhere a config is: detect by leading '{'.
  char first = 0;
  in >> std::ws;
  first = static_cast<char>(in.peek());
  if (first == '{') {
    in.close();
    return load_from_manifest_json(path);
  }
  in.clear();
  in.seekg(0);

  RunConfig cfg = default_run_config();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    apply_assignment(cfg, line, "line " + std::to_string(line_no) + " of '" + path + "'");
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) apply_assignment(cfg, o, "override '" + o + "'");
}

std::string serialize_config(const RunConfig& cfg) {
  const DropoutSpec& d = cfg.train.dropout;
  std::ostringstream os;
  os << "model.enc_layers = " << cfg.model.enc_layers << "\n"
     << "model.dec_layers = " << cfg.model.dec_layers << "\n"
     << "model.d_model = " << cfg.model.d_model << "\n"
     << "model.d_ff = " << cfg.model.d_ff << "\n"
     << "model.heads = " << cfg.model.heads << "\n"
     << "model.max_len = " << cfg.model.max_len << "\n"
     << "model.share_embeddings = " << (cfg.model.share_embeddings ? "true" : "false") << "\n"
     << "drop.fd1 = " << format_double(d.fd1_rate) << "\n"
     << "drop.fd2 = " << format_double(d.fd2_rate) << "\n"
     << "drop.fd3 = " << format_double(d.fd3_rate) << "\n"
     << "drop.fd4 = " << format_double(d.fd4_rate) << "\n"
     << "drop.residual = " << format_double(d.residual_rate) << "\n"
     << "drop.layerdrop = " << format_double(d.layerdrop_rate) << "\n"
     << "drop.layerdrop_scope = " << scope_to_string(d.layerdrop_scope) << "\n"
     << "drop.qkv_proj = " << format_double(d.qkv_proj_rate) << "\n"
     << "drop.logits = " << format_double(d.logits_drop_rate) << "\n"
     << "drop.encoder_drop = " << format_double(d.encoder_drop_rate) << "\n"
     << "drop.dd_keep = " << format_double(d.dd_keep_prob) << "\n"
     << "drop.dd_token = " << format_double(d.dd_token_prob) << "\n"
     << "train.epochs = " << cfg.train.max_epochs << "\n"
     << "train.max_steps = " << cfg.train.max_steps << "\n"
     << "train.batch = " << cfg.train.batch_size << "\n"
     << "train.lr = " << format_double(cfg.train.peak_lr) << "\n"
     << "train.warmup = " << cfg.train.warmup_steps << "\n"
     << "train.beta1 = " << format_double(cfg.train.beta1) << "\n"
     << "train.beta2 = " << format_double(cfg.train.beta2) << "\n"
     << "train.eps = " << format_double(cfg.train.adam_eps) << "\n"
     << "train.wd = " << format_double(cfg.train.weight_decay) << "\n"
     << "train.smoothing = " << format_double(cfg.train.label_smoothing) << "\n"
     << "train.clip = " << format_double(cfg.train.clip_norm) << "\n"
     << "train.seed = " << cfg.train.seed << "\n"
     << "train.eval_interval = " << cfg.train.eval_interval << "\n"
     << "train.patience = " << cfg.train.patience << "\n"
     << "data.task = " << to_string(cfg.task.kind) << "\n"
     << "data.pairs = " << cfg.task.pairs << "\n"
     << "data.vocab = " << cfg.task.vocab_size << "\n"
     << "data.minlen = " << cfg.task.min_len << "\n"
     << "data.maxlen = " << cfg.task.max_len << "\n"
     << "data.noise = " << format_double(cfg.task.noise_rate) << "\n"
     << "data.seed = " << cfg.task.seed << "\n"
     << "data.path = " << cfg.data_path << "\n"
     << "eval.beam = " << cfg.eval.beam_width << "\n"
     << "eval.lenpen = " << format_double(cfg.eval.length_penalty) << "\n";
  return os.str();
}

SplitCorpora resolve_corpora(const RunConfig& cfg) {
  if (cfg.data_path.empty()) return generate_task(cfg.task);
  Corpus all = load_tsv(cfg.data_path, cfg.model.max_len - 2);
  if (all.empty()) throw DataError("resolve_corpora: '" + cfg.data_path + "' is empty");
  // Deterministic 8/1/1 split by position.
  SplitCorpora out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    switch (i % 10) {
      case 8: out.dev.pairs.push_back(all.pairs[i]); break;
      case 9: out.test.pairs.push_back(all.pairs[i]); break;
      default: out.train.pairs.push_back(all.pairs[i]);
    }
  }
  if (out.dev.empty()) out.dev = out.train;
  if (out.test.empty()) out.test = out.dev;
  return out;
}

std::string manifest_json(const RunConfig& cfg, const std::vector<std::string>& argv_args,
                          const std::string& out_dir, const std::string& start_timestamp,
                          const std::string& end_timestamp) {
  nlohmann::json config_obj = nlohmann::json::object();
  std::istringstream is(serialize_config(cfg));
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    config_obj[key] = value;
  }
  nlohmann::json j{{"library_version", kLibraryVersion},
                   {"seed", cfg.train.seed},
                   {"config", config_obj},
                   {"argv", argv_args},
                   {"output_dir", out_dir},
                   {"started_at", start_timestamp},
                   {"finished_at", end_timestamp},
                   {"outputs", {{"metrics", out_dir + "/metrics.jsonl"},
                                {"best_checkpoint", out_dir + "/best.ckpt"},
                                {"final_checkpoint", out_dir + "/final.ckpt"},
                                {"resolved_config", out_dir + "/resolved.cfg"}}}};
  return j.dump(2);
}

}  // namespace unidrop
