#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "unidrop/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace unidrop {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'R', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

std::uint64_t read_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

std::string config_block(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "enc_layers = " << cfg.enc_layers << "\n"
     << "dec_layers = " << cfg.dec_layers << "\n"
     << "d_model = " << cfg.d_model << "\n"
     << "d_ff = " << cfg.d_ff << "\n"
     << "heads = " << cfg.heads << "\n"
     << "vocab_size = " << cfg.vocab_size << "\n"
     << "max_len = " << cfg.max_len << "\n"
     << "share_embeddings = " << (cfg.share_embeddings ? 1 : 0) << "\n";
  return os.str();
}

ModelConfig parse_config_block(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    const long val = std::stol(line.substr(eq + 1));
    if (key == "enc_layers") cfg.enc_layers = static_cast<int>(val);
    else if (key == "dec_layers") cfg.dec_layers = static_cast<int>(val);
    else if (key == "d_model") cfg.d_model = static_cast<int>(val);
    else if (key == "d_ff") cfg.d_ff = static_cast<int>(val);
    else if (key == "heads") cfg.heads = static_cast<int>(val);
    else if (key == "vocab_size") cfg.vocab_size = static_cast<int>(val);
    else if (key == "max_len") cfg.max_len = static_cast<int>(val);
    else if (key == "share_embeddings") cfg.share_embeddings = val != 0;
    else throw Error("checkpoint: unknown config key '" + key + "'");
  }
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const TransformerParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  const std::string cfg_text = config_block(cfg);
  write_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
  out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  write_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, t] : params.entries()) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("checkpoint: write failure on '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw Error("checkpoint: '" + path + "' is not a UDRP checkpoint");
  const std::uint32_t version = read_u32(in, "version");
  if (version != kVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t cfg_len = read_u32(in, "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len)) throw Error("checkpoint: truncated config block");

  Checkpoint ck;
  ck.config = parse_config_block(cfg_text);
  const std::uint32_t n = read_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t name_len = read_u32(in, "tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error("checkpoint: truncated tensor name");
    const std::uint32_t rank = read_u32(in, "tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_u64(in, "tensor dim"));
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw Error("checkpoint: truncated payload for tensor '" + name + "'");
    ck.params.add(name, std::move(t));
  }
  return ck;
}

}  // namespace unidrop
