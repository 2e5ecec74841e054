#include "maskreid/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace maskreid {

namespace {

// name, type tag, member expression
#define MASKREID_CONFIG_FIELDS(X)                          \
  X("image_height", Int, encoder.height)                   \
  X("image_width", Int, encoder.width)                     \
  X("patch", Int, encoder.patch)                           \
  X("stride", Int, encoder.stride)                         \
  X("dim", Int, encoder.dim)                               \
  X("layers", Int, encoder.layers)                         \
  X("heads", Int, encoder.heads)                           \
  X("mlp_hidden", Int, encoder.mlp_hidden)                 \
  X("jigsaw_groups", Int, encoder.jigsaw_groups)           \
  X("jigsaw_shift", Int, encoder.jigsaw_shift)             \
  X("sie_coefficient", Double, encoder.sie_coefficient)    \
  X("n_cameras", Int, encoder.n_cameras)                   \
  X("learn_patch_projection", Bool, encoder.learn_patch_projection) \
  X("proj_hidden", Int, heads.proj_hidden)                 \
  X("proj_out", Int, heads.proj_out)                       \
  X("pred_hidden", Int, heads.pred_hidden)                 \
  X("bn_eps", Double, heads.bn_eps)                        \
  X("bn_momentum", Double, heads.bn_momentum)              \
  X("epochs", Int, epochs)                                 \
  X("batch_p", Int, batch_p)                               \
  X("batch_k", Int, batch_k)                               \
  X("base_lr", Double, base_lr)                            \
  X("min_lr", Double, min_lr)                              \
  X("momentum", Double, momentum)                          \
  X("weight_decay", Double, weight_decay)                  \
  X("warmup_epochs", Int, warmup_epochs)                   \
  X("lambda", Double, lambda)                              \
  X("seed", Seed, seed)                                    \
  X("mask_ratio", Double, mask_ratio)                      \
  X("mask_max_h", Int, mask_max_h)                         \
  X("mask_max_w", Int, mask_max_w)                         \
  X("crop_pad", Int, crop_pad)                             \
  X("flip_p", Double, flip_p)                              \
  X("erase_p", Double, erase_p)                            \
  X("jitter_p", Double, jitter_p)                          \
  X("blur_p", Double, blur_p)                              \
  X("solarize_p", Double, solarize_p)                      \
  X("strong_branch", Bool, strong_branch)                  \
  X("mine_per_stream", Bool, mine_per_stream)              \
  X("eval_concat_local", Bool, eval_concat_local)          \
  X("checkpoint_interval", Int, checkpoint_interval)

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const int out = std::stoi(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad integer for " + key);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad number for " + key);
  return out;
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const std::uint64_t out = std::stoull(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad seed for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + " (use true/false)");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_key_value(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("config: expected key=value at line " +
                                  std::to_string(lineno));
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto kend = key.find_last_not_of(" \t");
    key = key.substr(0, kend + 1);
    const auto vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    if (!out.emplace(key, value).second)
      throw std::invalid_argument("config: duplicate key " + key);
  }
  return out;
}

std::map<std::string, std::string> parse_key_value_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  return parse_key_value(f);
}

void apply_config_entries(TrainConfig& cfg,
                          const std::map<std::string, std::string>& entries) {
  for (const auto& [key, value] : entries) {
    if (false) {
    }
#define MASKREID_APPLY(NAME, KIND, MEMBER)             \
  else if (key == NAME) {                              \
    cfg.MEMBER = Parse_##KIND(key, value);             \
  }
#define Parse_Int(k, v) parse_int(k, v)
#define Parse_Double(k, v) parse_double(k, v)
#define Parse_Bool(k, v) parse_bool(k, v)
#define Parse_Seed(k, v) parse_seed(k, v)
    MASKREID_CONFIG_FIELDS(MASKREID_APPLY)
#undef MASKREID_APPLY
    else {
      throw std::invalid_argument("config: unknown key " + key);
    }
  }
}

std::map<std::string, std::string> config_entries(const TrainConfig& cfg) {
  std::map<std::string, std::string> out;
#define MASKREID_EMIT(NAME, KIND, MEMBER) out[NAME] = Emit_##KIND(cfg.MEMBER);
#define Emit_Int(v) std::to_string(v)
#define Emit_Double(v) format_double(v)
#define Emit_Bool(v) std::string((v) ? "true" : "false")
#define Emit_Seed(v) std::to_string(v)
  MASKREID_CONFIG_FIELDS(MASKREID_EMIT)
#undef MASKREID_EMIT
  return out;
}

std::string config_echo(const TrainConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, v] : config_entries(cfg)) out << k << "=" << v << "\n";
  return out.str();
}

std::string config_digest(const TrainConfig& cfg) {
  const std::uint64_t h = hash_str(config_echo(cfg));
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string train_meta_json(const TrainConfig& cfg, int n_classes) {
  nlohmann::json j;
  j["train_config"] = config_entries(cfg);
  j["n_classes"] = n_classes;
  return j.dump();
}

TrainConfig config_from_meta_json(const std::string& meta_json, int* n_classes) {
  const nlohmann::json j = nlohmann::json::parse(meta_json);
  std::map<std::string, std::string> entries;
  for (const auto& [k, v] : j.at("train_config").items())
    entries[k] = v.get<std::string>();
  TrainConfig cfg;
  apply_config_entries(cfg, entries);
  if (n_classes) *n_classes = j.value("n_classes", 0);
  return cfg;
}

}  // namespace maskreid
