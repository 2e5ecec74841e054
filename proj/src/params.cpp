#include "maskreid/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace maskreid {

namespace {
constexpr char kMagic[8] = {'M', 'R', 'E', 'I', 'D', 'C', 'K', '1'};
static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const std::string& meta_json) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["meta"] = meta_json.empty() ? nlohmann::json::object()
                                     : nlohmann::json::parse(meta_json);
  nlohmann::json arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, p] : store.items()) {
    arrays.push_back({{"name", name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"trainable", p.trainable},
                      {"decay", p.decay},
                      {"offset", offset}});
    offset += p.value.size() * sizeof(float);
  }
  header["arrays"] = std::move(arrays);

  const std::string header_str = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = header_str.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, p] : store.items())
    f.write(reinterpret_cast<const char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_str(len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path);

  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported format version");

  Checkpoint ckpt;
  ckpt.meta_json = header.at("meta").dump();
  for (const auto& a : header.at("arrays")) {
    auto& p = ckpt.store.add(a.at("name").get<std::string>(),
                             a.at("rows").get<std::size_t>(),
                             a.at("cols").get<std::size_t>(),
                             a.at("trainable").get<bool>(), a.at("decay").get<bool>());
    f.read(reinterpret_cast<char*>(p.value.data()),
           static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated data in " + path);
  }
  return ckpt;
}

}  // namespace maskreid
