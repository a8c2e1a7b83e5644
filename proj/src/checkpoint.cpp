#include "shadowmamba/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace sm {
namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::ifstream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw DataError("checkpoint: truncated file");
  return v;
}

std::string take_string(std::ifstream& in, uint64_t len) {
  if (len > (1ull << 20)) throw DataError("checkpoint: absurd string length");
  std::string s(len, '\0');
  in.read(s.data(), (std::streamsize)len);
  if (!in) throw DataError("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, Model<double>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  put<uint32_t>(out, kVersion);

  const std::string cfg = to_json(model.cfg);
  put<uint64_t>(out, cfg.size());
  out.write(cfg.data(), (std::streamsize)cfg.size());

  auto params = model.named_parameters();
  put<uint64_t>(out, params.size());
  for (const auto& p : params) {
    put<uint64_t>(out, p.name.size());
    out.write(p.name.data(), (std::streamsize)p.name.size());
    put<uint32_t>(out, (uint32_t)p.tensor->shape.size());
    for (int d : p.tensor->shape) put<int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.tensor->ptr()),
              (std::streamsize)(p.tensor->numel() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

Model<double> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  if (take<uint32_t>(in) != kVersion)
    throw DataError("checkpoint: unsupported version in " + path);

  const uint64_t cfg_len = take<uint64_t>(in);
  const ModelConfig cfg = model_config_from_json(take_string(in, cfg_len));
  Model<double> model(cfg);

  auto params = model.named_parameters();
  std::map<std::string, Tensor<double>*> by_name;
  for (auto& p : params) by_name[p.name] = p.tensor;

  const uint64_t count = take<uint64_t>(in);
  if (count != params.size())
    throw DataError("checkpoint: tensor count does not match the config");
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = take<uint64_t>(in);
    const std::string name = take_string(in, name_len);
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint: unexpected tensor '" + name + "'");
    Tensor<double>* t = it->second;
    const uint32_t rank = take<uint32_t>(in);
    if (rank != t->shape.size())
      throw DataError("checkpoint: rank mismatch for '" + name + "'");
    for (uint32_t d = 0; d < rank; ++d)
      if (take<int64_t>(in) != t->shape[d])
        throw DataError("checkpoint: shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(t->ptr()),
            (std::streamsize)(t->numel() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated tensor data");
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw DataError("checkpoint: missing tensor '" +
                    by_name.begin()->first + "'");
  return model;
}

}  // namespace sm
