#include "profuse/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "profuse/binio.hpp"

namespace profuse::checkpoint {

namespace {
constexpr char kMagic[4] = {'P', 'F', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_tensors(const std::string& path, const std::vector<TensorRecord>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  out.write(kMagic, 4);
  binio::write_u32(out, kVersion);
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("tensor name too long");
    binio::write_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    binio::write_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    binio::write_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    binio::write_floats(out, t.value.data(), static_cast<std::size_t>(t.value.size()));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint file: " + path);
}

std::vector<TensorRecord> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  if (!binio::read_u32(in, version)) throw std::runtime_error("truncated checkpoint file: " + path);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  std::vector<TensorRecord> tensors;
  while (true) {
    std::uint16_t name_len = 0;
    if (!binio::read_u16(in, name_len)) {
      if (in.eof()) break;
      throw std::runtime_error("truncated checkpoint file: " + path);
    }
    TensorRecord record;
    record.name.resize(name_len);
    std::uint32_t rows = 0, cols = 0;
    if (!in.read(record.name.data(), name_len) || !binio::read_u32(in, rows) ||
        !binio::read_u32(in, cols))
      throw std::runtime_error("truncated checkpoint file: " + path);
    record.value.resize(rows, cols);
    if (!binio::read_floats(in, record.value.data(), static_cast<std::size_t>(rows) * cols))
      throw std::runtime_error("truncated checkpoint file: " + path);
    tensors.push_back(std::move(record));
  }
  return tensors;
}

void save_named_params(const std::string& path, const std::vector<nn::NamedParam>& params) {
  std::vector<TensorRecord> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back({p.name, p.param->value});
  save_tensors(path, tensors);
}

void load_named_params(const std::string& path, const std::vector<nn::NamedParam>& params) {
  auto tensors = load_tensors(path);
  std::unordered_map<std::string, const TensorRecord*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t).second)
      throw std::runtime_error("duplicate tensor in checkpoint: " + t.name);
  }
  if (by_name.size() != params.size())
    throw std::runtime_error("checkpoint tensor count does not match model");
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("missing tensor in checkpoint: " + p.name);
    const Matrix& v = it->second->value;
    if (v.rows() != p.param->value.rows() || v.cols() != p.param->value.cols())
      throw std::runtime_error("tensor shape mismatch in checkpoint: " + p.name);
    p.param->value = v;
  }
}

}  // namespace profuse::checkpoint
