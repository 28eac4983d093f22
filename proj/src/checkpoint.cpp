#include "fedtm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace fedtm {

namespace {

constexpr char kMagic[8] = {'F', 'T', 'M', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_raw(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error("load_checkpoint: truncated file");
  return value;
}

void write_name(std::ostream& out, const std::string& name) {
  write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string read_name(std::istream& in) {
  auto len = read_raw<std::uint16_t>(in);
  std::string name(len, '\0');
  in.read(name.data(), len);
  if (!in) throw Error("load_checkpoint: truncated file");
  return name;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const PruneMask& mask,
                     const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open '" + path + "'");
  out.write(kMagic, sizeof(kMagic));

  std::vector<TensorRef> refs;
  for_each_tensor(params, [&](const TensorRef& t) { refs.push_back(t); });
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(refs.size()));
  for (const auto& t : refs) {
    write_name(out, t.name);
    write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows));
    write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols));
    out.write(reinterpret_cast<const char*>(t.data),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.rows * t.cols)));
  }

  std::vector<TensorRef> prunable_refs;
  for (const auto& t : refs)
    if (t.prunable) prunable_refs.push_back(t);
  if (prunable_refs.size() != mask.tensors.size())
    throw Error("save_checkpoint: mask does not match the model");
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(mask.tensors.size()));
  for (std::size_t i = 0; i < mask.tensors.size(); ++i) {
    const auto& m = mask.tensors[i];
    write_name(out, prunable_refs[i].name);
    write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    const long n = m.size();
    std::vector<std::uint8_t> packed(static_cast<std::size_t>((n + 7) / 8), 0);
    for (long j = 0; j < n; ++j)
      if (m.data()[j]) packed[static_cast<std::size_t>(j / 8)] |= static_cast<std::uint8_t>(1u << (j % 8));
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size()));
  }

  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.tokens.size()));
  for (const auto& tok : vocab.tokens) write_name(out, tok);
  if (!out) throw Error("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error("load_checkpoint: '" + path + "' is not a checkpoint file");

  struct RawTensor {
    std::string name;
    long rows, cols;
    std::vector<double> data;
  };
  auto tensor_count = read_raw<std::uint32_t>(in);
  std::map<std::string, RawTensor> tensors;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    RawTensor t;
    t.name = read_name(in);
    t.rows = static_cast<long>(read_raw<std::uint64_t>(in));
    t.cols = static_cast<long>(read_raw<std::uint64_t>(in));
    t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(sizeof(double) * t.data.size()));
    if (!in) throw Error("load_checkpoint: truncated tensor " + t.name);
    order.push_back(t.name);
    tensors.emplace(order.back(), std::move(t));
  }

  auto take = [&](const std::string& name) -> RawTensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("load_checkpoint: missing tensor '" + name + "'");
    return it->second;
  };

  Checkpoint ckpt;
  for (int l = 0;; ++l) {
    std::string base = "encoder" + std::to_string(l);
    if (tensors.find(base + ".weight") == tensors.end()) break;
    RawTensor& w = take(base + ".weight");
    RawTensor& b = take(base + ".bias");
    DenseLayer layer;
    layer.weight = Eigen::Map<Mat>(w.data.data(), w.rows, w.cols);
    layer.bias = Eigen::Map<Vec>(b.data.data(), b.rows);
    ckpt.params.encoder.push_back(std::move(layer));
  }
  if (ckpt.params.encoder.empty()) throw Error("load_checkpoint: no encoder layers");
  {
    RawTensor& w = take("mu.weight");
    RawTensor& b = take("mu.bias");
    ckpt.params.mu_head.weight = Eigen::Map<Mat>(w.data.data(), w.rows, w.cols);
    ckpt.params.mu_head.bias = Eigen::Map<Vec>(b.data.data(), b.rows);
  }
  {
    RawTensor& w = take("logvar.weight");
    RawTensor& b = take("logvar.bias");
    ckpt.params.logvar_head.weight = Eigen::Map<Mat>(w.data.data(), w.rows, w.cols);
    ckpt.params.logvar_head.bias = Eigen::Map<Vec>(b.data.data(), b.rows);
  }
  {
    RawTensor& beta = take("beta");
    ckpt.params.beta = Eigen::Map<Mat>(beta.data.data(), beta.rows, beta.cols);
  }

  auto mask_count = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < mask_count; ++i) {
    read_name(in);  // names follow the tensor order; kept for diffability
    long rows = static_cast<long>(read_raw<std::uint64_t>(in));
    long cols = static_cast<long>(read_raw<std::uint64_t>(in));
    const long n = rows * cols;
    std::vector<std::uint8_t> packed(static_cast<std::size_t>((n + 7) / 8));
    in.read(reinterpret_cast<char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
    if (!in) throw Error("load_checkpoint: truncated mask");
    MaskMat m(rows, cols);
    for (long j = 0; j < n; ++j)
      m.data()[j] = (packed[static_cast<std::size_t>(j / 8)] >> (j % 8)) & 1u;
    ckpt.mask.tensors.push_back(std::move(m));
  }
  if (!ckpt.mask.congruent_with(ckpt.params))
    throw Error("load_checkpoint: mask does not match the model");

  auto vocab_count = read_raw<std::uint32_t>(in);
  std::vector<std::string> tokens;
  tokens.reserve(vocab_count);
  for (std::uint32_t i = 0; i < vocab_count; ++i) tokens.push_back(read_name(in));
  ckpt.vocab = Vocabulary::from_tokens(std::move(tokens));
  return ckpt;
}

}  // namespace fedtm
