#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include "binary_io.hpp"
#include "gazediff/denoiser.hpp"
#include "gazediff/error.hpp"

namespace gazediff {

namespace {

constexpr const char* kMomentM = "adam.m/";
constexpr const char* kMomentV = "adam.v/";

struct RawTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
  std::size_t offset = 0;
};

struct RawCheckpoint {
  std::vector<RawTensor> tensors;
  std::uint64_t step = 0;
};

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what, std::size_t offset) {
  throw DataError(path.string() + ": " + what + " at byte offset " + std::to_string(offset));
}

RawCheckpoint parse(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  detail::ByteReader r(buf);
  std::string magic;
  if (!r.bytes(magic, 4) || magic != "GZDF") corrupt(path, "bad magic (not a GZDF checkpoint)", 0);
  std::uint32_t version = 0, count = 0;
  if (!r.uint(version)) corrupt(path, "truncated header", r.offset());
  if (version != 1) corrupt(path, "unsupported version " + std::to_string(version), 4);
  if (!r.uint(count)) corrupt(path, "truncated header", r.offset());

  RawCheckpoint ck;
  std::string prev_name;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    t.offset = r.offset();
    std::uint16_t name_len = 0;
    if (!r.uint(name_len) || !r.bytes(t.name, name_len))
      corrupt(path, "truncated tensor name (tensor " + std::to_string(i) + ")", r.offset());
    if (i > 0 && !(prev_name < t.name)) corrupt(path, "tensor names not strictly ordered: '" + t.name + "'", t.offset);
    prev_name = t.name;
    std::uint8_t rank = 0;
    if (!r.uint(rank)) corrupt(path, "truncated rank of '" + t.name + "'", r.offset());
    std::size_t elems = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      std::uint32_t dim = 0;
      if (!r.uint(dim)) corrupt(path, "truncated dims of '" + t.name + "'", r.offset());
      t.dims.push_back(dim);
      elems *= dim;
    }
    if (!r.has(elems * 4))
      corrupt(path, "truncated data of '" + t.name + "' (need " + std::to_string(elems * 4) + " bytes, have " +
                        std::to_string(r.remaining()) + ")",
              r.offset());
    t.data.resize(elems);
    for (auto& v : t.data) r.f32(v);
    ck.tensors.push_back(std::move(t));
  }
  if (!r.uint(ck.step)) corrupt(path, "truncated step counter", r.offset());
  if (r.remaining() != 0) corrupt(path, std::to_string(r.remaining()) + " trailing bytes", r.offset());
  return ck;
}

}  // namespace

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  struct Entry {
    std::string name;
    const Tensor* tensor;
    const std::vector<double>* data;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& t = params.at(i);
    entries.push_back({t.name, &t, &t.value});
    entries.push_back({kMomentM + t.name, &t, &t.m});
    entries.push_back({kMomentV + t.name, &t, &t.v});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.name < b.name; });

  detail::ByteWriter w;
  w.bytes("GZDF", 4);
  w.uint<std::uint32_t>(1);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw UsageError("tensor name too long: " + e.name);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.tensor->shape.size()));
    for (auto d : e.tensor->shape) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : *e.data) w.f32(static_cast<float>(v));
  }
  w.uint<std::uint64_t>(params.step());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("write failed: " + path.string());
}

void load_checkpoint(ParameterSet& params, const std::filesystem::path& path) {
  const auto ck = parse(path);
  std::map<std::string, const RawTensor*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;

  auto fetch = [&](const std::string& name, const Tensor& expected) -> const RawTensor* {
    auto it = by_name.find(name);
    if (it == by_name.end()) return nullptr;
    const auto& raw = *it->second;
    bool same = raw.dims.size() == expected.shape.size();
    for (std::size_t k = 0; same && k < raw.dims.size(); ++k) same = raw.dims[k] == expected.shape[k];
    if (!same) corrupt(path, "shape of '" + name + "' does not match the model configuration", raw.offset);
    by_name.erase(it);
    return &raw;
  };

  ParameterSet staged = params;
  for (std::size_t i = 0; i < staged.count(); ++i) {
    auto& t = staged.at(i);
    const auto* value = fetch(t.name, t);
    if (!value) throw DataError(path.string() + ": missing tensor '" + t.name + "' required by the model configuration");
    std::copy(value->data.begin(), value->data.end(), t.value.begin());
    if (const auto* m = fetch(kMomentM + t.name, t)) std::copy(m->data.begin(), m->data.end(), t.m.begin());
    else std::fill(t.m.begin(), t.m.end(), 0.0);
    if (const auto* v = fetch(kMomentV + t.name, t)) std::copy(v->data.begin(), v->data.end(), t.v.begin());
    else std::fill(t.v.begin(), t.v.end(), 0.0);
  }
  if (!by_name.empty())
    corrupt(path, "tensor '" + by_name.begin()->first + "' is not part of the model configuration",
            by_name.begin()->second->offset);
  staged.set_step(ck.step);
  params = std::move(staged);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto ck = parse(path);
  CheckpointInfo info;
  info.step = ck.step;
  for (const auto& t : ck.tensors) {
    CheckpointTensorInfo ti;
    ti.name = t.name;
    ti.dims = t.dims;
    if (!t.data.empty()) {
      ti.min = *std::min_element(t.data.begin(), t.data.end());
      ti.max = *std::max_element(t.data.begin(), t.data.end());
    }
    ti.finite = std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); });
    info.tensors.push_back(std::move(ti));
  }
  return info;
}

}  // namespace gazediff
