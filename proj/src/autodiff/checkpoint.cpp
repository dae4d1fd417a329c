#include "partex/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace partex::ad {

namespace {
constexpr char kMagic[8] = {'P', 'T', 'X', 'C', 'K', 'P', 'T', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
}  // namespace

void Checkpoint::put(const std::string& name, Shape shape, std::vector<float> data) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("checkpoint: tensor '" + name + "' has " + std::to_string(data.size()) + " values for " +
                     shape_str(shape));
  }
  tensors[name] = CheckpointTensor{std::move(shape), std::move(data)};
}

const CheckpointTensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put_params(const ParamStore& ps, const std::string& prefix) {
  for (const auto& n : ps.names()) put(prefix + n, ps.get(n).shape(), ps.get(n).data());
}

void Checkpoint::get_params(ParamStore& ps, const std::string& prefix) const {
  for (const auto& n : ps.names()) {
    const auto& t = at(prefix + n);
    Tensor& p = ps.get(n);
    if (t.shape != p.shape()) {
      throw ShapeError("checkpoint: tensor '" + prefix + n + "' has shape " + shape_str(t.shape) + ", expected " +
                       shape_str(p.shape()));
    }
    p.data() = t.data;
  }
}

void Checkpoint::merge(const Checkpoint& other) {
  for (const auto& [k, v] : other.tensors) tensors[k] = v;
  for (const auto& [k, v] : other.meta.items()) meta[k] = v;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"dtype", "f32"}});
    offset += t.data.size() * sizeof(float);
  }
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  const uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw Error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint not found: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw Error("checkpoint: bad magic in " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("checkpoint: truncated header in " + path);
  const auto header = nlohmann::json::parse(h);
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("tensors")) {
    if (e.at("dtype") != "f32") throw Error("checkpoint: unsupported dtype in " + path);
    Shape shape = e.at("shape").get<Shape>();
    const uint64_t off = e.at("offset").get<uint64_t>();
    const size_t n = static_cast<size_t>(numel(shape));
    if (off + n * sizeof(float) > payload.size()) throw Error("checkpoint: truncated payload in " + path);
    std::vector<float> data(n);
    std::memcpy(data.data(), payload.data() + off, n * sizeof(float));
    ck.tensors[e.at("name").get<std::string>()] = CheckpointTensor{std::move(shape), std::move(data)};
  }
  return ck;
}

}  // namespace partex::ad
