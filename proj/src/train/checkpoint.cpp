#include "privdistil/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "privdistil/common/error.hpp"

namespace privdistil::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const torch::Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CorruptionError("checkpoint has no tensor \"" + name + "\"");
}

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const uint8_t* take(size_t n) {
    if (n > bytes_.size() - pos_) throw CorruptionError("checkpoint is truncated");
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<uint32_t>(out, ck.version);
  put<uint32_t>(out, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, tensor] : ck.tensors) {
    if (name.size() > 0xFFFF) throw ArgumentError("tensor name too long: " + name);
    if (tensor.dim() > 0xFF) throw ArgumentError("tensor rank too large: " + name);
    put<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<uint8_t>(out, static_cast<uint8_t>(tensor.dim()));
    for (auto d : tensor.sizes()) put<uint32_t>(out, static_cast<uint32_t>(d));
    auto values = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const auto* p = reinterpret_cast<const uint8_t*>(values.data_ptr<float>());
    out.insert(out.end(), p, p + values.numel() * sizeof(float));
  }
  const std::string blob = nlohmann::json{{"config", ck.config}, {"epoch", ck.epoch}, {"metrics", ck.metrics}}.dump();
  put<uint32_t>(out, static_cast<uint32_t>(blob.size()));
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(4), kMagic, 4) != 0) throw CorruptionError("not a checkpoint file (bad magic)");
  Checkpoint ck;
  ck.version = in.get<uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw CorruptionError("unsupported checkpoint version " + std::to_string(ck.version));
  }
  const auto count = in.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<uint16_t>();
    const auto* name = reinterpret_cast<const char*>(in.take(len));
    const auto rank = in.get<uint8_t>();
    std::vector<int64_t> dims(rank);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = in.get<uint32_t>();
      numel *= d;
    }
    auto t = torch::empty(dims, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), in.take(static_cast<size_t>(numel) * sizeof(float)),
                static_cast<size_t>(numel) * sizeof(float));
    ck.tensors.emplace_back(std::string(name, len), t);
  }
  const auto blob_len = in.get<uint32_t>();
  const auto* blob = reinterpret_cast<const char*>(in.take(blob_len));
  if (!in.done()) throw CorruptionError("trailing bytes after checkpoint metadata");
  try {
    const auto meta = nlohmann::json::parse(blob, blob + blob_len);
    ck.config = meta.at("config");
    ck.epoch = meta.at("epoch").get<int64_t>();
    ck.metrics = meta.at("metrics");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void add_module_state(Checkpoint& ck, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& item : module.named_parameters(true)) {
    ck.tensors.emplace_back(prefix + item.key(), item.value().detach().to(torch::kFloat32).clone());
  }
  for (const auto& item : module.named_buffers(true)) {
    ck.tensors.emplace_back(prefix + item.key(), item.value().detach().to(torch::kFloat32).clone());
  }
}

void load_module_state(const Checkpoint& ck, torch::nn::Module& module, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  std::set<std::string> expected;
  auto assign = [&](const std::string& key, torch::Tensor& target) {
    const std::string name = prefix + key;
    expected.insert(name);
    if (!ck.has(name)) throw CorruptionError("checkpoint is missing tensor \"" + name + "\"");
    const auto& src = ck.at(name);
    if (src.sizes() != target.sizes()) throw CorruptionError("tensor \"" + name + "\" has the wrong shape");
    target.copy_(src);
  };
  for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
  for (const auto& [name, _] : ck.tensors) {
    if (name.rfind(prefix, 0) == 0 && !expected.count(name)) {
      throw CorruptionError("unknown tensor name \"" + name + "\" for this model");
    }
  }
}

}  // namespace privdistil::train
