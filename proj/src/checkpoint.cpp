#include "quadtrack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "quadtrack/config.hpp"

namespace quadtrack {

namespace {

constexpr char kMagic[8] = {'Q', 'T', 'R', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kF32 = 1;
constexpr std::uint8_t kF64 = 2;

template <typename T>
void put(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw FormatError("checkpoint truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

struct Tensor {
  std::uint8_t dtype;
  std::uint64_t rows, cols;
  std::string data;
};

// Every tensor in a fixed order: name, pointer, rows, cols, dtype.
struct View {
  std::string name;
  void* data;
  std::uint64_t rows, cols;
  std::uint8_t dtype;
};

std::vector<View> views(ActorCritic<float>& net) {
  std::vector<View> v;
  auto encoder = [&](const std::string& prefix, Mlp<float>& m) {
    for (const auto& s : m.slots()) {
      v.push_back({prefix + "." + s.name, m.params.data() + s.offset, std::uint64_t(s.rows), std::uint64_t(s.cols), kF32});
    }
  };
  encoder("actor_encoder", net.actor_encoder);
  const auto w = std::uint64_t(net.policy.width());
  v.push_back({"policy.weight", net.policy.params.data(), 4, w, kF32});
  v.push_back({"policy.bias", net.policy.params.data() + 4 * w, 4, 1, kF32});
  v.push_back({"policy.log_std", net.policy.params.data() + 4 * w + 4, 4, 1, kF32});
  encoder("critic_encoder", net.critic_encoder);
  v.push_back({"value.weight", net.value.params.data(), 1, std::uint64_t(net.value.width()), kF32});
  v.push_back({"value.bias", net.value.params.data() + net.value.width(), 1, 1, kF32});
  auto norm = [&](const std::string& prefix, RunningMeanStd& n) {
    v.push_back({prefix + ".mean", n.mean.data(), std::uint64_t(n.mean.size()), 1, kF64});
    v.push_back({prefix + ".var", n.var.data(), std::uint64_t(n.var.size()), 1, kF64});
    v.push_back({prefix + ".count", &n.count, 1, 1, kF64});
    v.push_back({prefix + ".clip", &n.clip, 1, 1, kF64});
  };
  norm("actor_norm", net.actor_norm);
  norm("critic_norm", net.critic_norm);
  v.push_back({"value_norm.beta", &net.value_norm.beta, 1, 1, kF64});
  v.push_back({"value_norm.running_mean", &net.value_norm.running_mean, 1, 1, kF64});
  v.push_back({"value_norm.running_mean_sq", &net.value_norm.running_mean_sq, 1, 1, kF64});
  v.push_back({"value_norm.debias", &net.value_norm.debias, 1, 1, kF64});
  return v;
}

std::string encode_data(const View& v) {
  std::string out;
  const std::uint64_t n = v.rows * v.cols;
  if (v.dtype == kF32) {
    const float* p = static_cast<const float*>(v.data);
    for (std::uint64_t i = 0; i < n; ++i) put(out, std::bit_cast<std::uint32_t>(p[i]));
  } else {
    const double* p = static_cast<const double*>(v.data);
    for (std::uint64_t i = 0; i < n; ++i) put(out, std::bit_cast<std::uint64_t>(p[i]));
  }
  return out;
}

void decode_data(const View& v, const Tensor& t) {
  Reader r(t.data);
  const std::uint64_t n = v.rows * v.cols;
  if (v.dtype == kF32) {
    float* p = static_cast<float*>(v.data);
    for (std::uint64_t i = 0; i < n; ++i) p[i] = std::bit_cast<float>(r.get<std::uint32_t>());
  } else {
    double* p = static_cast<double*>(v.data);
    for (std::uint64_t i = 0; i < n; ++i) p[i] = std::bit_cast<double>(r.get<std::uint64_t>());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;
  copy.metadata["network"] = {{"actor_dim", ckpt.net.actor_dim()},
                              {"critic_dim", ckpt.net.critic_dim()},
                              {"config", to_json(ckpt.net.config)}};
  const auto vs = views(copy.net);

  std::string index, data;
  for (const auto& v : vs) {
    put(index, static_cast<std::uint16_t>(v.name.size()));
    index += v.name;
    put(index, v.dtype);
    put(index, v.rows);
    put(index, v.cols);
    put(index, static_cast<std::uint64_t>(data.size()));
    data += encode_data(v);
  }
  const std::string meta = copy.metadata.dump();

  std::string out(kMagic, sizeof kMagic);
  put(out, Checkpoint::kVersion);
  put(out, static_cast<std::uint32_t>(vs.size()));
  put(out, static_cast<std::uint64_t>(meta.size()));
  out += meta;
  out += index;
  put(out, static_cast<std::uint64_t>(data.size()));
  out += data;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));

  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw FormatError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  const auto meta_len = r.get<std::uint64_t>();
  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("corrupt checkpoint metadata: ") + e.what());
  }

  struct Entry {
    std::string name;
    std::uint8_t dtype;
    std::uint64_t rows, cols, offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.bytes(r.get<std::uint16_t>());
    e.dtype = r.get<std::uint8_t>();
    e.rows = r.get<std::uint64_t>();
    e.cols = r.get<std::uint64_t>();
    e.offset = r.get<std::uint64_t>();
    if (e.dtype != kF32 && e.dtype != kF64) throw FormatError("unknown dtype for tensor " + e.name);
    entries.push_back(std::move(e));
  }
  const auto data_len = r.get<std::uint64_t>();
  const std::string data = r.bytes(data_len);
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint data");

  std::map<std::string, Tensor> tensors;
  for (const auto& e : entries) {
    const std::uint64_t width = e.dtype == kF32 ? 4 : 8;
    const std::uint64_t size = e.rows * e.cols * width;
    if (e.offset > data.size() || size > data.size() - e.offset) throw FormatError("tensor " + e.name + " out of range");
    tensors[e.name] = {e.dtype, e.rows, e.cols, data.substr(e.offset, size)};
  }

  try {
    const auto& net = ckpt.metadata.at("network");
    const NetworkConfig cfg = network_config_from_json(net.at("config"));
    ckpt.net = ActorCritic<float>(net.at("actor_dim").get<int>(), net.at("critic_dim").get<int>(), cfg);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata lacks network description: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad network description: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("bad network description: ") + e.what());
  }

  for (const auto& v : views(ckpt.net)) {
    auto it = tensors.find(v.name);
    if (it == tensors.end()) throw FormatError("missing tensor " + v.name);
    const Tensor& t = it->second;
    if (t.dtype != v.dtype || t.rows != v.rows || t.cols != v.cols) {
      throw FormatError("tensor " + v.name + " has unexpected type or shape");
    }
    decode_data(v, t);
  }
  return ckpt;
}

}  // namespace quadtrack
