#include "pcgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "pcgan/error.hpp"

namespace pcgan {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using Kind = FormatError::Kind;

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf.insert(buf.end(), p, p + n);
  }
  void name(const std::string& s) {
    if (s.size() > std::numeric_limits<std::uint16_t>::max()) throw UsageError("checkpoint name too long: " + s);
    pod(std::uint16_t(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& n, const Tensor& t) {
    name(n);
    if (t.rank() > 255) throw UsageError("tensor rank too large: " + n);
    pod(std::uint8_t(t.rank()));
    for (int d : t.shape()) pod(std::uint32_t(d));
    bytes(t.ptr(), t.numel() * sizeof(float));
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}

  void need(std::size_t n) const {
    if (buf.size() - pos < n) throw FormatError(Kind::truncated, "checkpoint truncated");
  }
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::string name() { return str(pod<std::uint16_t>()); }
  std::pair<std::string, Tensor> tensor() {
    std::string n = name();
    const int rank = pod<std::uint8_t>();
    Shape shape;
    std::size_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      const auto d = pod<std::uint32_t>();
      if (d == 0 || d > std::uint32_t(std::numeric_limits<int>::max())) {
        throw FormatError(Kind::malformed, "tensor " + n + " has an invalid extent");
      }
      shape.push_back(int(d));
      numel *= d;
      if (numel > buf.size()) throw FormatError(Kind::truncated, "checkpoint truncated in tensor " + n);
    }
    need(numel * sizeof(float));
    std::vector<float> data(numel);
    std::memcpy(data.data(), buf.data() + pos, numel * sizeof(float));
    pos += numel * sizeof(float);
    return {std::move(n), rank == 0 ? Tensor(Shape{}, std::move(data)) : Tensor(shape, std::move(data))};
  }
  bool done() const { return pos == buf.size(); }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes("PCGN", 4);
  w.pod(kCheckpointVersion);
  w.pod(std::uint32_t(c.kind));
  w.pod(c.stage);
  w.pod(c.epoch);
  const std::string meta = c.meta.dump();
  w.pod(std::uint32_t(meta.size()));
  w.bytes(meta.data(), meta.size());
  w.pod(std::uint32_t(c.tensors.size()));
  for (const auto& [n, t] : c.tensors) w.tensor(n, t);
  w.pod(std::uint32_t(c.optimizers.size()));
  for (const auto& [n, s] : c.optimizers) {
    w.name(n);
    w.pod(std::uint64_t(s.step));
    w.pod(s.config.lr);
    w.pod(s.config.beta1);
    w.pod(s.config.beta2);
    w.pod(s.config.eps);
    if (s.m.size() != s.v.size()) throw UsageError("optimizer " + n + " has unpaired moments");
    w.pod(std::uint32_t(s.m.size()));
    for (const auto& [pn, m] : s.m) {
      auto it = s.v.find(pn);
      if (it == s.v.end()) throw UsageError("optimizer " + n + " has unpaired moments");
      w.tensor(pn, m);
      w.tensor(pn, it->second);
    }
  }
  w.pod(std::uint32_t(c.rngs.size()));
  for (const auto& [n, state] : c.rngs) {
    w.name(n);
    w.pod(std::uint32_t(state.size()));
    w.bytes(state.data(), state.size());
  }
  return std::move(w.buf);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PCGN", 4) != 0) {
    throw FormatError(Kind::bad_magic, "not a checkpoint (bad magic)");
  }
  r.pos = 4;
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(Kind::version_mismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                  std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  const auto kind = r.pod<std::uint32_t>();
  if (kind > 1) throw FormatError(Kind::malformed, "unknown checkpoint kind " + std::to_string(kind));
  c.kind = CheckpointKind(kind);
  c.stage = r.pod<std::uint32_t>();
  c.epoch = r.pod<std::uint32_t>();
  const std::string meta = r.str(r.pod<std::uint32_t>());
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::malformed, std::string("checkpoint metadata: ") + e.what());
  }
  const auto tensor_count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    auto [n, t] = r.tensor();
    if (!c.tensors.emplace(n, std::move(t)).second) throw FormatError(Kind::malformed, "duplicate tensor " + n);
  }
  const auto opt_count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < opt_count; ++i) {
    const std::string n = r.name();
    AdamState s;
    s.step = r.pod<std::uint64_t>();
    s.config.lr = r.pod<float>();
    s.config.beta1 = r.pod<float>();
    s.config.beta2 = r.pod<float>();
    s.config.eps = r.pod<float>();
    const auto moments = r.pod<std::uint32_t>();
    for (std::uint32_t j = 0; j < moments; ++j) {
      auto [mn, m] = r.tensor();
      auto [vn, v] = r.tensor();
      if (mn != vn || m.shape() != v.shape()) throw FormatError(Kind::malformed, "optimizer " + n + " moments disagree");
      s.m.emplace(mn, std::move(m));
      s.v.emplace(vn, std::move(v));
    }
    c.optimizers.emplace(n, std::move(s));
  }
  const auto rng_count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < rng_count; ++i) {
    const std::string n = r.name();
    c.rngs.emplace(n, r.str(r.pod<std::uint32_t>()));
  }
  if (!r.done()) throw FormatError(Kind::malformed, "trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void export_network(const Network& net, const std::string& prefix, std::map<std::string, Tensor>& out) {
  for (const auto& [n, t] : net.params()) out[prefix + n] = t;
  for (const auto& [n, t] : net.buffers()) out[prefix + n] = t;
}

void import_network(Network& net, const std::string& prefix, const std::map<std::string, Tensor>& tensors) {
  auto fetch = [&](const std::string& n, const Tensor& current) -> const Tensor& {
    auto it = tensors.find(prefix + n);
    if (it == tensors.end()) throw FormatError(Kind::malformed, "checkpoint lacks tensor " + prefix + n);
    if (it->second.shape() != current.shape()) {
      throw FormatError(Kind::malformed, "tensor " + prefix + n + " has shape " + shape_to_string(it->second.shape()) +
                                             ", expected " + shape_to_string(current.shape()));
    }
    return it->second;
  };
  for (const auto& [n, t] : tensors) {
    if (n.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string local = n.substr(prefix.size());
    if (!net.params().count(local) && !net.buffers().count(local)) {
      throw FormatError(Kind::unknown_tensor, "checkpoint tensor " + n + " matches no layer");
    }
  }
  for (const auto& [n, t] : net.params()) fetch(n, t);
  for (const auto& [n, t] : net.buffers()) fetch(n, t);
  for (auto& [n, t] : net.params()) t = fetch(n, t);
  for (auto& [n, t] : net.buffers()) t = fetch(n, t);
}

}  // namespace pcgan
