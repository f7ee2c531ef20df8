#include "memo/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "memo/lora.hpp"

namespace memo {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'E', 'M', 'O'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t fnv1a(const char* data, size_t n) {
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

struct Reader {
  std::string bytes;
  size_t pos = 0;
  std::string path;

  explicit Reader(const std::string& p) : path(p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + p);
    std::ostringstream buf;
    buf << f.rdbuf();
    bytes = std::move(buf).str();
  }

  void need(size_t n) const {
    if (pos + n > bytes.size())
      throw std::runtime_error("truncated checkpoint: " + path);
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

void save_checkpoint(const ParameterRegistry& params, const std::string& path) {
  std::string manifest;
  std::string payload;
  for (const auto& e : params.entries()) {
    manifest += e.name;
    manifest += " f32";
    for (int d = 0; d < e.tensor.ndim(); ++d) {
      manifest += ' ';
      manifest += std::to_string(e.tensor.dim(d));
    }
    manifest += '\n';
    const size_t off = payload.size();
    const size_t len = e.tensor.values().size() * 4;
    payload.resize(off + len);
    std::memcpy(payload.data() + off, e.tensor.data(), len);
  }

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, manifest.size());
  out += manifest;
  out += payload;
  put_u64(out, fnv1a(payload.data(), payload.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  r.need(4);
  if (std::memcmp(r.bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  r.pos += 4;

  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + " (this build reads version " +
                             std::to_string(kCheckpointVersion) + "): " + path);

  const uint64_t manifest_len = r.u64();
  r.need(manifest_len);
  const std::string manifest = r.bytes.substr(r.pos, manifest_len);
  r.pos += manifest_len;

  struct Pending {
    std::string name;
    std::vector<int> dims;
  };
  std::vector<Pending> pending;
  std::istringstream lines(manifest);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Pending p;
    std::string dtype;
    if (!(ls >> p.name >> dtype))
      throw std::runtime_error("malformed checkpoint manifest line: " + line);
    if (dtype != "f32")
      throw std::runtime_error("unknown tensor dtype '" + dtype +
                               "' in checkpoint manifest: " + path);
    int d;
    while (ls >> d) p.dims.push_back(d);
    if (p.dims.empty())
      throw std::runtime_error("malformed checkpoint manifest line: " + line);
    pending.push_back(std::move(p));
  }

  Checkpoint out;
  out.version = version;
  const size_t payload_start = r.pos;
  for (auto& p : pending) {
    const int64_t numel = shape_numel(p.dims);
    const size_t len = static_cast<size_t>(numel) * 4;
    r.need(len);
    std::vector<float> vals(static_cast<size_t>(numel));
    std::memcpy(vals.data(), r.bytes.data() + r.pos, len);
    r.pos += len;
    out.entries.push_back({std::move(p.name), Tensor(std::move(p.dims), std::move(vals))});
  }

  const uint64_t stored = r.u64();
  const uint64_t actual =
      fnv1a(r.bytes.data() + payload_start, r.pos - 8 - payload_start);
  if (stored != actual)
    throw std::runtime_error("checkpoint payload checksum mismatch: " + path);
  return out;
}

void load_parameters(ParameterRegistry& params, const Checkpoint& ckpt) {
  for (const auto& e : ckpt.entries) {
    Tensor* dst = params.find(e.name);
    if (!dst)
      throw std::runtime_error("checkpoint parameter not present in model: " + e.name);
    if (!same_shape(*dst, e.tensor))
      throw std::runtime_error("shape mismatch for " + e.name + ": model has " +
                               shape_string(dst->shape()) + ", checkpoint has " +
                               shape_string(e.tensor.shape()));
    std::copy(e.tensor.values().begin(), e.tensor.values().end(),
              dst->values().begin());
  }
  for (const auto& e : params.entries())
    if (!ckpt.find(e.name))
      throw std::runtime_error("model parameter missing from checkpoint: " + e.name);
}

void load_network(MEMONetwork& net, const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (const Tensor* meta = ckpt.find("lora.meta"); meta && !has_lora(net)) {
    const int rank = static_cast<int>(meta->values()[0]);
    const float alpha = meta->values()[1];
    lora_inject(net, rank, alpha);
  }
  load_parameters(net.params(), ckpt);
}

}  // namespace memo
