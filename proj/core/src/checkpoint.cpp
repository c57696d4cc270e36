// SPDX-License-Identifier: Apache-2.0
#include "cvlm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_set>

#include "json.hpp"

#include "cvlm/error.hpp"

namespace cvlm {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'L', 'M'};
constexpr const char* kOptM = "opt.m.";
constexpr const char* kOptV = "opt.v.";

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

struct Writer {
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  void tensor(const std::string& name, const double* data,
              const std::vector<int>& shape, std::size_t numel) {
    str(name);
    u8(0);  // f64
    u8(static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) u32(static_cast<std::uint32_t>(d));
    const std::size_t payload = numel * sizeof(double);
    u64(payload);
    const std::size_t at = bytes.size();
    raw(data, payload);
    u64(fnv1a(bytes.data() + at, payload));
  }
};

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;
  std::string context = "header";

  void need(std::size_t k) const {
    if (pos + k > n) {
      throw IntegrityError("checkpoint truncated while reading " + context);
    }
  }
  void raw(void* out, std::size_t k) {
    need(k);
    std::memcpy(out, p + pos, k);
    pos += k;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t k = u32();
    need(k);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

struct RawTensor {
  std::string name;
  int dtype = 0;
  std::vector<int> shape;
  std::vector<double> values;
};

// One tensor record; `header_only` skips payload decoding but still checks
// lengths and the hash.
RawTensor read_tensor(Reader& r, bool header_only) {
  RawTensor t;
  r.context = "tensor name";
  t.name = r.str();
  r.context = "tensor '" + t.name + "'";
  t.dtype = r.u8();
  if (t.dtype != 0 && t.dtype != 1) {
    throw FormatError("checkpoint tensor '" + t.name +
                      "' has unknown dtype tag " + std::to_string(t.dtype));
  }
  const int rank = r.u8();
  std::size_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const int d = static_cast<int>(r.u32());
    t.shape.push_back(d);
    numel *= static_cast<std::size_t>(d);
  }
  const std::uint64_t payload = r.u64();
  const std::size_t elem = t.dtype == 0 ? sizeof(double) : sizeof(float);
  if (payload != numel * elem) {
    throw IntegrityError("checkpoint tensor '" + t.name +
                         "' payload length " + std::to_string(payload) +
                         " does not match shape");
  }
  r.need(payload);
  const std::uint8_t* body = r.p + r.pos;
  if (!header_only) {
    t.values.resize(numel);
    if (t.dtype == 0) {
      std::memcpy(t.values.data(), body, payload);
    } else {
      std::vector<float> tmp(numel);
      std::memcpy(tmp.data(), body, payload);
      for (std::size_t i = 0; i < numel; ++i) t.values[i] = tmp[i];
    }
  }
  r.pos += payload;
  const std::uint64_t want = r.u64();
  if (fnv1a(body, payload) != want) {
    throw IntegrityError("checkpoint tensor '" + t.name +
                         "' payload hash mismatch");
  }
  return t;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::string meta_to_json(const CheckpointMeta& meta) {
  nlohmann::json j;
  j["stage"] = meta.stage;
  j["step"] = meta.step;
  j["lora_merged"] = meta.lora_merged;
  j["adam_t"] = meta.adam_t;
  try {
    j["config"] = nlohmann::json::parse(meta.config_json);
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError("checkpoint metadata config is not valid JSON");
  }
  return j.dump();
}

CheckpointMeta meta_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") +
                      e.what());
  }
  CheckpointMeta meta;
  meta.stage = j.value("stage", std::string());
  meta.step = j.value("step", std::int64_t{0});
  meta.lora_merged = j.value("lora_merged", false);
  meta.adam_t = j.value("adam_t", std::int64_t{0});
  meta.config_json = j.contains("config") ? j["config"].dump() : "null";
  return meta;
}

// Shared open path: magic + version + metadata; leaves the reader at the
// tensor count.
CheckpointMeta open_checkpoint(Reader& r, std::uint32_t* version_out) {
  char magic[4];
  r.context = "magic";
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  r.context = "version";
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (version_out) *version_out = version;
  r.context = "metadata";
  const std::uint64_t meta_len = r.u64();
  r.need(meta_len);
  std::string meta_text(reinterpret_cast<const char*>(r.p + r.pos), meta_len);
  r.pos += meta_len;
  return meta_from_json(meta_text);
}

bool is_opt_name(const std::string& name) {
  return name.rfind(kOptM, 0) == 0 || name.rfind(kOptV, 0) == 0;
}

std::string dims_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void copy_into_param(Parameter& p, const RawTensor& t) {
  if (p.tensor.shape() != t.shape) {
    throw ShapeError("checkpoint tensor '" + t.name + "' has shape " +
                     dims_str(t.shape) + " but the model has " +
                     p.tensor.shape_str());
  }
  std::memcpy(p.tensor.data(), t.values.data(),
              t.values.size() * sizeof(double));
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointMeta& meta, const AdamW* opt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  CheckpointMeta m = meta;
  m.adam_t = opt ? opt->step_count() : 0;
  const std::string meta_text = meta_to_json(m);
  w.u64(meta_text.size());
  w.raw(meta_text.data(), meta_text.size());
  std::size_t count = store.all().size();
  if (opt) count += 2 * opt->slots().size();
  w.u32(static_cast<std::uint32_t>(count));
  for (const Parameter& p : store.all()) {
    w.tensor(p.name, p.tensor.data(), p.tensor.shape(), p.tensor.numel());
  }
  if (opt) {
    for (const auto& [name, slot] : opt->slots()) {
      const std::vector<int> shape = {static_cast<int>(slot.m.size())};
      w.tensor(kOptM + name, slot.m.data(), shape, slot.m.size());
      w.tensor(kOptV + name, slot.v.data(), shape, slot.v.size());
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw FormatError("short write to checkpoint '" + path + "'");
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store,
                               AdamW* opt) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r{bytes.data(), bytes.size()};
  CheckpointMeta meta = open_checkpoint(r, nullptr);
  r.context = "tensor count";
  const std::uint32_t count = r.u32();
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t = read_tensor(r, false);
    if (is_opt_name(t.name)) {
      if (!opt) continue;
      const bool is_m = t.name.rfind(kOptM, 0) == 0;
      const std::string pname = t.name.substr(6);
      if (!store.find(pname)) {
        throw FormatError("checkpoint optimizer slot '" + t.name +
                          "' names an unknown parameter");
      }
      auto& slot = opt->slots()[pname];
      (is_m ? slot.m : slot.v) = std::move(t.values);
      continue;
    }
    Parameter* p = store.find(t.name);
    if (!p) {
      throw FormatError("checkpoint tensor '" + t.name +
                        "' is not a model parameter");
    }
    copy_into_param(*p, t);
    seen.insert(t.name);
  }
  for (const Parameter& p : store.all()) {
    if (!seen.count(p.name)) {
      throw FormatError("checkpoint is missing parameter '" + p.name + "'");
    }
  }
  if (opt) opt->set_step_count(meta.adam_t);
  return meta;
}

CheckpointMeta load_checkpoint_groups(const std::string& path,
                                      ParamStore& store,
                                      const std::vector<Group>& groups) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r{bytes.data(), bytes.size()};
  CheckpointMeta meta = open_checkpoint(r, nullptr);
  r.context = "tensor count";
  const std::uint32_t count = r.u32();
  auto wanted = [&groups](Group g) {
    for (Group w : groups) {
      if (w == g) return true;
    }
    return false;
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t = read_tensor(r, false);
    if (is_opt_name(t.name)) continue;
    Parameter* p = store.find(t.name);
    if (!p || !wanted(p->group)) continue;
    copy_into_param(*p, t);
  }
  return meta;
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r{bytes.data(), bytes.size()};
  CheckpointInfo info;
  info.meta = open_checkpoint(r, &info.version);
  r.context = "tensor count";
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t = read_tensor(r, true);
    info.tensors.push_back(
        TensorInfo{std::move(t.name), t.dtype, std::move(t.shape)});
  }
  return info;
}

}  // namespace cvlm
