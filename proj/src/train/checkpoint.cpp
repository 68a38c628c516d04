#include "demure/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <zlib.h>

#include "demure/errors.hpp"

namespace demure::train {

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
    }
  }
  void put_f64(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, sizeof u);
    put(u);
  }
  void put_str32(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double get_f64() {
    const auto u = get<std::uint64_t>();
    double d;
    std::memcpy(&d, &u, sizeof d);
    return d;
  }
  std::string get_str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > b_.size()) throw DataError("checkpoint truncated at byte offset " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

void put_array(Writer& w, const nd::Array& a) {
  for (double v : a.data()) w.put_f64(v);
}

nd::Array get_array(Reader& r, std::size_t rows, std::size_t cols) {
  nd::Array a(rows, cols);
  for (auto& v : a.data()) v = r.get_f64();
  return a;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : std::string("DMCK")) w.put(static_cast<std::uint8_t>(c));
  w.put(kVersion);
  const auto cfg = ckpt.config.to_json();
  w.put(config_hash(cfg));
  w.put_str32(cfg.dump());
  w.put(ckpt.progress.epoch);
  w.put(ckpt.progress.step_in_epoch);
  w.put(ckpt.progress.global_step);
  w.put_str32(ckpt.rng_state);
  w.put(ckpt.optimizer.step);
  const auto named = ckpt.params.named();
  if (ckpt.optimizer.m.size() != named.size() || ckpt.optimizer.v.size() != named.size()) {
    throw ContractError("checkpoint: optimizer moments do not match parameters");
  }
  w.put(static_cast<std::uint32_t>(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& a = *named[i].array;
    w.put(static_cast<std::uint16_t>(named[i].name.size()));
    w.bytes.insert(w.bytes.end(), named[i].name.begin(), named[i].name.end());
    w.put(static_cast<std::uint32_t>(a.rows()));
    w.put(static_cast<std::uint32_t>(a.cols()));
    put_array(w, a);
    put_array(w, ckpt.optimizer.m[i]);
    put_array(w, ckpt.optimizer.v[i]);
  }
  w.put(crc32_of(w.bytes));
  return std::move(w.bytes);
}

LoadedCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes, const TrainConfig* expected) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "DMCK", 4) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.subspan(bytes.size() - 4));
  if (tail.get<std::uint32_t>() != crc32_of(body)) {
    throw DataError("checkpoint checksum mismatch (file is corrupt or truncated)");
  }
  Reader r(body);
  r.get_str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint out;
  Checkpoint& c = out.checkpoint;
  out.config_hash = r.get<std::uint64_t>();
  const std::string cfg_text = r.get_str(r.get<std::uint32_t>());
  try {
    c.config = TrainConfig::from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  c.progress.epoch = r.get<std::uint64_t>();
  c.progress.step_in_epoch = r.get<std::uint64_t>();
  c.progress.global_step = r.get<std::uint64_t>();
  c.rng_state = r.get_str(r.get<std::uint32_t>());
  c.optimizer.step = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();

  std::vector<std::string> names;
  std::vector<nd::Array> values;
  for (std::uint32_t i = 0; i < count; ++i) {
    names.push_back(r.get_str(r.get<std::uint16_t>()));
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    values.push_back(get_array(r, rows, cols));
    c.optimizer.m.push_back(get_array(r, rows, cols));
    c.optimizer.v.push_back(get_array(r, rows, cols));
  }
  if (r.pos() != body.size()) throw DataError("checkpoint has trailing bytes");

  std::size_t n_proj = 0;
  while (n_proj < names.size() && names[n_proj].rfind("input_proj.", 0) == 0) ++n_proj;
  c.params.input_proj.resize(n_proj);
  auto slots = c.params.named();
  if (slots.size() != names.size()) throw DataError("checkpoint parameter list is incomplete");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != names[i]) {
      throw DataError("checkpoint parameter " + std::to_string(i) + " is '" + names[i] +
                      "', expected '" + slots[i].name + "'");
    }
    *slots[i].array = std::move(values[i]);
  }

  const std::uint64_t recomputed = config_hash(c.config);
  if (recomputed != out.config_hash) {
    out.config_mismatch = true;
    out.warning = "stored config hash does not match the stored config";
  }
  if (expected != nullptr && config_hash(*expected) != out.config_hash) {
    out.config_mismatch = true;
    out.warning = "checkpoint was written with a different config";
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("cannot write checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes, expected);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace demure::train
