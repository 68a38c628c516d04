#include "demure/data/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "demure/errors.hpp"

namespace demure::data {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'F', 'T'};
constexpr std::uint32_t kVersion = 1;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }

  template <class T>
  T read(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw IngestError(std::string("DMFT: truncated payload while reading ") + what, pos_);
    }
    T v = 0;
    if constexpr (std::is_floating_point_v<T>) {
      std::uint32_t raw = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) raw |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
      v = std::bit_cast<T>(raw);
    } else {
      for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{bytes_[pos_ + i]} << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string read_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IngestError("DMFT: truncated modality name", pos_);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint64_t raw;
  if constexpr (std::is_same_v<T, float>) {
    raw = std::bit_cast<std::uint32_t>(v);
  } else {
    raw = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(raw >> (8 * i)));
}

}  // namespace

FeatureStore FeatureStore::single(ModalitySpec modality, std::vector<ItemId> ids,
                                  const nd::Array& features) {
  if (modality.dim == 0) throw ContractError("FeatureStore: modality dim must be positive");
  if (features.rows() != ids.size() || features.cols() != modality.dim) {
    throw ContractError("FeatureStore: feature matrix " + features.shape_string() +
                        " does not match " + std::to_string(ids.size()) + " items of dim " +
                        std::to_string(modality.dim));
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });

  FeatureStore store;
  store.modalities_.push_back(std::move(modality));
  store.ids_.reserve(ids.size());
  nd::Array sorted(ids.size(), features.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ItemId id = ids[order[i]];
    if (!store.ids_.empty() && store.ids_.back() == id) {
      throw DataError("FeatureStore: duplicate item id " + std::to_string(id));
    }
    store.ids_.push_back(id);
    store.index_.emplace(id, i);
    auto src = features.row_span(order[i]);
    std::copy(src.begin(), src.end(), sorted.row_span(i).begin());
  }
  store.features_.push_back(std::move(sorted));
  return store;
}

void FeatureStore::merge(const FeatureStore& other) {
  if (modalities_.empty()) {
    *this = other;
    return;
  }
  if (other.ids_ != ids_) {
    throw DataError("FeatureStore: modality '" +
                    (other.modalities_.empty() ? std::string("?") : other.modalities_[0].name) +
                    "' does not cover the same item set (" + std::to_string(other.ids_.size()) +
                    " vs " + std::to_string(ids_.size()) + " items)");
  }
  for (std::size_t m = 0; m < other.modalities_.size(); ++m) {
    for (const auto& existing : modalities_) {
      if (existing.name == other.modalities_[m].name) {
        throw DataError("FeatureStore: modality '" + existing.name + "' loaded twice");
      }
    }
    modalities_.push_back(other.modalities_[m]);
    features_.push_back(other.features_[m]);
  }
}

std::optional<std::size_t> FeatureStore::index_of(ItemId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t FeatureStore::require_index(ItemId id) const {
  if (auto idx = index_of(id)) return *idx;
  throw LookupError("FeatureStore: unknown item id " + std::to_string(id));
}

FeatureStore parse_feature_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IngestError("DMFT: bad magic (expected \"DMFT\")", 0);
  }
  in.read_string(4);
  const auto version_at = in.offset();
  const auto version = in.read<std::uint32_t>("version");
  if (version != kVersion) {
    throw IngestError("DMFT: unsupported version " + std::to_string(version), version_at);
  }
  const auto name_len = in.read<std::uint16_t>("name length");
  std::string name = in.read_string(name_len);
  const auto dim_at = in.offset();
  const auto dim = in.read<std::uint32_t>("dim");
  if (dim == 0) throw IngestError("DMFT: zero dimension", dim_at);
  const auto n_items = in.read<std::uint64_t>("item count");
  const std::uint64_t record = 8 + 4ull * dim;
  if (n_items > (bytes.size() - in.offset()) / record + 1) {
    throw IngestError("DMFT: truncated payload (header declares " + std::to_string(n_items) +
                          " items)",
                      in.offset());
  }

  std::vector<ItemId> ids;
  ids.reserve(n_items);
  nd::Array values(n_items, dim);
  std::unordered_map<ItemId, std::uint64_t> seen;
  for (std::uint64_t i = 0; i < n_items; ++i) {
    const auto at = in.offset();
    const auto id = in.read<std::uint64_t>("item id");
    if (!seen.emplace(id, at).second) {
      throw IngestError("DMFT: duplicate item id " + std::to_string(id), at);
    }
    ids.push_back(id);
    auto row = values.row_span(i);
    for (std::uint32_t k = 0; k < dim; ++k) {
      const auto v_at = in.offset();
      const float v = in.read<float>("feature value");
      if (!std::isfinite(v)) {
        throw IngestError("DMFT: non-finite feature for item " + std::to_string(id), v_at);
      }
      row[k] = static_cast<double>(v);
    }
  }
  if (in.offset() != bytes.size()) {
    throw IngestError("DMFT: trailing bytes after " + std::to_string(n_items) + " items",
                      in.offset());
  }
  return FeatureStore::single({std::move(name), dim}, std::move(ids), values);
}

FeatureStore read_feature_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open feature file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_feature_bytes(bytes);
  } catch (const IngestError& e) {
    throw IngestError(path.string() + ": " + e.what(), e.offset());
  }
}

std::vector<std::uint8_t> serialize_feature_modality(const FeatureStore& store, std::size_t m) {
  const ModalitySpec& spec = store.modalities().at(m);
  if (spec.name.size() > 0xFFFF) throw ContractError("DMFT: modality name too long");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(spec.name.size()));
  out.insert(out.end(), spec.name.begin(), spec.name.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.dim));
  put<std::uint64_t>(out, store.num_items());
  for (std::size_t i = 0; i < store.num_items(); ++i) {
    put<std::uint64_t>(out, store.item_id(i));
    for (double v : store.feature(m, i)) put<float>(out, static_cast<float>(v));
  }
  return out;
}

void write_feature_file(const std::filesystem::path& path, const FeatureStore& store,
                        std::size_t m) {
  const auto bytes = serialize_feature_modality(store, m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write feature file " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace demure::data
