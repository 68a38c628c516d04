#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "demure/ndcore/array.hpp"

namespace demure::data {

using ItemId = std::uint64_t;
using UserId = std::uint64_t;

struct ModalitySpec {
  std::string name;
  std::size_t dim = 0;

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;
};

/// Per-modality dense features for the whole item gallery.
///
/// Items are addressed internally by a dense gallery index (position in the
/// ascending id order); every item carries a vector for every modality.
class FeatureStore {
 public:
  FeatureStore() = default;

  /// Single-modality store; `features` holds one row per entry of `ids`.
  static FeatureStore single(ModalitySpec modality, std::vector<ItemId> ids,
                             const nd::Array& features);

  /// Adds the modalities of `other`; both stores must cover the same items.
  void merge(const FeatureStore& other);

  const std::vector<ModalitySpec>& modalities() const noexcept { return modalities_; }
  std::size_t num_modalities() const noexcept { return modalities_.size(); }
  std::size_t num_items() const noexcept { return ids_.size(); }
  const std::vector<ItemId>& item_ids() const noexcept { return ids_; }
  ItemId item_id(std::size_t index) const { return ids_.at(index); }

  std::optional<std::size_t> index_of(ItemId id) const;
  std::size_t require_index(ItemId id) const;

  // gallery_size x dim matrix of modality m.
  const nd::Array& features(std::size_t m) const { return features_.at(m); }
  std::span<const double> feature(std::size_t m, std::size_t index) const {
    return features_.at(m).row_span(index);
  }

  friend bool operator==(const FeatureStore& a, const FeatureStore& b) {
    return a.modalities_ == b.modalities_ && a.ids_ == b.ids_ && a.features_ == b.features_;
  }

 private:
  std::vector<ModalitySpec> modalities_;
  std::vector<ItemId> ids_;
  std::unordered_map<ItemId, std::size_t> index_;
  std::vector<nd::Array> features_;
};

/// Reads one DMFT feature file (one modality).
///
/// Layout, little-endian: "DMFT", u32 version (1), u16 name length, UTF-8
/// name, u32 dim, u64 item count, then per item a u64 id and dim f32 values.
FeatureStore read_feature_file(const std::filesystem::path& path);
FeatureStore parse_feature_bytes(std::span<const std::uint8_t> bytes);

/// Writes modality `m` of `store` as a DMFT file (values narrowed to f32).
void write_feature_file(const std::filesystem::path& path, const FeatureStore& store,
                        std::size_t m);
std::vector<std::uint8_t> serialize_feature_modality(const FeatureStore& store, std::size_t m);

}  // namespace demure::data
