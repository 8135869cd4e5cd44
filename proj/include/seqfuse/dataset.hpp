// SPDX-License-Identifier: Apache-2.0
//
// Feature records, the in-memory dataset index, and the line-delimited
// manifest format.
//
// Manifest format (one JSON object per line, UTF-8, '\n' terminated):
//
//   {"manifest":"seqfuse","version":1,"cameras":6,"dim":32}        optional header
//   {"id":"r0","pid":3,"cam":1,"split":"train","feat":[0.5,-1.25]}
//   {"id":"r1","pid":3,"cam":2,"split":"query","feat":[...],"img":"a.jpg"}
//
// When the header names a "blob" file, records may carry "feat_off" (a byte
// offset into that little-endian float32 file) instead of "feat".
// Floats are written in shortest round-trip decimal form. Blank lines are
// ignored.
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "seqfuse/fusion.hpp"

namespace seqfuse {

enum class Split { train, query, gallery };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct FeatureRecord {
  std::string id;
  int pid = 0;
  int cam = 1;
  Split split = Split::train;
  std::vector<float> feature;
  std::optional<std::string> image;

  Vec feature_f64() const { return Vec(feature.begin(), feature.end()); }
  bool operator==(const FeatureRecord&) const = default;
};

/// Immutable once built; indexes records by id, split, identity and camera.
class Dataset {
 public:
  Dataset() = default;
  /// declared_cameras == 0 means "not declared" (no upper bound check).
  Dataset(std::vector<FeatureRecord> records, int declared_cameras = 0);

  const std::vector<FeatureRecord>& records() const { return records_; }
  const FeatureRecord& record(std::size_t index) const { return records_.at(index); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t dim() const { return dim_; }
  int declared_cameras() const { return declared_cameras_; }
  /// Declared camera count, or the largest camera id seen.
  int camera_count() const;

  std::optional<std::size_t> find(std::string_view record_id) const;
  /// Record indices for (split, pid, cam), sorted by record id.
  std::span<const std::size_t> records_of(Split split, int pid, int cam) const;
  /// Record indices of a split, in file order.
  std::span<const std::size_t> split_records(Split split) const;
  /// Sorted identities present in a split.
  std::vector<int> identities(Split split) const;
  /// Sorted cameras in which `pid` has at least one record of `split`.
  std::vector<int> cameras_of(Split split, int pid) const;
  bool has(Split split, int pid, int cam) const { return !records_of(split, pid, cam).empty(); }

 private:
  using Key = std::tuple<int, int, int>;  // split, pid, cam

  std::vector<FeatureRecord> records_;
  int declared_cameras_ = 0;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<Key, std::vector<std::size_t>> by_key_;
  std::array<std::vector<std::size_t>, 3> by_split_;
};

struct ManifestOptions {
  /// Write features into a sidecar float32 blob instead of inline arrays.
  std::optional<std::filesystem::path> blob;
};

Dataset load_manifest(const std::filesystem::path& path);
Dataset parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
void save_manifest(const Dataset& dataset, const std::filesystem::path& path,
                   const ManifestOptions& options = {});
std::string format_manifest(const Dataset& dataset);

/// Shortest decimal that parses back to exactly `v`.
std::string format_float(float v);

}  // namespace seqfuse
