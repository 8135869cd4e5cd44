// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqfuse/error.hpp"

namespace seqfuse {

using json = nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw DataError("unknown split '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<FeatureRecord> records, int declared_cameras)
    : records_(std::move(records)), declared_cameras_(declared_cameras) {
  if (declared_cameras_ < 0) throw DataError("declared camera count must be >= 0");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const FeatureRecord& r = records_[i];
    if (r.id.empty()) throw DataError("record " + std::to_string(i) + " has an empty id");
    if (i == 0) dim_ = r.feature.size();
    if (r.feature.size() != dim_) {
      throw DataError("record '" + r.id + "' has feature dimension " + std::to_string(r.feature.size()) +
                      ", expected " + std::to_string(dim_));
    }
    if (r.cam < 1) throw DataError("record '" + r.id + "' has camera id " + std::to_string(r.cam) + " < 1");
    if (declared_cameras_ > 0 && r.cam > declared_cameras_) {
      throw DataError("record '" + r.id + "' has camera id " + std::to_string(r.cam) +
                      " above the declared count " + std::to_string(declared_cameras_));
    }
    if (!by_id_.emplace(r.id, i).second) throw DataError("duplicate record id '" + r.id + "'");
    by_key_[{static_cast<int>(r.split), r.pid, r.cam}].push_back(i);
    by_split_[static_cast<int>(r.split)].push_back(i);
  }
  for (auto& [key, list] : by_key_) {
    std::sort(list.begin(), list.end(),
              [&](std::size_t a, std::size_t b) { return records_[a].id < records_[b].id; });
  }
}

int Dataset::camera_count() const {
  if (declared_cameras_ > 0) return declared_cameras_;
  int n = 0;
  for (const auto& r : records_) n = std::max(n, r.cam);
  return n;
}

std::optional<std::size_t> Dataset::find(std::string_view record_id) const {
  auto it = by_id_.find(std::string(record_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::span<const std::size_t> Dataset::records_of(Split split, int pid, int cam) const {
  auto it = by_key_.find({static_cast<int>(split), pid, cam});
  if (it == by_key_.end()) return {};
  return it->second;
}

std::span<const std::size_t> Dataset::split_records(Split split) const {
  return by_split_[static_cast<int>(split)];
}

std::vector<int> Dataset::identities(Split split) const {
  std::set<int> ids;
  for (std::size_t i : split_records(split)) ids.insert(records_[i].pid);
  return {ids.begin(), ids.end()};
}

std::vector<int> Dataset::cameras_of(Split split, int pid) const {
  std::vector<int> cams;
  auto it = by_key_.lower_bound({static_cast<int>(split), pid, 0});
  for (; it != by_key_.end(); ++it) {
    const auto& [s, p, c] = it->first;
    if (s != static_cast<int>(split) || p != pid) break;
    cams.push_back(c);
  }
  return cams;
}

// ---------------------------------------------------------------------------
// Manifest

std::string format_float(float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw DataError("cannot format float");
  return std::string(buf, end);
}

namespace {

std::vector<float> read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature blob " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) throw DataError("feature blob size is not a multiple of 4 bytes");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    }
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

std::string line_error(std::size_t line_no, const std::string& what) {
  return "manifest line " + std::to_string(line_no) + ": " + what;
}

}  // namespace

Dataset parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<FeatureRecord> records;
  int declared_cameras = 0;
  std::optional<std::size_t> declared_dim;
  std::vector<float> blob;
  bool have_blob = false;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(line_error(line_no, std::string("malformed JSON: ") + e.what()));
    }
    if (!obj.is_object()) throw DataError(line_error(line_no, "expected a JSON object"));

    try {
      if (obj.contains("manifest")) {
        if (!records.empty()) throw DataError(line_error(line_no, "header must precede records"));
        if (obj.at("manifest") != "seqfuse") throw DataError(line_error(line_no, "unknown manifest kind"));
        const int version = obj.value("version", 1);
        if (version != 1) throw DataError(line_error(line_no, "unsupported manifest version " + std::to_string(version)));
        declared_cameras = obj.value("cameras", 0);
        if (obj.contains("dim")) declared_dim = obj.at("dim").get<std::size_t>();
        if (obj.contains("blob")) {
          blob = read_blob(base_dir / obj.at("blob").get<std::string>());
          have_blob = true;
        }
        continue;
      }

      FeatureRecord r;
      r.id = obj.at("id").get<std::string>();
      r.pid = obj.at("pid").get<int>();
      r.cam = obj.at("cam").get<int>();
      r.split = parse_split(obj.at("split").get<std::string>());
      if (obj.contains("feat")) {
        for (const auto& v : obj.at("feat")) {
          if (!v.is_number()) throw DataError(line_error(line_no, "non-numeric feature value"));
          r.feature.push_back(static_cast<float>(v.get<double>()));
        }
      } else if (obj.contains("feat_off")) {
        if (!have_blob) throw DataError(line_error(line_no, "feat_off without a blob in the header"));
        if (!declared_dim) throw DataError(line_error(line_no, "feat_off requires a declared dim"));
        const auto off = obj.at("feat_off").get<std::size_t>();
        if (off % 4 != 0 || off / 4 + *declared_dim > blob.size()) {
          throw DataError(line_error(line_no, "feat_off out of range"));
        }
        r.feature.assign(blob.begin() + off / 4, blob.begin() + off / 4 + *declared_dim);
      } else {
        throw DataError(line_error(line_no, "record has neither feat nor feat_off"));
      }
      if (obj.contains("img")) r.image = obj.at("img").get<std::string>();
      if (declared_dim && r.feature.size() != *declared_dim) {
        throw DataError(line_error(line_no, "feature dimension " + std::to_string(r.feature.size()) +
                                                " does not match declared dim " + std::to_string(*declared_dim)));
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(line_error(line_no, e.what()));
    }
  }
  return Dataset(std::move(records), declared_cameras);
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

namespace {

void write_record_prefix(std::string& out, const FeatureRecord& r) {
  out += "{\"id\":";
  out += json(r.id).dump();
  out += ",\"pid\":" + std::to_string(r.pid);
  out += ",\"cam\":" + std::to_string(r.cam);
  out += ",\"split\":\"";
  out += to_string(r.split);
  out += '"';
}

void write_record_suffix(std::string& out, const FeatureRecord& r) {
  if (r.image) {
    out += ",\"img\":";
    out += json(*r.image).dump();
  }
  out += "}\n";
}

std::string header_line(const Dataset& d, const std::string& blob) {
  std::string out = "{\"manifest\":\"seqfuse\",\"version\":1,\"cameras\":" +
                    std::to_string(d.declared_cameras()) + ",\"dim\":" + std::to_string(d.dim());
  if (!blob.empty()) out += ",\"blob\":" + json(blob).dump();
  out += "}\n";
  return out;
}

}  // namespace

std::string format_manifest(const Dataset& dataset) {
  std::string out = header_line(dataset, "");
  for (const auto& r : dataset.records()) {
    write_record_prefix(out, r);
    out += ",\"feat\":[";
    for (std::size_t i = 0; i < r.feature.size(); ++i) {
      if (i) out += ',';
      out += format_float(r.feature[i]);
    }
    out += ']';
    write_record_suffix(out, r);
  }
  return out;
}

void save_manifest(const Dataset& dataset, const std::filesystem::path& path, const ManifestOptions& options) {
  std::string text;
  if (options.blob) {
    const auto blob_path = path.parent_path() / *options.blob;
    std::ofstream blob_out(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob_out) throw DataError("cannot write feature blob " + blob_path.string());
    text = header_line(dataset, options.blob->string());
    std::size_t offset = 0;
    for (const auto& r : dataset.records()) {
      for (float v : r.feature) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                               static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
        blob_out.write(bytes, 4);
      }
      write_record_prefix(text, r);
      text += ",\"feat_off\":" + std::to_string(offset);
      offset += 4 * r.feature.size();
      write_record_suffix(text, r);
    }
  } else {
    text = format_manifest(dataset);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << text;
}

}  // namespace seqfuse
