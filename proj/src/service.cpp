// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/service.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "seqfuse/error.hpp"

namespace seqfuse {

std::string_view to_string(ServiceMode m) { return m == ServiceMode::study ? "study" : "demo"; }

ServiceMode parse_service_mode(std::string_view s) {
  if (s == "demo") return ServiceMode::demo;
  if (s == "study") return ServiceMode::study;
  throw ArgumentError("unknown service mode '" + std::string(s) + "' (expected demo or study)");
}

namespace {

struct Ranked {
  std::size_t record = 0;
  double distance = 0.0;
};

std::string percent_encode(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

std::string thumbnail_ref(const std::string& record_id) {
  return "/v1/records/" + percent_encode(record_id) + "/thumbnail";
}

std::uint64_t session_number(const std::string& id) {
  if (id.size() < 2 || id[0] != 's') throw NotFoundError("unknown session '" + id + "'");
  std::uint64_t n = 0;
  for (std::size_t i = 1; i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9' || n > (UINT64_MAX - 9) / 10) throw NotFoundError("unknown session '" + id + "'");
    n = n * 10 + static_cast<std::uint64_t>(id[i] - '0');
  }
  if (id[1] == '0') throw NotFoundError("unknown session '" + id + "'");
  return n;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

struct OperatorService::Session {
  std::string id;
  std::size_t query = 0;
  Fuser fuser = Fuser::gru;
  std::vector<int> scope;
  std::vector<Confirmation> confirmations;
  std::vector<std::size_t> confirmed_records;
  double shown_at = 0.0;
  std::map<int, std::vector<Ranked>> ranked;  // remaining cameras only
  std::vector<LogEntry> log;

  std::size_t k() const { return 1 + confirmations.size(); }
  bool confirmed(int cam) const {
    return std::any_of(confirmations.begin(), confirmations.end(), [&](const Confirmation& c) { return c.camera == cam; });
  }
};

struct OperatorService::Slot {
  mutable std::mutex mutex;
  Session session;
};

OperatorService::OperatorService(std::shared_ptr<const Dataset> dataset, std::optional<FusionModel> model,
                                 ServiceConfig config)
    : dataset_(std::move(dataset)), model_(std::move(model)), config_(std::move(config)) {
  if (!dataset_) throw ArgumentError("service needs a dataset");
  if (config_.default_top == 0) throw ArgumentError("default list length must be positive");
  if (model_) {
    model_->validate();
    if (!dataset_->empty() && model_->config.input_dim != dataset_->dim()) {
      throw DimensionError("model expects " + std::to_string(model_->config.input_dim) +
                           "-dimensional features, dataset has " + std::to_string(dataset_->dim()));
    }
  }
  for (std::size_t r : dataset_->split_records(Split::gallery)) gallery_by_cam_[dataset_->record(r).cam].push_back(r);

  if (config_.journal) {
    if (std::filesystem::exists(*config_.journal)) replay(*config_.journal);
    journal_out_ = std::make_unique<std::ofstream>(*config_.journal, std::ios::app | std::ios::binary);
    if (!*journal_out_) throw DataError("cannot open journal " + config_.journal->string());
  }
}

OperatorService::~OperatorService() {
  try {
    flush();
  } catch (...) {
  }
}

double OperatorService::now() const {
  if (config_.clock) return config_.clock();
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void OperatorService::flush() {
  std::lock_guard lock(journal_mutex_);
  if (journal_out_) journal_out_->flush();
}

void OperatorService::journal(const nlohmann::json& line) {
  std::lock_guard lock(journal_mutex_);
  if (!journal_out_) return;
  *journal_out_ << line.dump() << '\n';
  journal_out_->flush();
  if (!*journal_out_) throw DataError("journal write failed");
}

void OperatorService::replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read journal " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string op = j.at("op").get<std::string>();
      const double t = j.at("t").get<double>();
      if (op == "create") {
        CreateSessionRequest req;
        req.query_record = j.at("query").get<std::string>();
        req.fuser = parse_fuser(j.at("fuser").get<std::string>());
        req.scope = j.at("scope").get<std::vector<int>>();
        const SessionView v = do_create(req, t, false);
        if (v.id != j.at("session").get<std::string>()) throw DataError("session id out of sequence");
      } else if (op == "confirm") {
        do_confirm(j.at("session").get<std::string>(), j.at("camera").get<int>(), j.at("record").get<std::string>(),
                   j.at("elapsed").get<double>(), t, false);
      } else if (op == "restart") {
        do_restart(j.at("session").get<std::string>(), t, false);
      } else {
        throw DataError("unknown op '" + op + "'");
      }
    } catch (const std::exception& e) {
      throw DataError("journal line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

OperatorService::Slot& OperatorService::slot(const std::string& session_id) const {
  const std::uint64_t n = session_number(session_id);
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(n);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  return *it->second;
}

void OperatorService::rerank(Session& s) const {
  const FusionModel* model = model_ ? &*model_ : nullptr;
  const Dataset& d = *dataset_;
  Vec q;
  std::size_t k = 1;
  if (s.fuser == Fuser::single_query) {
    q = d.record(s.query).feature_f64();
  } else {
    std::vector<Vec> seq{d.record(s.query).feature_f64()};
    for (std::size_t r : s.confirmed_records) seq.push_back(d.record(r).feature_f64());
    k = seq.size();
    q = query_representation(model, s.fuser, seq);
  }
  s.ranked.clear();
  for (int cam : s.scope) {
    if (s.confirmed(cam)) continue;
    std::vector<Ranked>& out = s.ranked[cam];
    const auto it = gallery_by_cam_.find(cam);
    if (it == gallery_by_cam_.end()) continue;
    std::vector<Vec> reps;
    reps.reserve(it->second.size());
    for (std::size_t r : it->second) reps.push_back(gallery_representation(model, s.fuser, d.record(r).feature_f64(), k));
    for (const RankedEntry& e : rank_gallery(q, reps)) out.push_back({it->second[e.index], e.distance});
  }
}

CameraList OperatorService::camera_list(const Session& s, int camera, std::size_t top) const {
  const auto it = s.ranked.find(camera);
  if (it == s.ranked.end()) {
    if (s.confirmed(camera)) throw ConflictError("camera " + std::to_string(camera) + " is already confirmed");
    throw NotFoundError("camera " + std::to_string(camera) + " is not in the session scope");
  }
  const bool study = config_.mode == ServiceMode::study;
  const Dataset& d = *dataset_;
  const int pid = d.record(s.query).pid;
  CameraList out;
  out.camera = camera;
  out.total = it->second.size();
  for (std::size_t i = 0; i < it->second.size() && i < top; ++i) {
    const FeatureRecord& r = d.record(it->second[i].record);
    ListEntry e;
    e.record_id = r.id;
    if (study) e.pid = r.pid;
    e.camera = r.cam;
    e.distance = it->second[i].distance;
    e.rank = i + 1;
    e.image_ref = thumbnail_ref(r.id);
    out.entries.push_back(std::move(e));
  }
  if (study) {
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (d.record(it->second[i].record).pid == pid) {
        out.first_correct_rank = i + 1;
        break;
      }
    }
  }
  return out;
}

SessionView OperatorService::view(const Session& s, std::size_t top) const {
  SessionView v;
  v.id = s.id;
  v.query_record = dataset_->record(s.query).id;
  if (config_.mode == ServiceMode::study) v.query_pid = dataset_->record(s.query).pid;
  v.fuser = s.fuser;
  v.mode = config_.mode;
  v.k = s.k();
  v.scope = s.scope;
  v.confirmations = s.confirmations;
  for (const auto& [cam, list] : s.ranked) {
    v.remaining.push_back(cam);
    v.lists.push_back(camera_list(s, cam, top));
  }
  v.complete = v.remaining.empty();
  return v;
}

SessionView OperatorService::create_session(const CreateSessionRequest& request) {
  return do_create(request, now(), true);
}

SessionView OperatorService::do_create(const CreateSessionRequest& request, double t, bool record) {
  const Dataset& d = *dataset_;
  const auto query = d.find(request.query_record);
  if (!query) throw NotFoundError("unknown record '" + request.query_record + "'");
  const Fuser fuser = request.fuser.value_or(model_ ? Fuser::gru : Fuser::mean);
  if (fuser == Fuser::gru && !model_) throw ArgumentError("no model loaded; the gru fuser is unavailable");

  std::vector<int> scope;
  if (request.scope) {
    scope = *request.scope;
    std::sort(scope.begin(), scope.end());
    if (scope.empty()) throw ArgumentError("gallery scope is empty");
    if (std::adjacent_find(scope.begin(), scope.end()) != scope.end()) {
      throw ArgumentError("gallery scope lists a camera twice");
    }
    for (int cam : scope) {
      if (cam < 1 || cam > d.camera_count()) throw ArgumentError("camera " + std::to_string(cam) + " does not exist");
    }
  } else {
    for (const auto& [cam, recs] : gallery_by_cam_) {
      if (cam != d.record(*query).cam) scope.push_back(cam);
    }
    if (scope.empty()) throw ArgumentError("no gallery camera besides the query's own");
  }

  auto slot = std::make_unique<Slot>();
  Session& s = slot->session;
  s.query = *query;
  s.fuser = fuser;
  s.scope = std::move(scope);
  s.shown_at = t;
  rerank(s);

  std::unique_lock lock(sessions_mutex_);
  const std::uint64_t n = next_id_++;
  s.id = "s" + std::to_string(n);
  if (record) {
    journal({{"op", "create"},
             {"session", s.id},
             {"query", request.query_record},
             {"fuser", std::string(to_string(fuser))},
             {"scope", s.scope},
             {"t", t}});
  }
  SessionView v = view(s, config_.default_top);
  sessions_.emplace(n, std::move(slot));
  return v;
}

SessionView OperatorService::confirm(const std::string& session_id, int camera, const std::string& record_id,
                                     std::optional<double> elapsed_seconds) {
  return do_confirm(session_id, camera, record_id, elapsed_seconds, now(), true);
}

SessionView OperatorService::do_confirm(const std::string& id, int camera, const std::string& record_id,
                                        std::optional<double> elapsed, double t, bool record) {
  Slot& sl = slot(id);
  std::lock_guard lock(sl.mutex);
  Session& s = sl.session;
  const Dataset& d = *dataset_;
  if (s.confirmed(camera)) throw ConflictError("camera " + std::to_string(camera) + " is already confirmed");
  if (!s.ranked.contains(camera)) {
    throw NotFoundError("camera " + std::to_string(camera) + " is not in the session scope");
  }
  const auto r = d.find(record_id);
  if (!r) throw NotFoundError("unknown record '" + record_id + "'");
  const FeatureRecord& rec = d.record(*r);
  if (rec.split != Split::gallery || rec.cam != camera) {
    throw ArgumentError("record '" + record_id + "' is not in the gallery of camera " + std::to_string(camera));
  }
  if (elapsed && !(*elapsed >= 0.0)) throw ArgumentError("elapsed time must be non-negative");

  LogEntry entry;
  entry.k = s.k();
  entry.camera = camera;
  entry.record_id = record_id;
  entry.elapsed_seconds = elapsed.value_or(std::max(0.0, t - s.shown_at));
  const int pid = d.record(s.query).pid;
  for (const auto& [cam, list] : s.ranked) {
    std::optional<std::size_t> first;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (d.record(list[i].record).pid == pid) {
        first = i + 1;
        break;
      }
    }
    entry.first_correct[cam] = first;
  }

  Session next = s;
  next.confirmations.push_back({camera, record_id, t});
  next.confirmed_records.push_back(*r);
  next.log.push_back(entry);
  next.shown_at = t;
  rerank(next);
  if (record) {
    journal({{"op", "confirm"},
             {"session", id},
             {"camera", camera},
             {"record", record_id},
             {"elapsed", entry.elapsed_seconds},
             {"t", t}});
  }
  s = std::move(next);
  return view(s, config_.default_top);
}

SessionView OperatorService::restart(const std::string& session_id) { return do_restart(session_id, now(), true); }

SessionView OperatorService::do_restart(const std::string& id, double t, bool record) {
  Slot& sl = slot(id);
  std::lock_guard lock(sl.mutex);
  Session& s = sl.session;
  s.confirmations.clear();
  s.confirmed_records.clear();
  s.shown_at = t;
  rerank(s);
  if (record) journal({{"op", "restart"}, {"session", id}, {"t", t}});
  return view(s, config_.default_top);
}

SessionView OperatorService::get_state(const std::string& session_id, std::optional<std::size_t> top) const {
  const Slot& sl = slot(session_id);
  std::lock_guard lock(sl.mutex);
  return view(sl.session, top.value_or(config_.default_top));
}

CameraList OperatorService::get_list(const std::string& session_id, int camera, std::optional<std::size_t> top) const {
  const Slot& sl = slot(session_id);
  std::lock_guard lock(sl.mutex);
  return camera_list(sl.session, camera, top.value_or(config_.default_top));
}

std::vector<std::string> OperatorService::session_ids() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<std::string> out;
  for (const auto& [n, slot] : sessions_) out.push_back("s" + std::to_string(n));
  return out;
}

std::vector<SessionLog> OperatorService::logs(const std::optional<std::string>& session_id) const {
  std::vector<const Slot*> slots;
  if (session_id) {
    slots.push_back(&slot(*session_id));
  } else {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [n, sl] : sessions_) slots.push_back(sl.get());
  }
  std::vector<SessionLog> out;
  for (const Slot* sl : slots) {
    std::lock_guard lock(sl->mutex);
    const Session& s = sl->session;
    SessionLog log{s.id, dataset_->record(s.query).id, s.fuser, s.log};
    if (config_.mode != ServiceMode::study) {
      for (LogEntry& e : log.entries) e.first_correct.clear();
    }
    out.push_back(std::move(log));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const ListEntry& e) {
  nlohmann::json j = {{"record", e.record_id},
                      {"camera", e.camera},
                      {"distance", e.distance},
                      {"rank", e.rank},
                      {"image", e.image_ref}};
  if (e.pid) j["pid"] = *e.pid;
  return j;
}

nlohmann::json to_json(const CameraList& l) {
  nlohmann::json entries = nlohmann::json::array();
  for (const ListEntry& e : l.entries) entries.push_back(to_json(e));
  nlohmann::json j = {{"camera", l.camera}, {"total", l.total}, {"entries", entries}};
  if (l.first_correct_rank) j["first_correct_rank"] = *l.first_correct_rank;
  return j;
}

nlohmann::json to_json(const SessionView& v) {
  nlohmann::json confirmations = nlohmann::json::array();
  for (const Confirmation& c : v.confirmations) {
    confirmations.push_back({{"camera", c.camera}, {"record", c.record_id}, {"timestamp", c.timestamp}});
  }
  nlohmann::json lists = nlohmann::json::array();
  for (const CameraList& l : v.lists) lists.push_back(to_json(l));
  nlohmann::json j = {{"id", v.id},
                      {"query_record", v.query_record},
                      {"fuser", std::string(to_string(v.fuser))},
                      {"mode", std::string(to_string(v.mode))},
                      {"k", v.k},
                      {"scope", v.scope},
                      {"confirmations", confirmations},
                      {"remaining", v.remaining},
                      {"lists", lists},
                      {"complete", v.complete}};
  if (v.query_pid) j["query_pid"] = *v.query_pid;
  return j;
}

nlohmann::json to_json(const LogEntry& e) {
  nlohmann::json first = nlohmann::json::object();
  for (const auto& [cam, rank] : e.first_correct) first[std::to_string(cam)] = optional_json(rank);
  return {{"k", e.k},
          {"camera", e.camera},
          {"record", e.record_id},
          {"elapsed_seconds", e.elapsed_seconds},
          {"first_correct", first}};
}

nlohmann::json to_json(const SessionLog& l) {
  nlohmann::json entries = nlohmann::json::array();
  for (const LogEntry& e : l.entries) entries.push_back(to_json(e));
  return {{"session", l.session_id},
          {"query_record", l.query_record},
          {"fuser", std::string(to_string(l.fuser))},
          {"entries", entries}};
}

nlohmann::json logs_document(const std::vector<SessionLog>& logs) {
  nlohmann::json sessions = nlohmann::json::array();
  for (const SessionLog& l : logs) sessions.push_back(to_json(l));
  return {{"sessions", sessions}};
}

std::vector<SessionLog> parse_logs_document(const nlohmann::json& doc) {
  std::vector<SessionLog> out;
  try {
    for (const auto& js : doc.at("sessions")) {
      SessionLog l;
      l.session_id = js.at("session").get<std::string>();
      l.query_record = js.at("query_record").get<std::string>();
      l.fuser = parse_fuser(js.at("fuser").get<std::string>());
      for (const auto& je : js.at("entries")) {
        LogEntry e;
        e.k = je.at("k").get<std::size_t>();
        e.camera = je.at("camera").get<int>();
        e.record_id = je.at("record").get<std::string>();
        e.elapsed_seconds = je.at("elapsed_seconds").get<double>();
        for (const auto& [cam, rank] : je.at("first_correct").items()) {
          e.first_correct[std::stoi(cam)] =
              rank.is_null() ? std::nullopt : std::optional<std::size_t>(rank.get<std::size_t>());
        }
        l.entries.push_back(std::move(e));
      }
      out.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed log document: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("malformed log document: camera keys must be integers");
  }
  return out;
}

std::string identicon_svg(int pid, int camera) {
  // Hue from the identity, lightness from the camera.
  const std::uint64_t h = splitmix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(pid)));
  const int hue = static_cast<int>(h % 360);
  const int light = 35 + (camera * 7) % 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"100\" height=\"100\" viewBox=\"0 0 5 5\""
      << " shape-rendering=\"crispEdges\">";
  svg << "<rect width=\"5\" height=\"5\" fill=\"hsl(" << hue << ",20%,92%)\"/>";
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 3; ++x) {
      if (((h >> (8 + y * 3 + x)) & 1u) == 0) continue;
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"1\" height=\"1\" fill=\"hsl(" << hue << ",60%,"
          << light << "%)\"/>";
      if (x < 2) {
        svg << "<rect x=\"" << 4 - x << "\" y=\"" << y << "\" width=\"1\" height=\"1\" fill=\"hsl(" << hue << ",60%,"
            << light << "%)\"/>";
      }
    }
  }
  svg << "</svg>";
  return svg.str();
}

}  // namespace seqfuse
