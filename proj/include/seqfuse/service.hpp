// SPDX-License-Identifier: Apache-2.0
//
// Operator-in-the-loop retrieval sessions.
//
// A session starts from one query record. For every camera in its gallery
// scope the service keeps a ranked list of that camera's gallery records.
// Each operator confirmation appends the confirmed record to the query
// sequence, fuses the sequence again and re-ranks the cameras that are still
// open. Session state is a pure function of (model, dataset, history), so a
// journal of requests is enough to rebuild it.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqfuse/dataset.hpp"
#include "seqfuse/fusion.hpp"
#include "seqfuse/protocol.hpp"

namespace seqfuse {

enum class ServiceMode { demo, study };

std::string_view to_string(ServiceMode m);
ServiceMode parse_service_mode(std::string_view s);

struct ServiceConfig {
  ServiceMode mode = ServiceMode::demo;
  std::size_t default_top = 20;
  /// Append-only request journal; replayed on construction when it exists.
  std::optional<std::filesystem::path> journal;
  /// Wall-clock seconds. Defaults to the system clock.
  std::function<double()> clock;
};

struct ListEntry {
  std::string record_id;
  std::optional<int> pid;  // study mode only
  int camera = 0;
  double distance = 0.0;
  std::size_t rank = 0;  // 1-based
  std::string image_ref;

  bool operator==(const ListEntry&) const = default;
};

struct CameraList {
  int camera = 0;
  std::size_t total = 0;  // gallery records in the camera
  std::vector<ListEntry> entries;
  std::optional<std::size_t> first_correct_rank;  // study mode only

  bool operator==(const CameraList&) const = default;
};

struct Confirmation {
  int camera = 0;
  std::string record_id;
  double timestamp = 0.0;

  bool operator==(const Confirmation&) const = default;
};

/// One operator step: the lists shown at sequence length k and what was
/// picked from them.
struct LogEntry {
  std::size_t k = 0;
  int camera = 0;
  std::string record_id;
  double elapsed_seconds = 0.0;
  /// Camera -> rank of the first correct record in the lists shown at k.
  std::map<int, std::optional<std::size_t>> first_correct;

  bool operator==(const LogEntry&) const = default;
};

struct SessionLog {
  std::string session_id;
  std::string query_record;
  Fuser fuser = Fuser::gru;
  std::vector<LogEntry> entries;

  bool operator==(const SessionLog&) const = default;
};

struct SessionView {
  std::string id;
  std::string query_record;
  std::optional<int> query_pid;  // study mode only
  Fuser fuser = Fuser::gru;
  ServiceMode mode = ServiceMode::demo;
  std::size_t k = 1;
  std::vector<int> scope;
  std::vector<Confirmation> confirmations;
  std::vector<int> remaining;
  std::vector<CameraList> lists;  // one per remaining camera, ascending id
  bool complete = false;
};

struct CreateSessionRequest {
  std::string query_record;
  std::optional<Fuser> fuser;      // gru when a model is loaded, else mean
  std::optional<std::vector<int>> scope;  // default: gallery cameras except the query's
};

class OperatorService {
 public:
  /// `model` may be empty; sessions then cannot use the GRU fuser.
  OperatorService(std::shared_ptr<const Dataset> dataset, std::optional<FusionModel> model,
                  ServiceConfig config = {});
  ~OperatorService();
  OperatorService(const OperatorService&) = delete;
  OperatorService& operator=(const OperatorService&) = delete;

  SessionView create_session(const CreateSessionRequest& request);
  /// `elapsed_seconds` overrides the server-side time since the lists were shown.
  SessionView confirm(const std::string& session_id, int camera, const std::string& record_id,
                      std::optional<double> elapsed_seconds = std::nullopt);
  /// Drops every confirmation; the interaction log is kept.
  SessionView restart(const std::string& session_id);

  SessionView get_state(const std::string& session_id, std::optional<std::size_t> top = std::nullopt) const;
  CameraList get_list(const std::string& session_id, int camera, std::optional<std::size_t> top = std::nullopt) const;
  std::vector<std::string> session_ids() const;

  /// All sessions, or just one.
  std::vector<SessionLog> logs(const std::optional<std::string>& session_id = std::nullopt) const;

  const Dataset& dataset() const { return *dataset_; }
  bool has_model() const { return model_.has_value(); }
  const ServiceConfig& config() const { return config_; }

  /// Flushes the journal file.
  void flush();

 private:
  struct Session;
  struct Slot;

  Slot& slot(const std::string& session_id) const;
  SessionView view(const Session& s, std::size_t top) const;
  CameraList camera_list(const Session& s, int camera, std::size_t top) const;
  void rerank(Session& s) const;
  double now() const;
  void journal(const nlohmann::json& line);
  void replay(const std::filesystem::path& path);

  SessionView do_create(const CreateSessionRequest& request, double t, bool record);
  SessionView do_confirm(const std::string& id, int camera, const std::string& record_id,
                         std::optional<double> elapsed, double t, bool record);
  SessionView do_restart(const std::string& id, double t, bool record);

  std::shared_ptr<const Dataset> dataset_;
  std::optional<FusionModel> model_;
  ServiceConfig config_;
  std::map<int, std::vector<std::size_t>> gallery_by_cam_;  // file order

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::uint64_t, std::unique_ptr<Slot>> sessions_;
  std::uint64_t next_id_ = 1;

  std::mutex journal_mutex_;
  std::unique_ptr<std::ofstream> journal_out_;
};

nlohmann::json to_json(const ListEntry& e);
nlohmann::json to_json(const CameraList& l);
nlohmann::json to_json(const SessionView& v);
nlohmann::json to_json(const LogEntry& e);
nlohmann::json to_json(const SessionLog& l);
/// {"sessions":[...]}.
nlohmann::json logs_document(const std::vector<SessionLog>& logs);
std::vector<SessionLog> parse_logs_document(const nlohmann::json& doc);

/// Deterministic SVG identicon for an identity seen from a camera.
std::string identicon_svg(int pid, int camera);

}  // namespace seqfuse
