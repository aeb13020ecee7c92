#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefrl/envs.hpp"
#include "prefrl/types.hpp"

namespace httplib {
class Server;
}

namespace prefrl::harness {

enum class SubmitResult { accepted, already_labeled, unknown_query };

/// Label name used by the HTTP API: "left" -> (1,0), "right" -> (0,1), "equal" -> (0.5,0.5).
std::optional<Label> label_from_name(const std::string& name);

/// Queue of queries awaiting a human label. Accepted labels are appended to
/// the preference buffer immediately. All methods are thread-safe.
class AnnotationService {
 public:
  explicit AnnotationService(envs::PreferenceBuffer& buffer, nlohmann::json task_meta = {});

  /// Returns the ids assigned to the new queries, in order.
  std::vector<std::string> publish(std::vector<std::pair<Segment, Segment>> queries);

  /// Oldest unlabeled query as the API payload, or nullopt when none is pending.
  std::optional<nlohmann::json> next_query() const;
  SubmitResult submit(const std::string& query_id, const Label& label);

  /// Blocks until every id in `ids` is labeled or the timeout passes; returns the labeled count.
  std::size_t wait_for(const std::vector<std::string>& ids, std::chrono::milliseconds timeout) const;

  void set_progress(std::size_t iteration, double latest_eval_return);
  nlohmann::json status() const;
  std::size_t labels_collected() const;
  std::size_t pending() const;
  /// Preference-buffer index of the triple created for a labeled query.
  std::optional<std::size_t> buffer_index(const std::string& query_id) const;
  envs::PreferenceBuffer& buffer() { return *buffer_; }

 private:
  struct Query {
    Segment first;
    Segment second;
    std::optional<std::size_t> buffer_index;
  };

  envs::PreferenceBuffer* buffer_;
  nlohmann::json task_meta_;
  std::map<std::uint64_t, std::string> order_;  // publish sequence -> id
  std::map<std::string, Query> queries_;
  std::uint64_t next_id_ = 0;
  std::size_t labels_collected_ = 0;
  std::size_t pending_ = 0;
  std::size_t iteration_ = 0;
  std::optional<double> latest_eval_return_;
  mutable std::mutex mutex_;
  mutable std::condition_variable labeled_;
};

/// HTTP front end for an AnnotationService:
///   GET  /api/queries/next -> 200 query payload | 204
///   POST /api/labels       -> 200 | 400 malformed | 404 unknown id | 409 already labeled
///   GET  /api/status       -> 200 {iteration, labels_collected, pending_queries, latest_eval_return}
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationService& service);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and starts serving on a background thread. Port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  int port() const { return port_; }

 private:
  AnnotationService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace prefrl::harness
