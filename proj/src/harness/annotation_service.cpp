#include "prefrl/harness/annotation_service.hpp"

#include <stdexcept>

#include <httplib.h>

namespace prefrl::harness {

std::optional<Label> label_from_name(const std::string& name) {
  if (name == "left") return Label::prefer_first();
  if (name == "right") return Label::prefer_second();
  if (name == "equal") return Label::equal();
  return std::nullopt;
}

AnnotationService::AnnotationService(envs::PreferenceBuffer& buffer, nlohmann::json task_meta)
    : buffer_(&buffer), task_meta_(std::move(task_meta)) {}

std::vector<std::string> AnnotationService::publish(std::vector<std::pair<Segment, Segment>> queries) {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (auto& [first, second] : queries) {
    const std::uint64_t seq = next_id_++;
    std::string id = "q" + std::to_string(seq);
    order_.emplace(seq, id);
    queries_.emplace(id, Query{std::move(first), std::move(second), std::nullopt});
    ++pending_;
    ids.push_back(std::move(id));
  }
  return ids;
}

std::optional<nlohmann::json> AnnotationService::next_query() const {
  std::lock_guard lock(mutex_);
  for (const auto& [seq, id] : order_) {
    const Query& q = queries_.at(id);
    if (q.buffer_index) continue;
    return nlohmann::json{{"query_id", id},
                          {"segment0", envs::segment_to_json(q.first)},
                          {"segment1", envs::segment_to_json(q.second)},
                          {"task_meta", task_meta_}};
  }
  return std::nullopt;
}

SubmitResult AnnotationService::submit(const std::string& query_id, const Label& label) {
  validate(label);
  {
    std::lock_guard lock(mutex_);
    auto it = queries_.find(query_id);
    if (it == queries_.end()) return SubmitResult::unknown_query;
    if (it->second.buffer_index) return SubmitResult::already_labeled;
    Query& q = it->second;
    // Appending under our lock serializes label appends from concurrent clients.
    buffer_->append(PreferenceTriple{q.first, q.second, label, -1});
    q.buffer_index = buffer_->size() - 1;
    ++labels_collected_;
    --pending_;
    // Labeled queries drop out of the publish order; the entry stays for 409s.
    for (auto o = order_.begin(); o != order_.end(); ++o) {
      if (o->second == query_id) {
        order_.erase(o);
        break;
      }
    }
  }
  labeled_.notify_all();
  return SubmitResult::accepted;
}

std::size_t AnnotationService::wait_for(const std::vector<std::string>& ids, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  auto count = [&] {
    std::size_t n = 0;
    for (const auto& id : ids) {
      auto it = queries_.find(id);
      if (it != queries_.end() && it->second.buffer_index) ++n;
    }
    return n;
  };
  labeled_.wait_for(lock, timeout, [&] { return count() == ids.size(); });
  return count();
}

void AnnotationService::set_progress(std::size_t iteration, double latest_eval_return) {
  std::lock_guard lock(mutex_);
  iteration_ = iteration;
  latest_eval_return_ = latest_eval_return;
}

nlohmann::json AnnotationService::status() const {
  std::lock_guard lock(mutex_);
  return {{"iteration", iteration_},
          {"labels_collected", labels_collected_},
          {"pending_queries", pending_},
          {"latest_eval_return", latest_eval_return_ ? nlohmann::json(*latest_eval_return_) : nlohmann::json()}};
}

std::size_t AnnotationService::labels_collected() const {
  std::lock_guard lock(mutex_);
  return labels_collected_;
}

std::size_t AnnotationService::pending() const {
  std::lock_guard lock(mutex_);
  return pending_;
}

std::optional<std::size_t> AnnotationService::buffer_index(const std::string& query_id) const {
  std::lock_guard lock(mutex_);
  auto it = queries_.find(query_id);
  if (it == queries_.end()) return std::nullopt;
  return it->second.buffer_index;
}

AnnotationServer::AnnotationServer(AnnotationService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/api/queries/next", [this](const httplib::Request&, httplib::Response& res) {
    auto q = service_.next_query();
    if (!q) {
      res.status = 204;
      return;
    }
    res.set_content(q->dump(), "application/json");
  });
  server_->Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content(R"({"error":"body is not JSON"})", "application/json");
      return;
    }
    if (!body.is_object() || !body.contains("query_id") || !body.contains("label") ||
        !body["query_id"].is_string() || !body["label"].is_string()) {
      res.status = 400;
      res.set_content(R"({"error":"expected {query_id, label}"})", "application/json");
      return;
    }
    const auto label = label_from_name(body["label"].get<std::string>());
    if (!label) {
      res.status = 400;
      res.set_content(R"({"error":"label must be left, right or equal"})", "application/json");
      return;
    }
    switch (service_.submit(body["query_id"].get<std::string>(), *label)) {
      case SubmitResult::accepted:
        res.status = 200;
        res.set_content(R"({"status":"accepted"})", "application/json");
        break;
      case SubmitResult::already_labeled:
        res.status = 409;
        res.set_content(R"({"error":"query already labeled"})", "application/json");
        break;
      case SubmitResult::unknown_query:
        res.status = 404;
        res.set_content(R"({"error":"unknown query id"})", "application/json");
        break;
    }
  });
  server_->Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(service_.status().dump(), "application/json");
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  if (thread_.joinable()) throw std::logic_error("annotation server already running");
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw std::runtime_error("cannot bind annotation server to " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void AnnotationServer::stop() {
  if (thread_.joinable()) {
    server_->stop();
    thread_.join();
  }
}

}  // namespace prefrl::harness
