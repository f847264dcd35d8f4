#include "trofi/rank_server.hpp"

#include <algorithm>
#include <mutex>
#include <set>
#include <sstream>

#include "trofi/dataset.hpp"
#include "trofi/envs.hpp"
#include "trofi/error.hpp"
#include "trofi/ranking.hpp"

// After Eigen: <resolv.h> defines an `_res` macro that collides with Eigen internals.
#include <httplib.h>

namespace trofi {

namespace {

constexpr const char* kPlaceholderPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>trofi ranking</title></head>
<body>
<h1>trofi ranking service</h1>
<p>The ranking UI has not been built. API:</p>
<ul>
<li><code>GET /api/session</code></li>
<li><code>POST /api/ranking</code> with <code>{"dataset_hash": ..., "order": [ids worst to best]}</code></li>
</ul>
</body></html>
)";

HttpReply reject(const std::string& detail, nlohmann::json offender = nullptr) {
  HttpReply r;
  r.status = 422;
  r.body = {{"detail", detail}};
  if (!offender.is_null()) r.body["offender"] = std::move(offender);
  return r;
}

nlohmann::json downsample(const Environment& env, const Trajectory& t, std::size_t max_points) {
  // Positions s_0..s_{T-1} plus the final next state.
  const std::size_t n = t.transitions.size() + 1;
  auto point = [&](std::size_t i) {
    if (i + 1 < n) {
      const auto& tr = t.transitions[i];
      return env.project_2d(State{tr.state}, tr.step_index);
    }
    const auto& last = t.transitions.back();
    return env.project_2d(State{last.next_state}, last.step_index + 1);
  };
  const std::size_t m = std::min(n, std::max<std::size_t>(max_points, 2));
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = m == 1 ? 0 : k * (n - 1) / (m - 1);
    const auto [x, y] = point(i);
    pts.push_back({x, y});
  }
  return pts;
}

}  // namespace

struct RankServer::Impl {
  RankServerOptions options;
  OfflineDataset dataset;
  std::string hash;
  std::vector<std::int64_t> session_ids;
  nlohmann::json session;
  std::mutex submit_mutex;
  httplib::Server server;
  int bound_port = -1;
};

RankServer::RankServer(RankServerOptions options) : impl_(std::make_unique<Impl>()) {
  Impl& s = *impl_;
  s.options = std::move(options);
  if (!(s.options.fraction > 0.0 && s.options.fraction <= 1.0))
    throw ConfigError("serve-rank: fraction must be in (0, 1]");
  s.dataset = load_dataset(s.options.dataset_path);
  s.hash = dataset_hash(s.dataset);
  const auto env = make_env(s.dataset.env_name);

  nlohmann::json trajs = nlohmann::json::array();
  for (const auto& t : subsample_trajectories(s.dataset, s.options.fraction, s.options.seed)) {
    s.session_ids.push_back(t.episode_id);
    // Only geometry goes out; rewards and returns stay on the server.
    trajs.push_back({{"id", t.episode_id},
                     {"length", t.transitions.size()},
                     {"states", downsample(*env, t, s.options.max_points)}});
  }
  s.session = {{"env", s.dataset.env_name}, {"dataset_hash", s.hash}, {"trajectories", trajs}};

  // httplib's default also sets SO_REUSEPORT, which would let a second server share a busy port.
  s.server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  s.server.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl_->session.dump(), "application/json");
  });
  s.server.Post("/api/ranking", [this](const httplib::Request& req, httplib::Response& res) {
    const HttpReply reply = submit(req.body);
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  });
  if (!s.options.ui_dir.empty()) {
    if (!std::filesystem::is_directory(s.options.ui_dir))
      throw ConfigError("serve-rank: UI directory " + s.options.ui_dir.string() + " not found");
    s.server.set_mount_point("/", s.options.ui_dir.string());
  } else {
    s.server.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderPage, "text/html");
    });
  }
}

RankServer::~RankServer() { stop(); }

const nlohmann::json& RankServer::session() const { return impl_->session; }

HttpReply RankServer::submit(const std::string& body) {
  Impl& s = *impl_;
  std::unique_lock lock(s.submit_mutex, std::try_to_lock);
  if (!lock.owns_lock())
    return {409, {{"detail", "another ranking submission is in progress"}}};
  if (s.options.on_submit) s.options.on_submit();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return reject(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) return reject("request body must be a JSON object");
  if (!j.contains("dataset_hash") || !j["dataset_hash"].is_string())
    return reject("missing dataset_hash");
  if (j["dataset_hash"].get<std::string>() != s.hash)
    return reject("stale ranking: dataset_hash does not match the session dataset",
                  j["dataset_hash"]);
  if (!j.contains("order") || !j["order"].is_array()) return reject("missing order array");

  std::vector<std::int64_t> order;
  std::set<std::int64_t> seen;
  const std::set<std::int64_t> expected(s.session_ids.begin(), s.session_ids.end());
  for (const auto& v : j["order"]) {
    if (!v.is_number_integer()) return reject("order entries must be integer ids", v);
    const auto id = v.get<std::int64_t>();
    if (!seen.insert(id).second) return reject("duplicate trajectory id " + std::to_string(id), id);
    if (!expected.count(id))
      return reject("trajectory id " + std::to_string(id) + " is not part of this session", id);
    order.push_back(id);
  }
  if (order.size() != expected.size()) {
    nlohmann::json missing = nlohmann::json::array();
    for (auto id : expected)
      if (!seen.count(id)) missing.push_back(id);
    return reject("order is missing " + std::to_string(missing.size()) + " session trajectories",
                  missing);
  }

  RankedSet ranked;
  ranked.trajectory_ids = std::move(order);
  ranked.source = RankingSource::Human;
  ranked.env_name = s.dataset.env_name;
  ranked.dataset_hash = s.hash;
  try {
    validate_ranking(ranked, s.dataset);
  } catch (const ValidationError& e) {
    return reject(e.what(), e.offender());
  }
  save_ranking(ranked, s.options.output_path);
  return {200, {{"status", "ok"}, {"path", s.options.output_path.string()}, {"count", ranked.size()}}};
}

int RankServer::bind() {
  Impl& s = *impl_;
  if (s.bound_port >= 0) return s.bound_port;
  if (s.options.port == 0) {
    s.bound_port = s.server.bind_to_any_port(s.options.host);
  } else if (s.server.bind_to_port(s.options.host, s.options.port)) {
    s.bound_port = s.options.port;
  }
  if (s.bound_port < 0)
    throw Error("serve-rank: cannot bind " + s.options.host + ":" +
                std::to_string(s.options.port) + " (port busy or unavailable)");
  return s.bound_port;
}

void RankServer::listen() {
  bind();
  impl_->server.listen_after_bind();
}

void RankServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void RankServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace trofi
