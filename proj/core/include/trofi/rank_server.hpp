#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

namespace trofi {

struct RankServerOptions {
  /// Reward-free dataset the session is built from.
  std::filesystem::path dataset_path;
  /// Where an accepted ranking is written.
  std::filesystem::path output_path = "ranking.json";
  double fraction = 1.0;
  std::uint64_t seed = 0;
  /// Upper bound on 2D points sent per trajectory.
  std::size_t max_points = 100;
  std::string host = "127.0.0.1";
  /// 0 lets the OS pick a free port.
  int port = 8765;
  /// Built UI assets served under "/"; a placeholder page when empty.
  std::filesystem::path ui_dir;
  /// Called while a submission holds the session lock (tests use it to
  /// provoke conflicting submissions).
  std::function<void()> on_submit;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// Local HTTP endpoint for collecting a human ranking:
///   GET  /api/session  trajectories to rank (2D projections, no rewards)
///   POST /api/ranking  {dataset_hash, order} with order listed worst to best
///   GET  /             UI assets
class RankServer {
 public:
  explicit RankServer(RankServerOptions options);
  ~RankServer();
  RankServer(const RankServer&) = delete;
  RankServer& operator=(const RankServer&) = delete;

  const nlohmann::json& session() const;
  /// Validates and persists a submission; same logic the POST route uses.
  HttpReply submit(const std::string& body);

  /// Binds the socket. Throws Error when the port is busy. Returns the port.
  int bind();
  /// Serves until stop(); binds first if needed.
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trofi
