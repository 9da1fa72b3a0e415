// SPDX-License-Identifier: Apache-2.0
// Shared test fixtures: temp dirs, the scripted answer table, fake HTTP services.
#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/dataset.hpp"
#include "atr/detector_backends.hpp"
#include "atr/lvlm_backends.hpp"
#include "atr/pipeline.hpp"

namespace httplib {
class Server;
}

namespace atr::testing {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& p);
std::filesystem::path golden_dir();
std::string golden(const std::string& name);

// Fixture classes in shape order: tank=rectangle, truck=triangle, apc=cross, tractor=ellipse.
inline const std::vector<std::string> kE2eClasses{"tank", "truck", "apc", "tractor"};
inline const std::vector<std::string> kKnownLabels{"tank", "truck", "apc"};

// Answer table for the scripted LVLM used by end-to-end runs.
nlohmann::json e2e_script_json();
LvlmScript e2e_script();

RunConfig e2e_config(const std::filesystem::path& manifest, const std::filesystem::path& out,
                     std::size_t parallelism = 1);

/// Serves the detection wire protocol (POST /detect, GET /health) from a MockDetector.
class FakeDetectorServer {
 public:
  explicit FakeDetectorServer(MockDetectorRules rules = MockDetectorRules::defaults());
  ~FakeDetectorServer();
  std::string url() const;
  void fail_next(int n, int status = 503) {
    fail_remaining_ = n;
    fail_status_ = status;
  }
  void set_ready(bool r) { ready_ = r; }
  void set_raw_response(std::string body) {
    std::lock_guard lock(mu_);
    raw_ = std::move(body);
  }
  std::size_t requests() const { return requests_.load(); }
  std::string last_body() const {
    std::lock_guard lock(mu_);
    return last_body_;
  }

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  MockDetector detector_;
  std::atomic<int> fail_remaining_{0};
  std::atomic<int> fail_status_{503};
  std::atomic<bool> ready_{true};
  std::atomic<std::size_t> requests_{0};
  mutable std::mutex mu_;
  std::string raw_, last_body_;
};

/// OpenAI-compatible chat completions endpoint answering from a ScriptedLvlm.
class FakeChatServer {
 public:
  explicit FakeChatServer(LvlmScript script);
  ~FakeChatServer();
  std::string url() const;
  void fail_next(int n, int status = 503) {
    fail_remaining_ = n;
    fail_status_ = status;
  }
  std::size_t requests() const { return requests_.load(); }
  std::string last_authorization() const {
    std::lock_guard lock(mu_);
    return auth_;
  }
  nlohmann::json last_request() const {
    std::lock_guard lock(mu_);
    return last_;
  }

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  ScriptedLvlm lvlm_;
  std::atomic<int> fail_remaining_{0};
  std::atomic<int> fail_status_{503};
  std::atomic<std::size_t> requests_{0};
  mutable std::mutex mu_;
  std::string auth_;
  nlohmann::json last_;
};

}  // namespace atr::testing
