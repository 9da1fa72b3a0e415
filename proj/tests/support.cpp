// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <stdexcept>

#include "atr/codec.hpp"
#include "atr/detect.hpp"
#include "atr/fs_util.hpp"

namespace atr::testing {

namespace fs = std::filesystem;
using nlohmann::json;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "atr-test-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string slurp(const fs::path& p) { return read_file_text(p); }

fs::path golden_dir() { return fs::path(ATR_TEST_DATA_DIR) / "golden"; }

std::string golden(const std::string& name) { return slurp(golden_dir() / name); }

json e2e_script_json() {
  return json::parse(R"({
  "answers": {
    "rectangle": {
      "open_set": "Battle tank",
      "closed_set": "Tank",
      "cot_open": "The vehicle has tracks and a rotating turret. A long gun barrel points forward.\nLabel: Tank",
      "cot_closed": "Tracks and a turret are visible.\nLabel: tank",
      "verify": "Yes"
    },
    "triangle": {
      "open_set": "Truck.",
      "closed_set": "truck",
      "cot_open": "Six wheels and an open cargo bed.\nlabel: truck",
      "cot_closed": "Wheels and a long flat deck. It could carry armor.\nLabel: tank",
      "verify": "Yes"
    },
    "cross": {
      "open_set": "Armored vehicle",
      "closed_set": "I think it is probably an armored car",
      "cot_open": "Boxy hull on eight wheels. Small turret on top.\nLabel: APC",
      "cot_closed": "Boxy hull on eight wheels.\nLabel: apc",
      "verify": "Yes"
    },
    "ellipse": {
      "open_set": "Truck",
      "closed_set": "novel",
      "cot_open": "Large rear wheels and a small cab.\nLabel: tractor",
      "cot_closed": "Large rear wheels and a small cab.\nLabel: novel",
      "verify": "Yes"
    },
    "ring": {
      "verify": "No."
    }
  }
})");
}

LvlmScript e2e_script() { return LvlmScript::from_json(e2e_script_json()); }

RunConfig e2e_config(const fs::path& manifest, const fs::path& out, std::size_t parallelism) {
  json j{{"manifest", manifest.string()},
         {"output_dir", out.string()},
         {"seed", 7},
         {"detector", {{"type", "mock"}}},
         {"lvlms", json::array({{{"type", "scripted"}, {"id", "scripted"}, {"script", e2e_script_json()}}})},
         {"strategies", json::array({{{"kind", "open_set"}},
                                     {{"kind", "closed_set"}, {"known_labels", kKnownLabels}},
                                     {{"kind", "cot_open"}},
                                     {{"kind", "cot_closed"}, {"known_labels", kKnownLabels}}})},
         {"detect", {{"backoff_ms", 1}}},
         {"recognize", {{"backoff_ms", 1}}},
         {"parallelism", parallelism}};
  return parse_run_config(j);
}

namespace {

int start(httplib::Server& server, std::thread& thread) {
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) throw std::runtime_error("could not bind a test port");
  thread = std::thread([&server] { server.listen_after_bind(); });
  server.wait_until_ready();
  return port;
}

}  // namespace

FakeDetectorServer::FakeDetectorServer(MockDetectorRules rules)
    : server_(std::make_unique<httplib::Server>()), detector_(std::move(rules), "fake-sidecar") {
  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"status", ready_ ? "ready" : "not_ready"}}.dump(), "application/json");
    if (!ready_) res.status = 503;
  });
  server_->Post("/detect", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    {
      std::lock_guard lock(mu_);
      last_body_ = req.body;
      if (!raw_.empty()) {
        res.set_content(raw_, "application/json");
        return;
      }
    }
    if (fail_remaining_.load() > 0) {
      --fail_remaining_;
      res.status = fail_status_;
      res.set_content(R"({"error":"injected"})", "application/json");
      return;
    }
    try {
      const auto request = decode_request(req.body);
      res.set_content(encode_response(detector_.detect(request)), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  port_ = start(*server_, thread_);
}

FakeDetectorServer::~FakeDetectorServer() {
  server_->stop();
  thread_.join();
}

std::string FakeDetectorServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

FakeChatServer::FakeChatServer(LvlmScript script)
    : server_(std::make_unique<httplib::Server>()), lvlm_("fake-chat", std::move(script)) {
  server_->Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      return;
    }
    {
      std::lock_guard lock(mu_);
      auth_ = req.get_header_value("Authorization");
      last_ = body;
    }
    if (fail_remaining_.load() > 0) {
      --fail_remaining_;
      res.status = fail_status_;
      return;
    }
    const auto& content = body.at("messages").at(0).at("content");
    LvlmRequest lr;
    for (const auto& part : content) {
      if (part.at("type") == "text") lr.prompt = part.at("text").get<std::string>();
      if (part.at("type") == "image_url") {
        const std::string url = part.at("image_url").at("url").get<std::string>();
        const std::string prefix = "data:image/png;base64,";
        lr.image_png = base64_decode(url.substr(prefix.size()));
      }
    }
    const auto reply = lvlm_.complete(lr);
    res.set_content(json{{"id", "cmpl-test"},
                         {"object", "chat.completion"},
                         {"choices", json::array({{{"index", 0},
                                                   {"message", {{"role", "assistant"}, {"content", reply.text}}},
                                                   {"finish_reason", "stop"}}})}}
                        .dump(),
                    "application/json");
  });
  port_ = start(*server_, thread_);
}

FakeChatServer::~FakeChatServer() {
  server_->stop();
  thread_.join();
}

std::string FakeChatServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

}  // namespace atr::testing
