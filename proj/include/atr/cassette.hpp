// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "atr/error.hpp"

namespace atr {

enum class CassetteMode { live, record, replay };

std::string_view to_string(CassetteMode m);
CassetteMode parse_cassette_mode(std::string_view s);

/// Raised in replay mode when no recording exists for a request.
class CassetteMiss : public ConfigError {
 public:
  explicit CassetteMiss(const std::filesystem::path& file)
      : ConfigError("no cassette recording for request: missing " + file.string()), file_(file) {}
  const std::filesystem::path& file() const { return file_; }

 private:
  std::filesystem::path file_;
};

/// Directory of JSON recordings, one file per content-hash key.
class CassetteStore {
 public:
  explicit CassetteStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }
  std::optional<nlohmann::json> load(const std::string& key) const;
  void save(const std::string& key, const nlohmann::json& entry) const;

 private:
  std::filesystem::path dir_;
};

}  // namespace atr
