#pragma once

// Run manifest: enough provenance (config snapshot, dataset fingerprint,
// seed, outputs) to reproduce a run exactly. Stored as JSON next to the
// run's artifacts.

#include <chrono>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sscl/common.hpp"
#include "sscl/config.hpp"

namespace sscl {

inline constexpr const char* kCodeVersion = "0.1.0";

struct RunManifest {
  std::string config_text;
  std::string dataset_name;
  std::uint64_t dataset_fingerprint = 0;
  std::string code_version = kCodeVersion;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string started_at;
  std::string finished_at;
};

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline void save_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["config"] = m.config_text;
  j["dataset"] = {{"name", m.dataset_name},
                  {"fingerprint", m.dataset_fingerprint}};
  j["code_version"] = m.code_version;
  j["seed"] = m.seed;
  j["output_dir"] = m.output_dir;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  std::ofstream os(path);
  if (!os) throw data_error("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw format_error("malformed manifest " + path + ": " + e.what());
  }
  RunManifest m;
  m.config_text = j.at("config").get<std::string>();
  m.dataset_name = j.at("dataset").at("name").get<std::string>();
  m.dataset_fingerprint = j.at("dataset").at("fingerprint").get<std::uint64_t>();
  m.code_version = j.value("code_version", "");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.output_dir = j.value("output_dir", "");
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  return m;
}

}  // namespace sscl
