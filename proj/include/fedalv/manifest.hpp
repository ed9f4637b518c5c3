#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fedalv/errors.hpp"

namespace fedalv {

namespace detail {

inline std::string digest_hex(const EVP_MD* md, std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out, &len) != 1) {
    throw StateError("digest computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[out[i] >> 4];
    s += hex[out[i] & 0xF];
  }
  return s;
}

}  // namespace detail

inline std::string sha256_hex(std::string_view data) { return detail::digest_hex(EVP_sha256(), data); }

// Same id `git hash-object` assigns to a blob with this content.
inline std::string git_blob_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return detail::digest_hex(EVP_sha1(), blob);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write to a sibling temp file, then rename over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

struct FileRecord {
  std::string name;  // relative to the output directory
  std::string sha256;
  std::size_t bytes = 0;
};

struct Timing {
  std::string phase;
  double seconds = 0.0;
};

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::string config_hash;
  std::vector<FileRecord> files;
  std::vector<Timing> timings;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = config_hash;
    j["files"] = nlohmann::json::array();
    for (const auto& f : files) {
      j["files"].push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    }
    j["timings"] = nlohmann::json::array();
    for (const auto& t : timings) j["timings"].push_back({{"phase", t.phase}, {"seconds", t.seconds}});
    return j;
  }
};

// Collects output files of one run and writes them plus `manifest.json`.
class RunWriter {
 public:
  RunWriter(std::filesystem::path dir, std::string command, const nlohmann::json& config)
      : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create '" + dir_.string() + "': " + ec.message());
    manifest_.command = std::move(command);
    manifest_.config = config;
    manifest_.config_hash = git_blob_hash(config.dump(2) + "\n");
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  void write(const std::string& name, std::string_view content) {
    write_file_atomic(dir_ / name, content);
    manifest_.files.push_back({name, sha256_hex(content), content.size()});
  }

  void time(std::string phase, double seconds) { manifest_.timings.push_back({std::move(phase), seconds}); }

  const RunManifest& manifest() const noexcept { return manifest_; }

  void finish() { write_file_atomic(dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n"); }

 private:
  std::filesystem::path dir_;
  RunManifest manifest_;
};

}  // namespace fedalv
