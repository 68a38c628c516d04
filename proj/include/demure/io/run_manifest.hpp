#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace demure::io {

inline constexpr const char* kVersion = "0.1.0";

/// CRC32 (zlib polynomial) of a file's bytes.
std::uint32_t file_crc32(const std::filesystem::path& path);

/// Record of one command invocation, written next to its outputs.
struct RunManifest {
  struct Input {
    std::string path;
    std::uint32_t crc32 = 0;
    std::uint64_t bytes = 0;
  };

  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<Input> inputs;
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;
  std::string version = kVersion;

  /// A directory adds every regular file below it, in path order.
  void add_input(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// Writes `text` to `path` through a temporary file and a rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace demure::io
