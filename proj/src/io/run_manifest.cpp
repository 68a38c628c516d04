#include "demure/io/run_manifest.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "demure/errors.hpp"

namespace demure::io {

namespace fs = std::filesystem;

std::uint32_t file_crc32(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = f.gcount();
    if (n > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

void RunManifest::add_input(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  for (const auto& f : files) inputs.push_back({f.string(), file_crc32(f), fs::file_size(f)});
}

nlohmann::json RunManifest::to_json() const {
  auto ins = nlohmann::json::array();
  for (const auto& i : inputs) ins.push_back({{"path", i.path}, {"crc32", i.crc32}, {"bytes", i.bytes}});
  return {{"command", command},   {"argv", argv},       {"config", config},
          {"seed", seed},         {"inputs", ins},      {"outputs", outputs},
          {"wall_clock_seconds", wall_clock_seconds}, {"version", version}};
}

void RunManifest::write(const fs::path& path) const { write_text_atomic(path, to_json().dump(2) + "\n"); }

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw DataError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace demure::io
