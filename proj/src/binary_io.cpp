#include "dmwm/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace dmwm::io {

void Writer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!os) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

Reader Reader::from_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<char> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return Reader(std::move(data), path.string());
}

}  // namespace dmwm::io
