#include "dmwm/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <string_view>

#include "dmwm/binary_io.hpp"
#include "dmwm/error.hpp"

namespace dmwm::checkpoint {

namespace {

constexpr std::string_view kMagic = "DMWMCKPT";

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

const Tensor& Container::block(const std::string& name) const {
  for (const Block& b : blocks) {
    if (b.name == name) return b.value;
  }
  throw FormatError("checkpoint has no block '" + name + "'");
}

std::vector<char> encode(const Container& c) {
  nlohmann::json manifest;
  manifest["meta"] = c.meta;
  manifest["blocks"] = nlohmann::json::array();
  for (const Block& b : c.blocks) {
    manifest["blocks"].push_back({{"name", b.name}, {"rows", b.value.rows}, {"cols", b.value.cols}});
  }
  io::Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put_string(manifest.dump());
  for (const Block& b : c.blocks) w.put_array<double>(b.value.data);
  std::vector<char> bytes = w.bytes();
  io::Writer tail;
  tail.put<std::uint64_t>(fnv1a(bytes.data(), bytes.size()));
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  return bytes;
}

Container decode(std::vector<char> bytes, const std::string& context) {
  if (bytes.size() < kMagic.size() || std::string_view(bytes.data(), kMagic.size()) != kMagic) {
    throw FormatError(context + ": not a checkpoint (bad magic)");
  }
  if (bytes.size() < kMagic.size() + sizeof(std::uint32_t)) {
    throw TruncatedError(context + ": unexpected end of data in header");
  }
  io::Reader r(bytes, context);
  r.get_bytes(kMagic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) throw VersionError(context, version, kFormatVersion);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(context + ": malformed manifest: " + e.what());
  }
  Container c;
  try {
    c.meta = manifest.at("meta");
    for (const auto& entry : manifest.at("blocks")) {
      Block b;
      b.name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      if (cols != 0 && rows > r.remaining() / sizeof(double) / cols) {
        throw TruncatedError(context + ": block '" + b.name + "' exceeds the remaining data");
      }
      b.value = Tensor(rows, cols);
      r.get_array<double>(b.value.data);
      c.blocks.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": malformed manifest: " + e.what());
  }
  const std::size_t body = bytes.size() - r.remaining();
  const auto stored = r.get<std::uint64_t>();
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes after checksum");
  if (stored != fnv1a(bytes.data(), body)) throw FormatError(context + ": checksum mismatch");
  return c;
}

void save(const std::filesystem::path& path, const Container& c) {
  io::Writer w;
  const std::vector<char> bytes = encode(c);
  w.put_bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

Container load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(std::move(bytes), path.string());
}

}  // namespace dmwm::checkpoint
