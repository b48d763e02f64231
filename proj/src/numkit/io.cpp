#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "lasium/binio.hpp"
#include "lasium/container.hpp"

namespace lasium::io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(std::string_view s) {
  const std::string str(s);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(str.c_str(), &end);
  if (end == str.c_str() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("not a number: '" + str + "'");
  }
  return v;
}

const std::string& Container::require(const std::string& key) const {
  const auto it = description.find(key);
  if (it == description.end()) throw BadShape("checkpoint is missing field '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  std::string desc;
  for (const auto& [key, value] : c.description) desc += key + "=" + value + "\n";
  ByteWriter w;
  w.text("LGEN");
  w.u16(kContainerVersion);
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.u32(c.latent_dim);
  w.u32(static_cast<std::uint32_t>(desc.size()));
  w.text(desc);
  w.u64(c.payload.size());
  w.f64s(c.payload);
  return w.bytes();
}

Container decode_container(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.remaining() < 4 || r.text(4) != "LGEN") throw BadMagic(source + ": not an LGEN checkpoint");
  const std::uint16_t version = r.u16();
  if (version != kContainerVersion) {
    throw BadMagic(source + ": unsupported LGEN version " + std::to_string(version));
  }
  Container c;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(ContainerKind::classifier)) {
    throw BadShape(source + ": unknown checkpoint kind " + std::to_string(kind));
  }
  c.kind = static_cast<ContainerKind>(kind);
  c.latent_dim = r.u32();
  const std::string desc = r.text(r.u32());
  std::size_t start = 0;
  while (start < desc.size()) {
    std::size_t end = desc.find('\n', start);
    if (end == std::string::npos) end = desc.size();
    const std::string line = desc.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw BadShape(source + ": malformed description line '" + line + "'");
    c.description[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / sizeof(double)) throw TruncatedFile(source + ": payload shorter than declared");
  c.payload.resize(count);
  r.f64s(c.payload);
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  write_file(path, encode_container(c));
}

Container load_container(const std::filesystem::path& path) {
  return decode_container(read_file(path), path.string());
}

}  // namespace lasium::io
