#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lasium::io {

/// LGEN checkpoint container shared by generators and learners.
///
///   offset  size  field
///   0       4     magic "LGEN"
///   4       2     format version (u16, currently 1)
///   6       1     kind tag (u8)
///   7       4     latent_dim (u32, 0 when not applicable)
///   11      4     description length L (u32)
///   15      L     description: "key=value\n" lines, ASCII
///   15+L    8     payload count P (u64)
///   23+L    8*P   payload, f64
///
/// All integers and floats are little-endian.
enum class ContainerKind : std::uint8_t { vae = 0, gan = 1, analytic = 2, classifier = 3 };

struct Container {
  ContainerKind kind = ContainerKind::vae;
  std::uint32_t latent_dim = 0;
  std::map<std::string, std::string> description;
  std::vector<double> payload;

  const std::string& require(const std::string& key) const;
};

inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(const std::vector<std::uint8_t>& bytes, const std::string& source);

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

}  // namespace lasium::io
