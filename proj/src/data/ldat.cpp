#include <algorithm>
#include <cmath>
#include <string>

#include "lasium/binio.hpp"
#include "lasium/data.hpp"

namespace lasium::data {

std::vector<std::uint8_t> encode_ldat(const Tensor& samples, const std::vector<std::uint32_t>& labels,
                                      std::uint32_t n_classes, SampleKind kind) {
  if (samples.rank() < 2 || samples.rank() > 255) throw DimensionError("LDAT samples need rank 2..255");
  if (samples.dim(0) != labels.size()) throw DimensionError("LDAT label count does not match sample count");
  io::ByteWriter w;
  w.text("LDAT");
  w.u16(kLdatVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(static_cast<std::uint8_t>(samples.rank()));
  for (std::size_t d : samples.shape()) {
    if (d > UINT32_MAX) throw DimensionError("LDAT dimension exceeds 32 bits");
    w.u32(static_cast<std::uint32_t>(d));
  }
  w.u32(n_classes);
  for (std::uint32_t l : labels) w.u32(l);
  if (kind == SampleKind::image_u8) {
    for (double v : samples.storage()) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  } else {
    w.f64s(samples.values());
  }
  return w.bytes();
}

void write_ldat(const std::filesystem::path& path, const Tensor& samples, const std::vector<std::uint32_t>& labels,
                std::uint32_t n_classes, SampleKind kind) {
  io::write_file(path, encode_ldat(samples, labels, n_classes, kind));
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  write_ldat(path, ds.samples(), ds.labels(), static_cast<std::uint32_t>(ds.n_classes()), ds.kind());
}

LdatContents read_ldat(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = io::read_file(path);
  const std::string src = path.string();
  io::ByteReader r(bytes, src);
  if (r.remaining() < 4 || r.text(4) != "LDAT") throw BadMagic(src + ": not an LDAT file");
  const std::uint16_t version = r.u16();
  if (version != kLdatVersion) throw BadMagic(src + ": unsupported LDAT version " + std::to_string(version));

  LdatContents out;
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) throw BadShape(src + ": unknown dtype " + std::to_string(dtype));
  out.kind = static_cast<SampleKind>(dtype);
  const std::uint8_t rank = r.u8();
  if (rank < 2) throw BadShape(src + ": rank must be at least 2");
  Shape shape;
  std::size_t total = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) throw BadShape(src + ": zero-sized dimension");
    shape.push_back(d);
    total *= d;
    if (total > bytes.size()) throw TruncatedFile(src + ": payload shorter than declared shape");
  }
  out.n_classes = r.u32();
  const std::size_t count = shape[0];
  if (count > r.remaining() / 4) throw TruncatedFile(src + ": label block shorter than sample count");
  out.labels.resize(count);
  for (auto& l : out.labels) {
    l = r.u32();
    if (l >= out.n_classes) throw BadShape(src + ": label " + std::to_string(l) + " >= n_classes");
  }

  const std::size_t width = out.kind == SampleKind::image_u8 ? 1 : 8;
  if (r.remaining() < total * width) throw TruncatedFile(src + ": payload shorter than declared shape");
  if (r.remaining() > total * width) throw BadShape(src + ": trailing bytes after payload");
  std::vector<double> values(total);
  if (out.kind == SampleKind::image_u8) {
    for (double& v : values) v = static_cast<double>(r.u8()) / 255.0;
  } else {
    r.f64s(values);
  }
  out.samples = Tensor(std::move(shape), std::move(values));
  return out;
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  LdatContents c = read_ldat(path);
  try {
    LabeledDataset ds(std::move(c.samples), std::move(c.labels), c.kind);
    if (ds.n_classes() != c.n_classes) throw BadShape("n_classes header disagrees with labels");
    return ds;
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw BadShape(path.string() + ": " + e.what());
  }
}

}  // namespace lasium::data
