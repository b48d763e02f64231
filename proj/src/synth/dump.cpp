#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <json.hpp>

#include "lasium/binio.hpp"
#include "lasium/synth.hpp"

namespace lasium::synth {

namespace {

data::Shape inner_shape(const data::Tensor& x) { return data::Shape(x.shape().begin() + 1, x.shape().end()); }

std::vector<genmodel::LatentVector> read_latents(io::ByteReader& r, std::size_t rows, std::size_t dim) {
  std::vector<genmodel::LatentVector> out;
  out.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> z(dim);
    r.f64s(z);
    out.emplace_back(std::move(z));
  }
  return out;
}

}  // namespace

ContactSheet contact_sheet(const data::MetaTask& t) {
  validate_task(t);
  const data::Shape shape = inner_shape(t.train_x);
  const bool image = shape.size() == 3;
  const std::size_t cell_h = image ? shape[0] : 1;
  const std::size_t cell_w = image ? shape[1] : shape[0];
  const std::size_t channels = image ? shape[2] : 1;
  const std::size_t stride = cell_h * cell_w * channels;
  const std::size_t rows = t.k_tr + t.k_val;

  // Vector samples are min-max scaled over the whole sheet.
  double lo = 0.0, hi = 1.0;
  if (!image) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const auto* x : {&t.train_x, &t.val_x}) {
      for (double v : x->storage()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!(hi > lo)) hi = lo + 1.0;
  }

  ContactSheet sheet;
  sheet.width = t.n_way * cell_w;
  sheet.height = rows * cell_h;
  sheet.pixels.assign(sheet.width * sheet.height, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t l = 0; l < t.n_way; ++l) {
      const bool train = r < t.k_tr;
      const data::Tensor& x = train ? t.train_x : t.val_x;
      const std::size_t row = train ? l * t.k_tr + r : l * t.k_val + (r - t.k_tr);
      const double* src = x.data() + row * stride;
      for (std::size_t i = 0; i < cell_h; ++i) {
        for (std::size_t j = 0; j < cell_w; ++j) {
          const double v = (src[(i * cell_w + j) * channels] - lo) / (hi - lo);
          sheet.pixels[(r * cell_h + i) * sheet.width + l * cell_w + j] =
              static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
      }
    }
  }
  return sheet;
}

void write_pgm(const std::filesystem::path& path, const ContactSheet& sheet) {
  io::ByteWriter w;
  w.text("P5\n" + std::to_string(sheet.width) + " " + std::to_string(sheet.height) + "\n255\n");
  w.raw(sheet.pixels.data(), sheet.pixels.size());
  io::write_file(path, w.bytes());
}

void dump_task(const std::filesystem::path& dir, const data::MetaTask& t) {
  validate_task(t);
  const std::size_t latent_dim = t.train_latents.empty() ? 0 : t.train_latents.front().dim();
  nlohmann::ordered_json meta;
  meta["n_way"] = t.n_way;
  meta["k_tr"] = t.k_tr;
  meta["k_val"] = t.k_val;
  meta["policy"] = t.policy;
  meta["seed"] = t.seed;
  meta["latent_dim"] = latent_dim;
  meta["sample_shape"] = inner_shape(t.train_x);
  meta["anchor_images_from_data"] = t.anchor_images_from_data;
  if (!t.source_classes.empty()) meta["source_classes"] = t.source_classes;
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");

  const auto n = static_cast<std::uint32_t>(t.n_way);
  data::write_ldat(dir / "train.ldat", t.train_x, t.train_y, n, data::SampleKind::vector_f64);
  if (t.k_val > 0) data::write_ldat(dir / "val.ldat", t.val_x, t.val_y, n, data::SampleKind::vector_f64);

  io::ByteWriter prov;
  for (const auto* zs : {&t.train_latents, &t.val_latents}) {
    for (const auto& z : *zs) prov.f64s(z.values());
  }
  io::write_file(dir / "provenance.bin", prov.bytes());
  write_pgm(dir / "sheet.pgm", contact_sheet(t));
}

data::MetaTask read_task_dump(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    const auto bytes = io::read_file(dir / "meta.json");
    meta = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw BadShape((dir / "meta.json").string() + ": " + e.what());
  }

  data::MetaTask t;
  std::size_t latent_dim = 0;
  try {
    t.n_way = meta.at("n_way").get<std::size_t>();
    t.k_tr = meta.at("k_tr").get<std::size_t>();
    t.k_val = meta.at("k_val").get<std::size_t>();
    t.policy = meta.at("policy").get<std::string>();
    t.seed = meta.at("seed").get<std::uint64_t>();
    latent_dim = meta.at("latent_dim").get<std::size_t>();
    t.anchor_images_from_data = meta.at("anchor_images_from_data").get<bool>();
    if (meta.contains("source_classes")) t.source_classes = meta["source_classes"].get<std::vector<std::uint32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw BadShape((dir / "meta.json").string() + ": " + e.what());
  }

  data::LdatContents train = data::read_ldat(dir / "train.ldat");
  t.train_x = std::move(train.samples);
  t.train_y = std::move(train.labels);
  if (t.k_val > 0) {
    data::LdatContents val = data::read_ldat(dir / "val.ldat");
    t.val_x = std::move(val.samples);
    t.val_y = std::move(val.labels);
  }

  const auto prov = io::read_file(dir / "provenance.bin");
  if (latent_dim > 0) {
    const std::size_t expected = (t.train_y.size() + t.val_y.size()) * latent_dim * sizeof(double);
    if (prov.size() != expected) throw BadShape((dir / "provenance.bin").string() + ": wrong size");
    io::ByteReader r(prov, (dir / "provenance.bin").string());
    t.train_latents = read_latents(r, t.train_y.size(), latent_dim);
    t.val_latents = read_latents(r, t.val_y.size(), latent_dim);
  }
  try {
    validate_task(t);
  } catch (const ConfigError& e) {
    throw BadShape(dir.string() + ": " + e.what());
  }
  return t;
}

}  // namespace lasium::synth
