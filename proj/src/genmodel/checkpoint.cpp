#include <string>

#include "lasium/binio.hpp"
#include "lasium/genmodel.hpp"

namespace lasium::genmodel {

using numkit::shape_size;

namespace {

// Payload layouts, all f64:
//   vae:      encoder params, then decoder params (numkit tensor order)
//   gan:      generator params
//   analytic: centers (n_classes x latent_dim), then output weight
//             (sample_dim x latent_dim) if output_map=affine, then bias if
//             has_bias=1

Shape parse_shape(const std::string& text) {
  Shape s;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t x = text.find('x', pos);
    const std::string part = text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw BadShape("bad sample shape '" + text + "'");
    }
    s.push_back(std::stoull(part));
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return s;
}

std::string format_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::size_t parse_count(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw BadShape("bad count '" + text + "'");
  }
  return std::stoull(text);
}

numkit::NetworkParams take_network(const std::string& arch_text, const std::vector<double>& payload,
                                   std::size_t& offset) {
  numkit::NetworkParams net;
  net.arch = numkit::Architecture::parse(arch_text);
  net.arch.validate();
  for (const Shape& s : net.arch.param_shapes()) {
    const std::size_t n = shape_size(s);
    if (offset + n > payload.size()) throw BadShape("payload too short for architecture " + arch_text);
    net.tensors.emplace_back(s, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                                    payload.begin() + static_cast<std::ptrdiff_t>(offset + n)));
    offset += n;
  }
  return net;
}

void append(std::vector<double>& out, const numkit::NetworkParams& net) {
  const std::vector<double> flat = numkit::flatten(net.tensors);
  out.insert(out.end(), flat.begin(), flat.end());
}

Generator decode(const io::Container& c) {
  const Shape sample_shape = parse_shape(c.require("sample_shape"));
  const bool clamp = c.require("clamp") == "1";
  std::size_t offset = 0;

  std::optional<Generator> gen;
  switch (c.kind) {
    case io::ContainerKind::vae: {
      VaeModel m;
      m.encoder = take_network(c.require("encoder"), c.payload, offset);
      m.decoder = take_network(c.require("decoder"), c.payload, offset);
      gen.emplace(std::move(m), sample_shape, clamp);
      break;
    }
    case io::ContainerKind::gan: {
      GanModel m;
      m.generator = take_network(c.require("generator"), c.payload, offset);
      gen.emplace(std::move(m), sample_shape, clamp);
      break;
    }
    case io::ContainerKind::analytic: {
      AnalyticGenConfig cfg;
      cfg.latent_dim = c.latent_dim;
      cfg.r_class = io::parse_double(c.require("r_class"));
      cfg.latent_spread = io::parse_double(c.require("latent_spread"));
      const std::size_t classes = parse_count(c.require("n_classes"));
      const std::size_t sample_dim = shape_size(sample_shape);
      const bool affine = c.require("output_map") == "affine";
      const bool has_bias = c.require("has_bias") == "1";
      const std::size_t need = classes * cfg.latent_dim + (affine ? sample_dim * cfg.latent_dim : 0) +
                               (has_bias ? sample_dim : 0);
      if (c.payload.size() != need) throw BadShape("analytic payload has wrong length");
      auto it = c.payload.begin();
      for (std::size_t k = 0; k < classes; ++k) {
        cfg.centers.emplace_back(it, it + static_cast<std::ptrdiff_t>(cfg.latent_dim));
        it += static_cast<std::ptrdiff_t>(cfg.latent_dim);
      }
      if (affine) {
        const auto n = static_cast<std::ptrdiff_t>(sample_dim * cfg.latent_dim);
        cfg.output_weight = Tensor({sample_dim, cfg.latent_dim}, std::vector<double>(it, it + n));
        it += n;
      }
      if (has_bias) cfg.output_bias.assign(it, it + static_cast<std::ptrdiff_t>(sample_dim));
      offset = need;
      Rng unused(0);
      gen.emplace(make_analytic_generator(std::move(cfg), unused));
      break;
    }
    default:
      throw BadShape("checkpoint does not hold a generator");
  }
  if (offset != c.payload.size()) throw BadShape("checkpoint payload has trailing values");
  if (gen->latent_dim() != c.latent_dim) throw BadShape("latent_dim header disagrees with architecture");
  if (auto it = c.description.find("eps_dist"); it != c.description.end()) {
    gen->set_eps_dist(io::parse_double(it->second));
  }
  return std::move(*gen);
}

}  // namespace

io::Container to_container(const Generator& gen) {
  io::Container c;
  c.latent_dim = static_cast<std::uint32_t>(gen.latent_dim());
  c.description["sample_shape"] = format_shape(gen.sample_shape());
  c.description["clamp"] = gen.clamps_to_unit() ? "1" : "0";
  if (gen.eps_dist()) c.description["eps_dist"] = io::format_exact(*gen.eps_dist());

  if (const auto* v = std::get_if<VaeModel>(&gen.model())) {
    c.kind = io::ContainerKind::vae;
    c.description["encoder"] = v->encoder.arch.to_string();
    c.description["decoder"] = v->decoder.arch.to_string();
    append(c.payload, v->encoder);
    append(c.payload, v->decoder);
  } else if (const auto* g = std::get_if<GanModel>(&gen.model())) {
    c.kind = io::ContainerKind::gan;
    c.description["generator"] = g->generator.arch.to_string();
    append(c.payload, g->generator);
  } else {
    const auto& cfg = std::get<AnalyticModel>(gen.model()).config;
    c.kind = io::ContainerKind::analytic;
    c.description["n_classes"] = std::to_string(cfg.centers.size());
    c.description["r_class"] = io::format_exact(cfg.r_class);
    c.description["latent_spread"] = io::format_exact(cfg.latent_spread);
    c.description["output_map"] = cfg.output_weight.empty() ? "identity" : "affine";
    c.description["has_bias"] = cfg.output_bias.empty() ? "0" : "1";
    for (const auto& center : cfg.centers) c.payload.insert(c.payload.end(), center.begin(), center.end());
    c.payload.insert(c.payload.end(), cfg.output_weight.storage().begin(), cfg.output_weight.storage().end());
    c.payload.insert(c.payload.end(), cfg.output_bias.begin(), cfg.output_bias.end());
  }
  return c;
}

Generator from_container(const io::Container& c) {
  try {
    return decode(c);
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw BadShape(std::string("inconsistent generator checkpoint: ") + e.what());
  }
}

void save_generator(const std::filesystem::path& path, const Generator& gen) {
  io::save_container(path, to_container(gen));
}

Generator load_generator(const std::filesystem::path& path) {
  try {
    return from_container(io::load_container(path));
  } catch (const BadShape& e) {
    throw BadShape(path.string() + ": " + e.what());
  }
}

}  // namespace lasium::genmodel
