#include <string>

#include "lasium/binio.hpp"
#include "lasium/container.hpp"
#include "lasium/metalearn.hpp"

namespace lasium::metalearn {

namespace {

// Classifier description keys: learner, arch, and the learner's
// hyperparameters (doubles in hexfloat). Payload: parameters in tensor order.

constexpr char kOptMagic[4] = {'L', 'O', 'P', 'T'};
constexpr std::uint16_t kOptVersion = 1;

std::size_t parse_count(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw BadShape("bad count '" + text + "'");
  }
  return std::stoull(text);
}

}  // namespace

io::Container to_container(const Learner& learner) {
  io::Container c;
  c.kind = io::ContainerKind::classifier;
  c.description["learner"] = to_string(learner.kind);
  c.description["arch"] = learner.params.arch.to_string();
  if (learner.kind == LearnerKind::maml) {
    const MamlConfig& m = learner.maml;
    c.description["inner_lr"] = io::format_exact(m.inner_lr);
    c.description["meta_lr"] = io::format_exact(m.meta_lr);
    c.description["adaptation_steps"] = std::to_string(m.adaptation_steps);
    c.description["eval_adaptation_steps"] = std::to_string(m.eval_adaptation_steps);
    c.description["meta_batch_size"] = std::to_string(m.meta_batch_size);
    c.description["order"] = m.order == MamlOrder::second ? "second" : "first";
  } else {
    c.description["meta_lr"] = io::format_exact(learner.proto.meta_lr);
    c.description["meta_batch_size"] = std::to_string(learner.proto.meta_batch_size);
  }
  c.payload = numkit::flatten(learner.params.tensors);
  return c;
}

Learner learner_from_container(const io::Container& c) {
  if (c.kind != io::ContainerKind::classifier) throw BadShape("checkpoint does not hold a classifier");
  try {
    Learner l;
    l.kind = parse_learner_kind(c.require("learner"));
    l.params.arch = numkit::Architecture::parse(c.require("arch"));
    l.params.arch.validate();
    if (l.kind == LearnerKind::maml) {
      l.maml.inner_lr = io::parse_double(c.require("inner_lr"));
      l.maml.meta_lr = io::parse_double(c.require("meta_lr"));
      l.maml.adaptation_steps = parse_count(c.require("adaptation_steps"));
      l.maml.eval_adaptation_steps = parse_count(c.require("eval_adaptation_steps"));
      l.maml.meta_batch_size = parse_count(c.require("meta_batch_size"));
      const std::string& order = c.require("order");
      if (order != "first" && order != "second") throw BadShape("bad order '" + order + "'");
      l.maml.order = order == "second" ? MamlOrder::second : MamlOrder::first;
      l.maml.validate();
    } else {
      l.proto.meta_lr = io::parse_double(c.require("meta_lr"));
      l.proto.meta_batch_size = parse_count(c.require("meta_batch_size"));
      l.proto.validate();
    }
    if (c.payload.size() != l.params.arch.param_count()) {
      throw BadShape("payload holds " + std::to_string(c.payload.size()) + " values, architecture needs " +
                     std::to_string(l.params.arch.param_count()));
    }
    for (const numkit::Shape& s : l.params.arch.param_shapes()) l.params.tensors.emplace_back(s);
    numkit::unflatten(c.payload, l.params.tensors);
    return l;
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw BadShape(std::string("invalid classifier checkpoint: ") + e.what());
  }
}

void save_learner(const std::filesystem::path& path, const Learner& learner) {
  io::save_container(path, to_container(learner));
}

Learner load_learner(const std::filesystem::path& path) {
  try {
    return learner_from_container(io::load_container(path));
  } catch (const BadShape& e) {
    throw BadShape(path.string() + ": " + e.what());
  }
}

void save_optimizer_state(const std::filesystem::path& path, const numkit::OptimizerState& state,
                          numkit::OptimizerKind kind) {
  const std::vector<double> m = numkit::flatten(state.m);
  const std::vector<double> v = numkit::flatten(state.v);
  if (m.size() != v.size()) throw DimensionError("optimizer moments differ in size");
  io::ByteWriter w;
  w.raw(kOptMagic, sizeof kOptMagic);
  w.u16(kOptVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u64(state.step);
  w.u64(m.size());
  w.f64s(m);
  w.f64s(v);
  io::write_file(path, w.bytes());
}

numkit::OptimizerState load_optimizer_state(const std::filesystem::path& path, const NetworkParams& params) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  char magic[4];
  r.raw(magic, sizeof magic);
  if (std::string(magic, 4) != std::string(kOptMagic, 4)) throw BadMagic(path.string() + ": not an LOPT file");
  if (const auto version = r.u16(); version != kOptVersion) {
    throw BadShape(path.string() + ": unsupported LOPT version " + std::to_string(version));
  }
  if (r.u8() > static_cast<std::uint8_t>(numkit::OptimizerKind::adam)) {
    throw BadShape(path.string() + ": unknown optimizer kind");
  }
  numkit::OptimizerState state;
  state.step = r.u64();
  const std::uint64_t count = r.u64();
  if (count == 0) {
    if (r.remaining() != 0) throw BadShape(path.string() + ": trailing bytes");
    return state;
  }
  if (count != params.param_count()) {
    throw BadShape(path.string() + ": moments cover " + std::to_string(count) + " values, network has " +
                   std::to_string(params.param_count()));
  }
  if (r.remaining() != 2 * count * sizeof(double)) {
    if (r.remaining() < 2 * count * sizeof(double)) throw TruncatedFile(path.string() + ": unexpected end of file");
    throw BadShape(path.string() + ": trailing bytes");
  }
  std::vector<double> m(count), v(count);
  r.f64s(m);
  r.f64s(v);
  state.m = numkit::zeros_like(params.tensors);
  state.v = numkit::zeros_like(params.tensors);
  numkit::unflatten(m, state.m);
  numkit::unflatten(v, state.v);
  return state;
}

}  // namespace lasium::metalearn
