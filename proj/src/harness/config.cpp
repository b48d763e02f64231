#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "lasium/binio.hpp"
#include "lasium/harness.hpp"

namespace lasium::harness {

using genmodel::GeneratorKind;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("bad value '" + value + "' for " + key + " (expected " + expected + ")");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v, "unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "finite number");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  for (const std::string& item : split_list(v)) out.push_back(to_u64(key, item));
  return out;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::string kind_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::vae: return "vae";
    case GeneratorKind::gan: return "gan";
    case GeneratorKind::analytic: return "analytic";
  }
  return "?";
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = to_u64(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

// Accessor-based fields for values nested in sub-structs.
template <class Get>
Field size_at(Get at) {
  return {[at](RunConfig& c, const std::string& k, const std::string& v) { at(c) = to_u64(k, v); },
          [at](const RunConfig& c) { return std::to_string(at(c)); }};
}
template <class Get>
Field double_at(Get at) {
  return {[at](RunConfig& c, const std::string& k, const std::string& v) { at(c) = to_double(k, v); },
          [at](const RunConfig& c) { return format_double(at(c)); }};
}
template <class Get>
Field sizes_at(Get at) {
  return {[at](RunConfig& c, const std::string& k, const std::string& v) { at(c) = to_sizes(k, v); },
          [at](const RunConfig& c) { return join(at(c)); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["seed"] = size_field(&RunConfig::seed);
    t["deterministic"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.deterministic = to_bool(k, v); },
                          [](const RunConfig& c) { return std::string(c.deterministic ? "true" : "false"); }};
    t["threads"] = size_field(&RunConfig::threads);
    t["out"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
                [](const RunConfig& c) { return c.out.string(); }};

    t["data.path"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.dataset = v; },
                      [](const RunConfig& c) { return c.dataset.string(); }};
    t["data.split"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         const auto parts = split_list(v);
                         if (parts.size() != 3) bad_value(k, v, "three fractions train,val,test");
                         for (std::size_t i = 0; i < 3; ++i) c.split[i] = to_double(k, parts[i]);
                       },
                       [](const RunConfig& c) {
                         return format_double(c.split[0]) + "," + format_double(c.split[1]) + "," +
                                format_double(c.split[2]);
                       }};

    t["generator.kind"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                             if (v == "vae") c.generator_kind = GeneratorKind::vae;
                             else if (v == "gan") c.generator_kind = GeneratorKind::gan;
                             else bad_value(k, v, "vae or gan");
                           },
                           [](const RunConfig& c) { return kind_name(c.generator_kind); }};
    t["generator.path"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.generator_path = v; },
                           [](const RunConfig& c) { return c.generator_path.string(); }};
    t["generator.eps_quantile"] = double_at([](auto& c) -> auto& { return c.eps_quantile; });
    t["generator.calibration_draws"] = size_at([](auto& c) -> auto& { return c.calibration_draws; });

    t["vae.latent_dim"] = size_at([](auto& c) -> auto& { return c.vae.latent_dim; });
    t["vae.hidden"] = sizes_at([](auto& c) -> auto& { return c.vae.hidden; });
    t["vae.epochs"] = size_at([](auto& c) -> auto& { return c.vae.epochs; });
    t["vae.lr"] = double_at([](auto& c) -> auto& { return c.vae.lr; });
    t["vae.kl_weight"] = double_at([](auto& c) -> auto& { return c.vae.kl_weight; });
    t["vae.batch_size"] = size_at([](auto& c) -> auto& { return c.vae.batch_size; });
    t["gan.latent_dim"] = size_at([](auto& c) -> auto& { return c.gan.latent_dim; });
    t["gan.hidden"] = sizes_at([](auto& c) -> auto& { return c.gan.hidden; });
    t["gan.epochs"] = size_at([](auto& c) -> auto& { return c.gan.epochs; });
    t["gan.lr"] = double_at([](auto& c) -> auto& { return c.gan.lr; });
    t["gan.batch_size"] = size_at([](auto& c) -> auto& { return c.gan.batch_size; });

    t["policy.kind"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                          if (v != "lasium-n" && v != "lasium-ro" && v != "lasium-oc") {
                            bad_value(k, v, "lasium-n, lasium-ro or lasium-oc");
                          }
                          c.policy = v;
                        },
                        [](const RunConfig& c) { return c.policy; }};
    t["policy.sigma2"] = double_at([](auto& c) -> auto& { return c.sigma2; });
    t["policy.alpha_ro"] = double_at([](auto& c) -> auto& { return c.alpha_ro; });
    t["policy.alpha_oc"] = double_at([](auto& c) -> auto& { return c.alpha_oc; });
    t["policy.eps_dist"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                              if (v == "auto") c.eps_dist.reset();
                              else c.eps_dist = to_double(k, v);
                            },
                            [](const RunConfig& c) {
                              return c.eps_dist ? format_double(*c.eps_dist) : std::string("auto");
                            }};
    t["policy.anchor_source"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                                   if (v == "prior") c.anchor_source = synth::AnchorSource::prior;
                                   else if (v == "data") c.anchor_source = synth::AnchorSource::data;
                                   else bad_value(k, v, "prior or data");
                                 },
                                 [](const RunConfig& c) {
                                   return std::string(c.anchor_source == synth::AnchorSource::data ? "data" : "prior");
                                 }};
    t["policy.max_attempts"] = size_field(&RunConfig::max_attempts);

    t["task.n_way"] = size_field(&RunConfig::n_way);
    t["task.k_tr"] = size_field(&RunConfig::k_tr);
    t["task.k_val"] = size_field(&RunConfig::k_val);
    t["task.eval_k_val"] = size_field(&RunConfig::eval_k_val);

    t["learner.kind"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                           c.learner = metalearn::parse_learner_kind(v);
                         },
                         [](const RunConfig& c) { return metalearn::to_string(c.learner); }};
    t["learner.arch"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.arch = v; },
                         [](const RunConfig& c) { return c.arch; }};
    t["learner.filters"] = size_field(&RunConfig::filters);
    t["learner.hidden"] = sizes_at([](auto& c) -> auto& { return c.hidden; });
    t["learner.batch_norm"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                                 c.batch_norm = to_bool(k, v);
                               },
                               [](const RunConfig& c) { return std::string(c.batch_norm ? "true" : "false"); }};
    t["learner.path"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.learner_path = v; },
                         [](const RunConfig& c) { return c.learner_path.string(); }};
    t["learner.meta_iterations"] = size_field(&RunConfig::meta_iterations);

    t["maml.inner_lr"] = double_at([](auto& c) -> auto& { return c.maml.inner_lr; });
    t["maml.meta_lr"] = double_at([](auto& c) -> auto& { return c.maml.meta_lr; });
    t["maml.adaptation_steps"] = size_at([](auto& c) -> auto& { return c.maml.adaptation_steps; });
    t["maml.eval_adaptation_steps"] =
        size_at([](auto& c) -> auto& { return c.maml.eval_adaptation_steps; });
    t["maml.meta_batch_size"] = size_at([](auto& c) -> auto& { return c.maml.meta_batch_size; });
    t["maml.order"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         if (v == "first") c.maml.order = metalearn::MamlOrder::first;
                         else if (v == "second") c.maml.order = metalearn::MamlOrder::second;
                         else bad_value(k, v, "first or second");
                       },
                       [](const RunConfig& c) {
                         return std::string(c.maml.order == metalearn::MamlOrder::second ? "second" : "first");
                       }};
    t["proto.meta_lr"] = double_at([](auto& c) -> auto& { return c.proto.meta_lr; });
    t["proto.meta_batch_size"] = size_at([](auto& c) -> auto& { return c.proto.meta_batch_size; });

    t["eval.n_tasks"] = size_field(&RunConfig::n_eval_tasks);
    t["dump.count"] = size_field(&RunConfig::dump_count);

    t["synthetic.classes"] = size_field(&RunConfig::synthetic_classes);
    t["synthetic.per_class"] = size_field(&RunConfig::synthetic_per_class);
    t["synthetic.latent_dim"] = size_field(&RunConfig::synthetic_latent_dim);
    t["synthetic.sample_dim"] = size_at([](auto& c) -> auto& { return c.synthetic.sample_dim; });
    t["synthetic.r_class"] = double_at([](auto& c) -> auto& { return c.synthetic.r_class; });
    t["synthetic.center_radius"] = double_at([](auto& c) -> auto& { return c.synthetic.center_radius; });
    t["synthetic.output_scale"] = double_at([](auto& c) -> auto& { return c.synthetic.output_scale; });
    return t;
  }();
  return table;
}

}  // namespace

void set_option(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, key, trim(value));
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_option(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig config;
  std::string section;
  std::stringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set_option(config, section.empty() ? key : section + "." + key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path.string());
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(*this);
  return out;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, value] : config.to_map()) out += key + " = " + value + "\n";
  return out;
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  double total = 0.0;
  for (double f : split) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (n_way < 2) throw ConfigError("task.n_way must be >= 2");
  if (k_tr < 1) throw ConfigError("task.k_tr must be >= 1");
  if (k_val < 1 || eval_k_val < 1) throw ConfigError("task.k_val and task.eval_k_val must be >= 1");
  if (n_eval_tasks < 1) throw ConfigError("eval.n_tasks must be >= 1");
  if (!(sigma2 > 0.0)) throw ConfigError("policy.sigma2 must be > 0");
  if (eps_dist && !(*eps_dist >= 0.0)) throw ConfigError("policy.eps_dist must be >= 0");
  if (!(eps_quantile > 0.0 && eps_quantile < 1.0)) throw ConfigError("generator.eps_quantile must be in (0, 1)");
  if (calibration_draws < 2) throw ConfigError("generator.calibration_draws must be >= 2");
  maml.validate();
  proto.validate();
  task_policy(eps_dist.value_or(0.0)).validate();
}

std::filesystem::path RunConfig::generator_file() const {
  return generator_path.empty() ? out / "generator.lgen" : generator_path;
}

std::filesystem::path RunConfig::learner_file() const {
  return learner_path.empty() ? out / "learner.lgen" : learner_path;
}

synth::TaskPolicy RunConfig::task_policy(double eps) const {
  synth::TaskPolicy p;
  if (policy == "lasium-n") p.variant = synth::NoisePolicy{std::sqrt(sigma2)};
  else if (policy == "lasium-ro") p.variant = synth::RandomOutPolicy{alpha_ro};
  else p.variant = synth::OtherClassesPolicy{alpha_oc};
  p.eps_dist = eps;
  p.max_attempts = max_attempts;
  p.anchor_source = anchor_source;
  return p;
}

}  // namespace lasium::harness
