#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>

#include "lasium/binio.hpp"
#include "lasium/harness.hpp"
#include "lasium/parallel.hpp"

namespace lasium::harness {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

/// Samples of the meta-train classes in dataset order, labels dropped.
numkit::Tensor train_pool(const LoadedData& d) {
  const std::set<std::uint32_t> train(d.split.train.begin(), d.split.train.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.dataset.size(); ++i) {
    if (train.count(d.dataset.labels()[i])) rows.push_back(i);
  }
  if (rows.empty()) throw ConfigError("meta-train split holds no samples");
  return d.dataset.gather(rows);
}

double resolve_eps(const RunConfig& config, const genmodel::Generator& gen) {
  if (config.eps_dist) return *config.eps_dist;
  if (gen.eps_dist()) return *gen.eps_dist();
  Rng rng(derive_seed(config.seed, kCalibration));
  return genmodel::calibrate_eps_dist(gen, rng, config.calibration_draws, config.eps_quantile);
}

std::string metrics_row(std::size_t iteration, double loss, double wall_ms, bool deterministic) {
  char ms[32];
  std::snprintf(ms, sizeof ms, "%.3f", deterministic ? 0.0 : wall_ms);
  return std::to_string(iteration) + "," + format_double(loss) + "," + (deterministic ? "0" : ms) + "\n";
}

metalearn::Learner fresh_learner(const RunConfig& config, const numkit::Architecture& arch, Rng& rng) {
  metalearn::Learner l;
  l.kind = config.learner;
  l.params = numkit::init_network(arch, rng);
  l.maml = config.maml;
  l.proto = config.proto;
  return l;
}

/// Shared meta-training loop; `next_batch` supplies each meta-batch.
template <class NextBatch>
MetaTrainResult meta_train_loop(const RunConfig& config, const numkit::Architecture& arch,
                                NextBatch next_batch, const std::string& prefix) {
  Rng init(derive_seed(config.seed, kLearnerInit));
  MetaTrainResult result{fresh_learner(config, arch, init), {}, {}};
  const std::size_t batch_size =
      config.learner == metalearn::LearnerKind::maml ? config.maml.meta_batch_size : config.proto.meta_batch_size;

  std::string csv = "iteration,meta_loss,wall_ms\n";
  for (std::size_t it = 1; it <= config.meta_iterations; ++it) {
    const auto start = Clock::now();
    const std::vector<data::MetaTask> batch = next_batch(batch_size);
    metalearn::MetaStepResult step =
        config.learner == metalearn::LearnerKind::maml
            ? metalearn::maml_meta_step(result.learner.params, batch, config.maml, std::move(result.state),
                                        config.threads)
            : metalearn::proto_meta_step(result.learner.params, batch, config.proto, std::move(result.state),
                                         config.threads);
    result.learner.params = std::move(step.params);
    result.state = std::move(step.state);
    result.meta_losses.push_back(step.meta_loss);
    csv += metrics_row(it, step.meta_loss, elapsed_ms(start), config.deterministic);
  }
  io::write_text(config.out / (prefix + "metrics.csv"), csv);
  const std::filesystem::path ckpt =
      prefix.empty() ? config.learner_file() : config.out / (prefix + "learner.lgen");
  metalearn::save_learner(ckpt, result.learner);
  std::filesystem::path opt = ckpt;
  opt.replace_extension(".lopt");
  metalearn::save_optimizer_state(opt, result.state, numkit::OptimizerKind::adam);
  return result;
}

template <class Score>
EpisodeReport evaluate_episodes(const RunConfig& config, const LoadedData& d, Score score) {
  if (d.split.test.size() < config.n_way) {
    throw ConfigError("test split has " + std::to_string(d.split.test.size()) + " classes, need " +
                      std::to_string(config.n_way));
  }
  const auto start = Clock::now();
  const std::uint64_t eval_seed = derive_seed(config.seed, kEvalTasks);
  std::vector<double> acc(config.n_eval_tasks);
  parallel_for(config.n_eval_tasks, config.threads, [&](std::size_t i) {
    Rng rng(derive_seed(eval_seed, i));
    data::MetaTask task =
        data::sample_supervised_task(d.dataset, d.split.test, config.n_way, config.k_tr, config.eval_k_val, rng);
    task.seed = i;
    acc[i] = score(task, i);
  });
  return summarize(std::move(acc), config.deterministic ? 0.0 : elapsed_ms(start));
}

}  // namespace

LoadedData load_data(const RunConfig& config) {
  if (config.dataset.empty()) throw ConfigError("data.path is not set");
  LoadedData d{data::load_dataset(config.dataset), {}};
  d.split = data::split_classes(d.dataset.n_classes(), config.split, derive_seed(config.seed, kSplit));
  return d;
}

numkit::Architecture learner_architecture(const RunConfig& config, const numkit::Shape& sample_shape) {
  if (config.arch != "auto") {
    numkit::Architecture a = numkit::Architecture::parse(config.arch);
    a.validate();
    if (a.input_shape != sample_shape) throw ConfigError("learner.arch input shape does not match the data");
    return a;
  }
  const bool maml = config.learner == metalearn::LearnerKind::maml;
  if (sample_shape.size() == 3) return numkit::Architecture::conv4(sample_shape, config.filters, maml ? config.n_way : 0);
  if (sample_shape.size() != 1) throw ConfigError("samples must be vectors or HxWxC images");
  if (config.hidden.empty()) throw ConfigError("learner.hidden must list at least one width");
  if (maml) return numkit::Architecture::mlp(sample_shape[0], config.hidden, config.n_way, config.batch_norm);
  // ProtoNets embeds with the last listed width as a linear output.
  const std::vector<std::size_t> inner(config.hidden.begin(), config.hidden.end() - 1);
  return numkit::Architecture::mlp(sample_shape[0], inner, config.hidden.back(), config.batch_norm);
}

EpisodeReport evaluate_learner(const RunConfig& config, const LoadedData& d, const metalearn::Learner& learner) {
  return evaluate_episodes(config, d,
                           [&](const data::MetaTask& t, std::size_t) { return metalearn::evaluate_episode(learner, t); });
}

genmodel::Generator cmd_train_gen(const RunConfig& config) {
  config.validate();
  const LoadedData d = load_data(config);
  const numkit::Tensor pool = train_pool(d);
  const bool image = d.dataset.kind() == data::SampleKind::image_u8;
  Rng rng(derive_seed(config.seed, kGeneratorTraining));

  std::optional<genmodel::Generator> gen;
  if (config.generator_kind == genmodel::GeneratorKind::gan) {
    genmodel::GanConfig g = config.gan;
    g.clamp_unit = image;
    gen.emplace(genmodel::train_gan(pool, g, rng));
  } else {
    genmodel::VaeConfig v = config.vae;
    v.clamp_unit = image;
    gen.emplace(genmodel::train_vae(pool, v, rng));
  }
  Rng cal(derive_seed(config.seed, kCalibration));
  gen->set_eps_dist(genmodel::calibrate_eps_dist(*gen, cal, config.calibration_draws, config.eps_quantile));
  genmodel::save_generator(config.generator_file(), *gen);
  return std::move(*gen);
}

MetaTrainResult cmd_meta_train(const RunConfig& config) {
  config.validate();
  const genmodel::Generator gen = genmodel::load_generator(config.generator_file());
  const synth::TaskPolicy policy = config.task_policy(resolve_eps(config, gen));

  std::optional<numkit::Tensor> anchors;
  if (policy.anchor_source == synth::AnchorSource::data) anchors = train_pool(load_data(config));

  Rng tasks(derive_seed(config.seed, kMetaTasks));
  return meta_train_loop(
      config, learner_architecture(config, gen.sample_shape()),
      [&](std::size_t batch_size) {
        return synth::generate_meta_batch(gen, policy, config.n_way, config.k_tr, config.k_val, batch_size, tasks,
                                          anchors ? &*anchors : nullptr, config.threads);
      },
      "");
}

EpisodeReport cmd_evaluate(const RunConfig& config) {
  config.validate();
  const LoadedData d = load_data(config);
  const metalearn::Learner learner = metalearn::load_learner(config.learner_file());
  EpisodeReport r = evaluate_learner(config, d, learner);
  write_report_csv(config.out / "report.csv", r);
  return r;
}

EpisodeReport cmd_baseline_scratch(const RunConfig& config) {
  config.validate();
  const LoadedData d = load_data(config);
  RunConfig scratch = config;
  scratch.learner = metalearn::LearnerKind::maml;
  const numkit::Architecture arch = learner_architecture(scratch, d.dataset.sample_shape());
  const std::uint64_t init_seed = derive_seed(config.seed, kScratchInit);
  EpisodeReport r = evaluate_episodes(config, d, [&](const data::MetaTask& t, std::size_t i) {
    Rng rng(derive_seed(init_seed, i));
    return metalearn::evaluate_episode(fresh_learner(scratch, arch, rng), t);
  });
  write_report_csv(config.out / "scratch_report.csv", r);
  return r;
}

SupervisedResult cmd_baseline_supervised(const RunConfig& config) {
  config.validate();
  const LoadedData d = load_data(config);
  if (d.split.train.size() < config.n_way) throw ConfigError("meta-train split has fewer classes than N");

  std::set<std::uint32_t> touched;
  Rng tasks(derive_seed(config.seed, kSupervisedTasks));
  SupervisedResult out;
  out.training = meta_train_loop(
      config, learner_architecture(config, d.dataset.sample_shape()),
      [&](std::size_t batch_size) {
        const std::uint64_t batch_seed = tasks.next_u64();
        std::vector<data::MetaTask> batch(batch_size);
        parallel_for(batch_size, config.threads, [&](std::size_t i) {
          Rng rng(derive_seed(batch_seed, i));
          batch[i] =
              data::sample_supervised_task(d.dataset, d.split.train, config.n_way, config.k_tr, config.k_val, rng);
        });
        for (const auto& t : batch) touched.insert(t.source_classes.begin(), t.source_classes.end());
        return batch;
      },
      "supervised_");

  out.touched_classes.assign(touched.begin(), touched.end());
  std::string audit = "# dataset classes whose labels were read during supervised meta-training\n";
  for (std::uint32_t c : out.touched_classes) audit += std::to_string(c) + "\n";
  io::write_text(config.out / "supervised_audit.txt", audit);
  const std::set<std::uint32_t> train(d.split.train.begin(), d.split.train.end());
  for (std::uint32_t c : out.touched_classes) {
    if (!train.count(c)) throw ConfigError("class " + std::to_string(c) + " outside the meta-train split was used");
  }

  out.report = evaluate_learner(config, d, out.training.learner);
  write_report_csv(config.out / "supervised_report.csv", out.report);
  return out;
}

std::vector<std::filesystem::path> cmd_dump_tasks(const RunConfig& config) {
  config.validate();
  const genmodel::Generator gen = genmodel::load_generator(config.generator_file());
  const synth::TaskPolicy policy = config.task_policy(resolve_eps(config, gen));
  std::optional<numkit::Tensor> anchors;
  if (policy.anchor_source == synth::AnchorSource::data) anchors = train_pool(load_data(config));

  const std::uint64_t dump_seed = derive_seed(config.seed, kDump);
  std::vector<std::filesystem::path> dirs;
  for (std::size_t i = 0; i < config.dump_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "task_%04zu", i);
    const std::filesystem::path dir = config.out / "tasks" / name;
    synth::dump_task(dir, synth::generate_task_seeded(gen, policy, config.n_way, config.k_tr, config.k_val,
                                                      derive_seed(dump_seed, i), anchors ? &*anchors : nullptr));
    dirs.push_back(dir);
  }
  return dirs;
}

data::SyntheticData cmd_make_synthetic(const RunConfig& config) {
  config.validate();
  data::SyntheticData s = data::make_synthetic(config.synthetic_classes, config.synthetic_per_class,
                                               config.synthetic_latent_dim, config.seed, config.synthetic);
  data::save_dataset(config.out / "synthetic.ldat", s.dataset);
  genmodel::save_generator(config.out / "synthetic_oracle.lgen", s.generator);
  return s;
}

}  // namespace lasium::harness
