#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "lasium/harness.hpp"

using namespace lasium;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI configuration file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_flag("--deterministic", f.deterministic, "zero wall-clock columns so outputs are byte-reproducible");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--set", f.overrides, "override a config key, e.g. --set maml.inner_lr=0.05");
}

harness::RunConfig resolve(const CommonFlags& f) {
  harness::RunConfig c = f.config.empty() ? harness::RunConfig{} : harness::load_config(f.config);
  for (const std::string& o : f.overrides) harness::apply_override(c, o);
  if (f.seed) c.seed = *f.seed;
  if (f.deterministic) c.deterministic = true;
  if (!f.out.empty()) c.out = f.out;
  if (f.threads) c.threads = *f.threads;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LASIUM: unsupervised meta-learning task synthesis in a generator's latent space"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::size_t dump_count = 0;

  auto* train_gen = app.add_subcommand("train-gen", "train a VAE (or GAN) on the meta-train split, labels stripped");
  auto* meta_train = app.add_subcommand("meta-train", "meta-train MAML or ProtoNets on synthesized tasks");
  auto* evaluate = app.add_subcommand("evaluate", "score a learner on episodes from the test classes");
  auto* scratch = app.add_subcommand("baseline-scratch", "train a fresh network per evaluation episode");
  auto* supervised = app.add_subcommand("baseline-supervised", "meta-train on labeled episodes, then evaluate");
  auto* dump = app.add_subcommand("dump-tasks", "write synthesized tasks with contact sheets");
  auto* make_syn = app.add_subcommand("make-synthetic", "write the synthetic Gaussian-class benchmark");
  for (auto* cmd : {train_gen, meta_train, evaluate, scratch, supervised, dump, make_syn}) add_common(cmd, flags);
  dump->add_option("--count", dump_count, "number of tasks (default: dump.count)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    harness::RunConfig config = resolve(flags);
    if (train_gen->parsed()) {
      const auto gen = harness::cmd_train_gen(config);
      std::printf("generator written to %s (eps_dist %s)\n", config.generator_file().c_str(),
                  harness::format_double(gen.eps_dist().value_or(0.0)).c_str());
    } else if (meta_train->parsed()) {
      const auto r = harness::cmd_meta_train(config);
      std::printf("meta-trained %zu iterations, final meta-loss %s; learner at %s\n", r.meta_losses.size(),
                  r.meta_losses.empty() ? "n/a" : harness::format_double(r.meta_losses.back()).c_str(),
                  config.learner_file().c_str());
    } else if (evaluate->parsed()) {
      std::printf("%s\n", harness::format_report("evaluate", harness::cmd_evaluate(config)).c_str());
    } else if (scratch->parsed()) {
      std::printf("%s\n", harness::format_report("scratch", harness::cmd_baseline_scratch(config)).c_str());
    } else if (supervised->parsed()) {
      const auto r = harness::cmd_baseline_supervised(config);
      std::printf("%s\n", harness::format_report("supervised", r.report).c_str());
    } else if (dump->parsed()) {
      if (dump_count > 0) config.dump_count = dump_count;
      const auto dirs = harness::cmd_dump_tasks(config);
      std::printf("wrote %zu tasks under %s\n", dirs.size(), (config.out / "tasks").c_str());
    } else if (make_syn->parsed()) {
      const auto s = harness::cmd_make_synthetic(config);
      std::printf("wrote %zu samples in %zu classes to %s\n", s.dataset.size(), s.dataset.n_classes(),
                  (config.out / "synthetic.ldat").c_str());
    }
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return harness::exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
