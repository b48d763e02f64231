#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "lasium/binio.hpp"
#include "lasium/harness.hpp"

using namespace lasium;
using namespace lasium::harness;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lasium_test_harness" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_text(const std::filesystem::path& p) {
  const auto bytes = io::read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

/// A small end-to-end configuration: 15 synthetic classes in an 8-d sample
/// space, 3-way tasks, a tiny VAE and MLP learner.
RunConfig small_run(const std::filesystem::path& dir) {
  RunConfig c;
  c.seed = 17;
  c.out = dir;
  c.synthetic_classes = 15;
  c.synthetic_per_class = 20;
  c.synthetic_latent_dim = 4;
  c.synthetic.sample_dim = 8;
  c.dataset = dir / "synthetic.ldat";
  c.vae.latent_dim = 4;
  c.vae.hidden = {16};
  c.vae.epochs = 5;
  c.calibration_draws = 500;
  c.n_way = 3;
  c.k_val = 2;
  c.eval_k_val = 3;
  c.hidden = {16};
  c.maml.inner_lr = 0.05;
  c.maml.adaptation_steps = 2;
  c.maml.eval_adaptation_steps = 5;
  c.meta_iterations = 6;
  c.n_eval_tasks = 20;
  c.dump_count = 2;
  return c;
}

}  // namespace

TEST_CASE("defaults match the reference protocol and hyperparameter tables") {
  const RunConfig c;
  CHECK(c.n_eval_tasks == 1000);
  CHECK(c.eval_k_val == 15);
  CHECK(c.n_way == 5);
  CHECK(c.k_tr == 1);
  CHECK(c.k_val == 5);
  CHECK(c.maml.inner_lr == 0.4);
  CHECK(c.maml.meta_lr == 0.001);
  CHECK(c.maml.meta_batch_size == 4);
  CHECK(c.maml.adaptation_steps == 5);
  CHECK(c.maml.eval_adaptation_steps == 50);
  CHECK(c.proto.meta_lr == 0.001);
  CHECK(c.proto.meta_batch_size == 4);
  CHECK(c.vae.latent_dim == 20);
  CHECK(c.sigma2 == 0.5);
  CHECK(c.alpha_ro == 0.4);
  CHECK(c.alpha_oc == 0.2);
  CHECK(c.eps_quantile == 0.3);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("INI parsing, overrides and round trip") {
  const RunConfig c = parse_config(
      "# comment\n"
      "seed = 42\n"
      "deterministic = true\n"
      "[maml]\n"
      "inner_lr = 0.05 \n"
      "order = first\n"
      "; another comment\n"
      "[policy]\n"
      "kind = lasium-n\n"
      "eps_dist = 1.5\n"
      "[learner]\n"
      "hidden = 32, 16\n");
  CHECK(c.seed == 42);
  CHECK(c.deterministic);
  CHECK(c.maml.inner_lr == 0.05);
  CHECK(c.maml.order == metalearn::MamlOrder::first);
  CHECK(c.policy == "lasium-n");
  CHECK(c.eps_dist == 1.5);
  CHECK(c.hidden == std::vector<std::size_t>{32, 16});

  RunConfig o = c;
  apply_override(o, "task.k_tr=5");
  apply_override(o, "policy.eps_dist = auto");
  CHECK(o.k_tr == 5);
  CHECK(!o.eps_dist);

  CHECK(parse_config(format_config(c)).to_map() == c.to_map());
  CHECK(parse_config(format_config(RunConfig{})).to_map() == RunConfig{}.to_map());

  CHECK_THROWS_AS(parse_config("nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[maml]\ninner_lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("policy.kind = lasium-x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just a line\n"), ConfigError);
  CHECK_THROWS_AS(apply_override(o, "no-equals"), ConfigError);

  RunConfig bad;
  bad.n_eval_tasks = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.split = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("confidence interval arithmetic") {
  const EpisodeReport flat = summarize({0.6, 0.6, 0.6});
  CHECK(flat.mean == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(flat.ci95 == 0.0);

  const EpisodeReport r = summarize({0.8, 1.0, 0.6, 1.0});
  const double sd = std::sqrt(((0.05 * 0.05) + (0.15 * 0.15) + (0.25 * 0.25) + (0.15 * 0.15)) / 3.0);
  CHECK(std::abs(r.mean - 0.85) < 1e-12);
  CHECK(std::abs(sd - 0.1914854215512676) < 1e-12);
  CHECK(std::abs(r.ci95 - 1.96 * sd / 2.0) < 1e-12);
  CHECK(std::abs(r.ci95 - 0.18765571) < 1e-8);
  CHECK(r.n == 4);

  CHECK(summarize({1.0}).ci95 == 0.0);
  CHECK_THROWS_AS(summarize({}), ConfigError);
  CHECK_THROWS_AS(summarize({1.5}), NumericsError);
}

TEST_CASE("exit codes follow error categories") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(AnchorRejectionExhausted(3)) == 2);
  CHECK(exit_code_for(TrainingDiverged("x")) == 3);
  CHECK(exit_code_for(NumericsError("x")) == 3);
  CHECK(exit_code_for(BadMagic("x")) == 4);
  CHECK(exit_code_for(IoError("x")) == 4);
}

TEST_CASE("end-to-end pipeline on a small synthetic benchmark") {
  const auto dir = temp_dir("pipeline");
  RunConfig c = small_run(dir);
  const data::SyntheticData syn = cmd_make_synthetic(c);
  CHECK(data::load_dataset(c.dataset) == syn.dataset);

  SUBCASE("train-gen: reload, calibration and label independence") {
    const genmodel::Generator gen = cmd_train_gen(c);
    const genmodel::Generator back = genmodel::load_generator(c.generator_file());
    Rng rng(1);
    const genmodel::LatentVector z = genmodel::sample_prior(gen, rng);
    CHECK(genmodel::generate(back, z) == genmodel::generate(gen, z));

    // Recompute the 30th percentile by sorting every pairwise distance.
    Rng cal(derive_seed(c.seed, kCalibration));
    std::vector<genmodel::LatentVector> zs;
    for (std::size_t i = 0; i < c.calibration_draws; ++i) zs.push_back(genmodel::sample_prior(back, cal));
    std::vector<double> d;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      for (std::size_t j = i + 1; j < zs.size(); ++j) d.push_back(genmodel::distance(zs[i], zs[j]));
    }
    std::sort(d.begin(), d.end());
    const auto k = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(d.size())));
    REQUIRE(back.eps_dist());
    CHECK(*back.eps_dist() == d[k - 1]);

    // Shuffle labels among the meta-train rows: same pool, same checkpoint.
    const LoadedData loaded = load_data(c);
    std::vector<std::uint32_t> labels = loaded.dataset.labels();
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (std::find(loaded.split.train.begin(), loaded.split.train.end(), labels[i]) != loaded.split.train.end()) {
        train_rows.push_back(i);
      }
    }
    std::vector<std::uint32_t> shuffled;
    for (std::size_t r : train_rows) shuffled.push_back(labels[r]);
    std::rotate(shuffled.begin(), shuffled.begin() + 7, shuffled.end());
    for (std::size_t i = 0; i < train_rows.size(); ++i) labels[train_rows[i]] = shuffled[i];
    REQUIRE(labels != loaded.dataset.labels());
    data::save_dataset(dir / "relabelled.ldat",
                       data::LabeledDataset(loaded.dataset.samples(), labels, loaded.dataset.kind()));
    RunConfig relabelled = c;
    relabelled.dataset = dir / "relabelled.ldat";
    relabelled.generator_path = dir / "relabelled.lgen";
    cmd_train_gen(relabelled);
    CHECK(io::read_file(dir / "relabelled.lgen") == io::read_file(c.generator_file()));
  }

  SUBCASE("meta-train, evaluate and determinism") {
    cmd_train_gen(c);
    c.deterministic = true;
    const MetaTrainResult r = cmd_meta_train(c);
    const std::string metrics = read_text(dir / "metrics.csv");
    CHECK(metrics.rfind("iteration,meta_loss,wall_ms\n", 0) == 0);
    CHECK(count_lines(metrics) == c.meta_iterations + 1);
    CHECK(r.meta_losses.size() == c.meta_iterations);
    CHECK(std::abs(r.meta_losses.front() - std::log(3.0)) < 0.5);

    const EpisodeReport rep = cmd_evaluate(c);
    CHECK(rep.n == c.n_eval_tasks);
    const std::string report = read_text(dir / "report.csv");
    CHECK(report.rfind("task_id,accuracy\n", 0) == 0);
    CHECK(count_lines(report) == c.n_eval_tasks + 1);

    // Second run with more threads: identical bytes.
    RunConfig again = c;
    again.out = dir / "again";
    again.generator_path = c.generator_file();
    again.threads = 3;
    cmd_meta_train(again);
    cmd_evaluate(again);
    CHECK(read_text(again.out / "metrics.csv") == metrics);
    CHECK(read_text(again.out / "report.csv") == report);
    CHECK(io::read_file(again.out / "learner.lgen") == io::read_file(dir / "learner.lgen"));
    CHECK(io::read_file(again.out / "learner.lopt") == io::read_file(dir / "learner.lopt"));

    c.learner = metalearn::LearnerKind::proto;
    c.out = dir / "proto";
    c.generator_path = dir / "generator.lgen";
    CHECK(cmd_meta_train(c).learner.kind == metalearn::LearnerKind::proto);
    CHECK(cmd_evaluate(c).n == c.n_eval_tasks);
  }

  SUBCASE("scratch baseline at zero learning rate is at chance") {
    c.maml.inner_lr = 0.0;
    c.n_eval_tasks = 200;
    const EpisodeReport r = cmd_baseline_scratch(c);
    MESSAGE("untrainable scratch accuracy ", r.mean);
    CHECK(r.n == 200);
    CHECK(std::abs(r.mean - 1.0 / 3.0) <= 0.1);
    CHECK(count_lines(read_text(dir / "scratch_report.csv")) == 201);
    c.out = dir / "again";
    CHECK(cmd_baseline_scratch(c).accuracies == r.accuracies);
  }

  SUBCASE("supervised baseline only reads meta-train labels") {
    const SupervisedResult r = cmd_baseline_supervised(c);
    const LoadedData d = load_data(c);
    for (std::uint32_t cls : r.touched_classes) {
      CHECK(std::find(d.split.train.begin(), d.split.train.end(), cls) != d.split.train.end());
    }
    CHECK(!r.touched_classes.empty());
    CHECK(r.report.n == c.n_eval_tasks);
    CHECK(count_lines(read_text(dir / "supervised_audit.txt")) == r.touched_classes.size() + 1);
  }

  SUBCASE("dump-tasks writes re-loadable tasks that regenerate from provenance") {
    cmd_train_gen(c);
    const auto dirs = cmd_dump_tasks(c);
    REQUIRE(dirs.size() == 2);
    const genmodel::Generator gen = genmodel::load_generator(c.generator_file());
    for (const auto& d : dirs) {
      const data::MetaTask t = synth::read_task_dump(d);
      CHECK(t.n_way == c.n_way);
      CHECK(genmodel::generate_batch(gen, t.train_latents) == t.train_x);
      CHECK(genmodel::generate_batch(gen, t.val_latents) == t.val_x);
      const auto sheet = io::read_file(d / "sheet.pgm");
      const std::string header = "P5\n" + std::to_string(c.n_way * 8) + " " + std::to_string(c.k_tr + c.k_val) + "\n";
      CHECK(std::string(sheet.begin(), sheet.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
    }
  }
}

TEST_CASE("missing inputs surface as config or I/O errors") {
  const auto dir = temp_dir("missing");
  RunConfig c;
  c.out = dir;
  CHECK_THROWS_AS(cmd_evaluate(c), ConfigError);  // no dataset configured
  c.dataset = dir / "absent.ldat";
  CHECK_THROWS_AS(cmd_evaluate(c), IoError);
  CHECK_THROWS_AS(cmd_meta_train(c), IoError);  // no generator checkpoint
}
