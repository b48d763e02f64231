#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "lasium/binio.hpp"
#include "lasium/metalearn.hpp"
#include "lasium/synth.hpp"
#include "meta_oracles.hpp"
#include "oracles.hpp"

using namespace lasium;
using namespace lasium::metalearn;
using numkit::Architecture;
using numkit::LossKind;
using numkit::Targets;
using testing::gaussian;
using testing::maml_objective;
using testing::proto_objective;
using testing::toy_task;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lasium_test_metalearn" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

synth::Generator analytic_generator(std::uint64_t seed) {
  genmodel::AnalyticGenConfig cfg;
  cfg.latent_dim = 8;
  cfg.n_classes = 10;
  Rng rng(seed);
  return genmodel::make_analytic_generator(cfg, rng);
}

}  // namespace

TEST_CASE("gradient descent on (w-3)^2 follows the geometric recursion") {
  const std::vector<Tensor> w0{Tensor({1}, {0.0})};
  const auto w = gradient_descent(
      w0, [](const std::vector<Tensor>& p) { return GradientSet{Tensor({1}, {2.0 * (p[0][0] - 3.0)})}; }, 0.4, 5);
  CHECK(w[0][0] == doctest::Approx(3.0 * (1.0 - std::pow(0.2, 5))).epsilon(1e-14));
  CHECK(w[0][0] == doctest::Approx(2.99904).epsilon(1e-14));
}

TEST_CASE("maml_adapt: zero steps is the identity, one step is a plain gradient step") {
  Rng rng(1);
  const data::MetaTask t = toy_task({3}, 3, 2, 2, 0.3, rng);
  const NetworkParams p = numkit::init_network(Architecture::mlp(3, {6}, 3), rng);

  const AdaptedParams zero = maml_adapt(p, t.train_x, t.train_y, 0.4, 0, 7);
  CHECK(zero.params == p);
  CHECK(zero.source_hash == numkit::params_hash(p));
  CHECK(zero.task_id == 7);
  CHECK(zero.steps == 0);

  const AdaptedParams one = maml_adapt(p, t.train_x, t.train_y, 0.4, 1);
  NetworkParams expected = p;
  numkit::axpy(-0.4, numkit::grad(p, LossKind::softmax_cross_entropy, t.train_x, Targets::classes(t.train_y)).grads,
               expected.tensors);
  CHECK(one.params == expected);
  CHECK(one.params.arch == p.arch);
}

TEST_CASE("second-order meta-gradient matches finite differences of the meta-objective") {
  MamlConfig cfg;
  cfg.inner_lr = 0.4;
  cfg.adaptation_steps = 3;

  SUBCASE("small MLP") {
    Rng rng(2);
    const data::MetaTask t = toy_task({3}, 3, 2, 2, 0.5, rng);
    const NetworkParams p = numkit::init_network(Architecture::mlp(3, {5}, 3), rng);
    REQUIRE(p.param_count() <= 60);
    const MetaGradient g = maml_task_gradient(p, t, cfg);
    const auto fd = testing::central_differences(p, [&](const NetworkParams& q) { return maml_objective(q, t, cfg); });
    CHECK(g.loss == doctest::Approx(maml_objective(p, t, cfg)).epsilon(1e-12));
    CHECK(testing::max_rel_err(numkit::flatten(g.grads), fd) < 1e-4);
  }
  SUBCASE("conv stack with batch norm") {
    Rng rng(3);
    const data::MetaTask t = toy_task({16, 16, 1}, 3, 1, 2, 0.3, rng);
    const NetworkParams p = numkit::init_network(Architecture::conv4({16, 16, 1}, 3, 3), rng);
    REQUIRE(p.param_count() <= 1000);
    cfg.inner_lr = 0.1;
    const MetaGradient g = maml_task_gradient(p, t, cfg);
    const auto fd = testing::central_differences(p, [&](const NetworkParams& q) { return maml_objective(q, t, cfg); });
    CHECK(testing::max_rel_err(numkit::flatten(g.grads), fd) < 1e-4);
  }
}

TEST_CASE("first and second order coincide without adaptation") {
  Rng rng(4);
  const data::MetaTask t = toy_task({4}, 3, 2, 3, 0.5, rng);
  const NetworkParams p = numkit::init_network(Architecture::mlp(4, {6}, 3), rng);
  const auto plain = numkit::grad(p, LossKind::softmax_cross_entropy, t.val_x, Targets::classes(t.val_y));

  for (const auto& [lr, steps] : {std::pair{0.0, std::size_t{5}}, std::pair{0.4, std::size_t{0}}}) {
    MamlConfig first, second;
    first.order = MamlOrder::first;
    second.order = MamlOrder::second;
    first.inner_lr = second.inner_lr = lr;
    first.adaptation_steps = second.adaptation_steps = steps;
    const MetaGradient a = maml_task_gradient(p, t, first);
    const MetaGradient b = maml_task_gradient(p, t, second);
    CHECK(numkit::flatten(a.grads) == numkit::flatten(b.grads));
    CHECK(numkit::flatten(a.grads) == numkit::flatten(plain.grads));
  }
}

TEST_CASE("meta-gradient reduction is independent of the thread count") {
  Rng rng(5);
  std::vector<data::MetaTask> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(toy_task({4}, 3, 1, 2, 0.5, rng));
  const NetworkParams p = numkit::init_network(Architecture::mlp(4, {8}, 3), rng);
  MamlConfig cfg;
  const MetaGradient one = maml_meta_gradient(p, batch, cfg, 1);
  const MetaGradient three = maml_meta_gradient(p, batch, cfg, 3);
  CHECK(one.loss == three.loss);
  CHECK(numkit::flatten(one.grads) == numkit::flatten(three.grads));

  cfg.meta_batch_size = 3;
  CHECK_THROWS_AS(maml_meta_step(p, batch, cfg, {}), ConfigError);
  ProtoConfig pc;
  pc.meta_batch_size = 5;
  CHECK_THROWS_AS(proto_meta_step(p, batch, pc, {}), ConfigError);
}

TEST_CASE("prototypes are class means") {
  const Tensor one_each({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(proto_prototypes(one_each, {0, 1}, 2) == one_each);

  const Tensor pair({2, 2}, {0.0, 0.0, 2.0, 2.0});
  CHECK(proto_prototypes(pair, {0, 0}, 1) == Tensor({1, 2}, {1.0, 1.0}));

  const Tensor e({4, 1}, {1.0, 5.0, 2.0, 7.0});
  const Tensor permuted({4, 1}, {7.0, 2.0, 5.0, 1.0});
  CHECK(proto_prototypes(e, {0, 1, 0, 1}, 2) == proto_prototypes(permuted, {1, 0, 1, 0}, 2));

  CHECK_THROWS_AS(proto_prototypes(pair, {0, 0}, 2), ConfigError);
}

TEST_CASE("proto_classify is a softmax over negative squared distances") {
  const Tensor protos({2, 1}, {1.0, 2.0});
  const Tensor p = proto_classify(Tensor({1, 1}, {0.0}), protos);  // d^2 = [1, 4]
  const double e1 = std::exp(-1.0), e4 = std::exp(-4.0);
  CHECK(p[0] == doctest::Approx(e1 / (e1 + e4)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(e4 / (e1 + e4)).epsilon(1e-14));
  CHECK(p[0] == doctest::Approx(0.9526).epsilon(1e-4));

  const Tensor square({4, 2}, {1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0});
  const Tensor uniform = proto_classify(Tensor({1, 2}, {0.0, 0.0}), square);
  for (double v : uniform.storage()) CHECK(v == doctest::Approx(0.25));

  CHECK(argmax_rows(proto_classify(Tensor({1, 2}, {0.0, -1.0}), square)) == std::vector<std::uint32_t>{3});
  CHECK_THROWS_AS(proto_classify(Tensor({1, 3}), square), DimensionError);

  // Rows are distributions; a common shift of every distance changes nothing.
  Rng rng(6);
  const Tensor q = gaussian({20, 3}, rng, 2.0);
  const Tensor c = gaussian({5, 3}, rng, 2.0);
  const Tensor probs = proto_classify(q, c);
  for (std::size_t r = 0; r < 20; ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(probs[r * 5 + k] >= 0.0);
      sum += probs[r * 5 + k];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  // Appending a shared coordinate adds the same constant to every distance.
  Tensor q2({20, 4}), c2({5, 4});
  for (std::size_t r = 0; r < 20; ++r) {
    for (std::size_t j = 0; j < 3; ++j) q2[r * 4 + j] = q[r * 3 + j];
    q2[r * 4 + 3] = 1.5;
  }
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t j = 0; j < 3; ++j) c2[k * 4 + j] = c[k * 3 + j];
  }
  const Tensor shifted = proto_classify(q2, c2);
  for (std::size_t i = 0; i < probs.size(); ++i) CHECK(shifted[i] == doctest::Approx(probs[i]).epsilon(1e-12));
}

TEST_CASE("ProtoNets episode gradient matches finite differences") {
  SUBCASE("MLP embedding") {
    Rng rng(7);
    const data::MetaTask t = toy_task({4}, 3, 2, 2, 0.5, rng);
    const NetworkParams p = numkit::init_network(Architecture::mlp(4, {6}, 5), rng);
    const MetaGradient g = proto_task_gradient(p, t);
    CHECK(g.loss == doctest::Approx(proto_objective(p, t)).epsilon(1e-12));
    const auto fd = testing::central_differences(p, [&](const NetworkParams& q) { return proto_objective(q, t); });
    CHECK(testing::max_rel_err(numkit::flatten(g.grads), fd) < 1e-4);
  }
  SUBCASE("conv embedding, final feature map flattened") {
    Rng rng(8);
    const data::MetaTask t = toy_task({16, 16, 1}, 3, 2, 1, 0.3, rng);
    const NetworkParams p = numkit::init_network(Architecture::conv4({16, 16, 1}, 4, 0), rng);
    REQUIRE(p.param_count() <= 1000);
    const MetaGradient g = proto_task_gradient(p, t);
    const auto fd = testing::central_differences(p, [&](const NetworkParams& q) { return proto_objective(q, t); });
    CHECK(testing::max_rel_err(numkit::flatten(g.grads), fd) < 1e-4);
  }
}

TEST_CASE("ProtoNets loss at uniform predictions is ln N") {
  Rng rng(9);
  const data::MetaTask t = toy_task({3}, 5, 1, 2, 0.5, rng);
  NetworkParams p = numkit::init_network(Architecture::mlp(3, {4}, 2), rng);
  for (Tensor& x : p.tensors) std::fill(x.storage().begin(), x.storage().end(), 0.0);
  CHECK(proto_task_gradient(p, t).loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("meta-loss decreases on analytic-generator tasks") {
  const synth::Generator gen = analytic_generator(10);
  synth::TaskPolicy policy;
  policy.variant = synth::RandomOutPolicy{0.4};
  policy.eps_dist = 1.0;

  // The meta-objective on a fixed held-out batch, before and after 100 steps.
  Rng held_rng(99);
  const auto held = synth::generate_meta_batch(gen, policy, 5, 1, 5, 32, held_rng);
  auto run = [&](auto step, auto objective, NetworkParams p) {
    const double before = objective(p, held);
    Rng rng(11);
    numkit::OptimizerState state;
    for (int it = 0; it < 100; ++it) {
      const auto batch = synth::generate_meta_batch(gen, policy, 5, 1, 5, 4, rng);
      MetaStepResult r = step(p, batch, std::move(state));
      p = std::move(r.params);
      state = std::move(r.state);
    }
    const double after = objective(p, held);
    MESSAGE("held-out meta-loss ", before, " -> ", after);
    return std::pair{before, after};
  };

  Rng init(12);
  SUBCASE("MAML") {
    MamlConfig cfg;
    cfg.inner_lr = 0.05;  // the larger-input setting; samples here have norm ~10
    cfg.meta_lr = 0.003;
    const auto [head, tail] = run(
        [&](const NetworkParams& p, const auto& b, numkit::OptimizerState s) {
          return maml_meta_step(p, b, cfg, std::move(s));
        },
        [&](const NetworkParams& p, const auto& b) { return maml_meta_gradient(p, b, cfg).loss; },
        numkit::init_network(Architecture::mlp(8, {32}, 5), init));
    CHECK(tail < head);
  }
  SUBCASE("ProtoNets") {
    ProtoConfig cfg;
    cfg.meta_lr = 0.003;
    const auto [head, tail] = run(
        [&](const NetworkParams& p, const auto& b, numkit::OptimizerState s) {
          return proto_meta_step(p, b, cfg, std::move(s));
        },
        [&](const NetworkParams& p, const auto& b) { return proto_meta_gradient(p, b).loss; },
        numkit::init_network(Architecture::mlp(8, {32}, 16), init));
    CHECK(tail < head);
  }
}

TEST_CASE("evaluate_episode: chance on uninformative tasks, perfect when val repeats train") {
  Rng rng(13);
  Learner maml;
  maml.params = numkit::init_network(Architecture::mlp(6, {16}, 5), rng);
  Learner proto;
  proto.kind = LearnerKind::proto;
  proto.params = numkit::init_network(Architecture::mlp(6, {16}, 8), rng);

  double maml_acc = 0.0, proto_acc = 0.0;
  for (int i = 0; i < 100; ++i) {
    // Class means are tiny next to the per-row noise, so labels carry no signal.
    const data::MetaTask t = toy_task({6}, 5, 1, 3, 1.0, rng, 1e-6);
    maml_acc += evaluate_episode(maml, t) / 100.0;
    proto_acc += evaluate_episode(proto, t) / 100.0;
  }
  MESSAGE("chance-level accuracy: maml ", maml_acc, ", protonets ", proto_acc);
  CHECK(maml_acc >= 0.05);
  CHECK(maml_acc <= 0.45);
  CHECK(proto_acc >= 0.05);
  CHECK(proto_acc <= 0.45);

  data::MetaTask t = toy_task({6}, 5, 2, 2, 0.1, rng, 3.0);
  t.val_x = t.train_x;
  t.val_y = t.train_y;
  const std::uint64_t before = numkit::params_hash(maml.params);
  CHECK(evaluate_episode(maml, t) == 1.0);
  CHECK(numkit::params_hash(maml.params) == before);

  data::MetaTask single = toy_task({6}, 2, 1, 1, 0.0, rng, 3.0);
  single.k_val = 1;
  single.val_x = single.train_x.row(0).reshaped({1, 6});
  single.val_y = {0};
  Learner p2 = proto;
  // One query sitting on its own prototype is always classified correctly.
  CHECK(evaluate_episode(p2, single) == 1.0);
}

TEST_CASE("learner checkpoints and optimizer sidecars round-trip") {
  const auto dir = temp_dir("ckpt");
  Rng rng(14);
  Learner l;
  l.params = numkit::init_network(Architecture::conv4({16, 16, 1}, 2, 5), rng);
  l.maml.inner_lr = 0.05;
  l.maml.order = MamlOrder::first;
  save_learner(dir / "m.lgen", l);
  const Learner back = load_learner(dir / "m.lgen");
  CHECK(back.kind == LearnerKind::maml);
  CHECK(back.params == l.params);
  CHECK(back.maml.inner_lr == 0.05);
  CHECK(back.maml.order == MamlOrder::first);
  CHECK(back.maml.eval_adaptation_steps == 50);

  Learner p;
  p.kind = LearnerKind::proto;
  p.params = numkit::init_network(Architecture::mlp(4, {3}, 2), rng);
  p.proto.meta_batch_size = 7;
  save_learner(dir / "p.lgen", p);
  const Learner pback = load_learner(dir / "p.lgen");
  CHECK(pback.kind == LearnerKind::proto);
  CHECK(pback.params == p.params);
  CHECK(pback.proto.meta_batch_size == 7);

  // A generator checkpoint is not a learner.
  io::Container c = to_container(p);
  c.kind = io::ContainerKind::vae;
  CHECK_THROWS_AS(learner_from_container(c), BadShape);
  c = to_container(p);
  c.payload.pop_back();
  CHECK_THROWS_AS(learner_from_container(c), BadShape);

  // Optimizer state after a couple of real steps.
  const data::MetaTask t = toy_task({4}, 2, 1, 1, 0.5, rng);
  ProtoConfig pc;
  pc.meta_batch_size = 1;
  MetaStepResult r = proto_meta_step(p.params, {t}, pc, {});
  r = proto_meta_step(r.params, {t}, pc, std::move(r.state));
  save_optimizer_state(dir / "p.lopt", r.state, numkit::OptimizerKind::adam);
  CHECK(load_optimizer_state(dir / "p.lopt", r.params) == r.state);

  save_optimizer_state(dir / "empty.lopt", {}, numkit::OptimizerKind::adam);
  CHECK(load_optimizer_state(dir / "empty.lopt", r.params) == numkit::OptimizerState{});

  auto bytes = io::read_file(dir / "p.lopt");
  bytes[0] = 'X';
  io::write_file(dir / "bad.lopt", bytes);
  CHECK_THROWS_AS(load_optimizer_state(dir / "bad.lopt", r.params), BadMagic);
  bytes = io::read_file(dir / "p.lopt");
  bytes.resize(bytes.size() - 5);
  io::write_file(dir / "short.lopt", bytes);
  CHECK_THROWS_AS(load_optimizer_state(dir / "short.lopt", r.params), TruncatedFile);
  CHECK_THROWS_AS(load_optimizer_state(dir / "p.lopt", l.params), BadShape);
}
