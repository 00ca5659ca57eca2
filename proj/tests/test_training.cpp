#include <doctest.h>

#include <cmath>
#include <random>

#include "affar/error.hpp"
#include "affar/training.hpp"
#include "support.hpp"

using namespace affar;

namespace {

SynthShiftSpec small_spec(bool shifted) {
  SynthShiftSpec s = shifted_synth_spec(3, 11);
  s.num_classes = 3;
  s.channels = 2;
  s.timesteps = 16;
  s.windows_per_class = 12;
  if (!shifted) {
    s.amplitude.assign(3, 1.0);
    s.phase.assign(3, 0.0);
    s.noise.assign(3, 0.2);
    s.drift.assign(3, 0.0);
  }
  return s;
}

ModelConfig small_model(const DGTask& task) {
  ModelConfig m;
  m.conv1_filters = 3;
  m.conv1_kernel = 3;
  m.conv2_filters = 4;
  m.conv2_kernel = 3;
  m.branch_width = 8;
  m.domain_hidden = 4;
  return config_for_task(task, m);
}

TrainConfig small_train() {
  TrainConfig t;
  t.learning_rate = 0.02;
  t.batch_size = 12;
  t.max_epochs = 5;
  t.patience = 50;
  t.seed = 3;
  return t;
}

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(values.size(), values.begin()->size());
  std::size_t r = 0;
  for (const auto& row : values) {
    std::size_t c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Batch batch_of(const DGTask& task, std::size_t per_domain) {
  Batch b;
  for (const auto& d : task.train_domains) {
    b.sub_batches.emplace_back();
    for (std::size_t i = 0; i < per_domain; ++i) b.sub_batches.back().push_back(&d.windows[i]);
  }
  return b;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("classification loss: perfect, uniform and mixed rows") {
    CHECK(classification_loss(rows({{1, 0}, {0, 1}}), std::vector<int>{0, 1}).value == 0.0);
    CHECK(classification_loss(rows({{.25, .25, .25, .25}}), std::vector<int>{2}).value ==
          doctest::Approx(std::log(4.0)).epsilon(1e-15));
    const auto l = classification_loss(rows({{0.5, 0.5}, {0.75, 0.25}}), std::vector<int>{0, 1});
    CHECK(l.value == doctest::Approx(1.0397207708399179).epsilon(1e-14));
    CHECK(l.grad(0, 0) == doctest::Approx(-1.0));
    CHECK(l.grad(1, 1) == doctest::Approx(-2.0));
    CHECK(l.grad(1, 0) == 0.0);
    CHECK_THROWS_AS(classification_loss(rows({{1, 0}}), std::vector<int>{2}), ConfigError);
    CHECK_THROWS_AS(classification_loss(rows({{1, 0}}), std::vector<int>{0, 1}), ShapeError);
  }

  TEST_CASE("domain-specific loss: confident, uniform, per-domain averaging, unknown domain") {
    CHECK(domain_specific_loss(rows({{50, 0}, {0, 50}}), std::vector<int>{0, 1}).value < 1e-20);
    CHECK(domain_specific_loss(rows({{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}), std::vector<int>{0, 1, 2}).value ==
          doctest::Approx(std::log(3.0)).epsilon(1e-15));
    // log(1 + e^{-a}) = L  <=>  a = -log(e^L - 1)
    const double a = -std::log(std::exp(0.2) - 1.0), b = -std::log(std::exp(0.4) - 1.0);
    // domain 0 has three rows at 0.2, domain 1 one row at 0.4: per-domain mean, then mean over domains
    const auto l = domain_specific_loss(rows({{a, 0}, {a, 0}, {a, 0}, {0, b}}), std::vector<int>{0, 0, 0, 1});
    CHECK(l.value == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(domain_specific_loss(rows({{0, 0}}), std::vector<int>{kUnknownDomain}), ConfigError);
  }

  TEST_CASE("losses: analytic gradients match central differences") {
    std::mt19937_64 rng(1);
    Matrix logits = testing::random_matrix(rng, 5, 3);
    const std::vector<int> dom{0, 2, 2, 1, 0};
    const auto l = domain_specific_loss(logits, dom);
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
      const double keep = logits.data[i];
      logits.data[i] = keep + 1e-6;
      const double up = domain_specific_loss(logits, dom).value;
      logits.data[i] = keep - 1e-6;
      const double down = domain_specific_loss(logits, dom).value;
      logits.data[i] = keep;
      CHECK(l.grad.data[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
    }
  }

  TEST_CASE("domain-invariant loss: zero on identical batches, K=2 is the pair, K=3 is the pair mean") {
    std::mt19937_64 rng(2);
    const auto spec = KernelSpec::fixed({1.0, 2.0});
    const Matrix a = testing::random_matrix(rng, 4, 3), b = testing::random_matrix(rng, 4, 3),
                 c = testing::random_matrix(rng, 4, 3);
    const std::vector<Matrix> same{a, a, a};
    CHECK(std::abs(domain_invariant_loss(same, DistanceKind::kMmd, spec).value) < 1e-14);
    const std::vector<Matrix> two{a, b};
    CHECK(domain_invariant_loss(two, DistanceKind::kMmd, spec).value == mmd_squared(a, b, spec).value);
    const std::vector<Matrix> three{a, b, c};
    const double mean =
        (mmd_squared(a, b, spec).value + mmd_squared(a, c, spec).value + mmd_squared(b, c, spec).value) / 3.0;
    CHECK(domain_invariant_loss(three, DistanceKind::kMmd, spec).value == doctest::Approx(mean).epsilon(1e-14));
    const std::vector<Matrix> single{Matrix(1, 3), Matrix(1, 3)};
    CHECK_THROWS_AS(domain_invariant_loss(single, DistanceKind::kCoral, spec), ConfigError);
  }

  TEST_CASE("total loss: components combine as l_cls + lambda l_dsr + beta l_dir") {
    const DGTask task = generate_synthetic(small_spec(true));
    const ModelConfig mc = small_model(task);
    const ModelParams p = ModelParams::init(mc, 1);
    const Batch batch = batch_of(task, 4);
    TrainConfig cfg = small_train();
    for (double lambda : {0.0, 0.3, 2.0}) {
      for (double beta : {0.0, 0.5, 4.0}) {
        cfg.lambda = lambda;
        cfg.beta = beta;
        const auto l = total_loss(batch, p, cfg).losses;
        CHECK(std::abs(l.total - (l.l_cls + lambda * l.l_dsr + beta * l.l_dir)) <= 1e-10);
        if (lambda == 0.0 && beta == 0.0) CHECK(l.total == l.l_cls);
      }
    }
    cfg.lambda = 1.0;
    cfg.beta = 1.0;
    const auto one = total_loss(batch, p, cfg).losses;
    cfg.beta = 2.0;
    const auto two = total_loss(batch, p, cfg).losses;
    CHECK(two.total - one.total == doctest::Approx(one.l_dir).epsilon(1e-10));
    cfg.baseline = Baseline::kErm;
    const auto erm = total_loss(batch, p, cfg).losses;
    CHECK(erm.total == erm.l_cls);
    CHECK(erm.l_dsr == 0.0);
    CHECK(erm.l_dir == 0.0);
  }

  TEST_CASE("total loss: parameter gradients match central differences for every distance") {
    const DGTask task = generate_synthetic(small_spec(true));
    ModelConfig mc = small_model(task);
    mc.branch_width = 5;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.4);
    ModelParams p = ModelParams::init(mc, 2);
    for (auto& g : p.groups()) {
      for (double& v : g.values) v += n(rng);
    }
    const Batch batch = batch_of(task, 3);
    for (DistanceKind kind : {DistanceKind::kMmd, DistanceKind::kCoral, DistanceKind::kAdversarial}) {
      TrainConfig cfg = small_train();
      cfg.lambda = 0.7;
      cfg.beta = 1.3;
      cfg.distance = kind;
      cfg.kernel = KernelSpec::fixed({0.5, 2.0});
      const auto discs = make_discriminators(mc.num_domains, mc.branch_width, 4, 9);
      const auto tl = total_loss(batch, p, cfg, discs);
      INFO("distance " << to_string(kind));
      // conv weights and a tail group sample every path through the model
      for (std::size_t g : {std::size_t{0}, std::size_t{2}, std::size_t{4}, p.groups().size() - 4,
                            p.groups().size() - 2}) {
        auto& values = p.groups()[g].values;
        std::vector<double> numeric(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double keep = values[i];
          values[i] = keep + 1e-6;
          const double up = total_loss(batch, p, cfg, discs).losses.total;
          values[i] = keep - 1e-6;
          const double down = total_loss(batch, p, cfg, discs).losses.total;
          values[i] = keep;
          numeric[i] = (up - down) / 2e-6;
        }
        INFO("group " << p.groups()[g].name);
        CHECK(testing::relative_error(tl.grads.groups()[g].values, numeric) < 1e-4);
      }
    }
  }

  TEST_CASE("sgd: lr 0 is a no-op, one plain step, momentum sequence") {
    std::vector<double> p{1.0}, v{0.0};
    sgd_step(p, v, std::vector<double>{2.0}, 0.0, 0.9);
    CHECK(p[0] == 1.0);
    v = {0.0};
    sgd_step(p, v, std::vector<double>{2.0}, 0.1, 0.0);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));
    p = {0.0};
    v = {0.0};
    sgd_step(p, v, std::vector<double>{1.0}, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
    sgd_step(p, v, std::vector<double>{1.0}, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(-0.29).epsilon(1e-15));
  }

  TEST_CASE("sgd: a non-finite gradient names its group") {
    ModelConfig mc;
    mc.channels = 1;
    mc.timesteps = 32;
    mc.num_domains = 2;
    mc.num_classes = 2;
    auto p = ModelParams::zeros(mc);
    auto g = ModelParams::zeros(mc);
    g.classifier_b()[0] = std::nan("");
    Sgd opt(p);
    CHECK_THROWS_WITH_AS(opt.step(p, g, 0.1, 0.9), doctest::Contains("classifier.b"), DivergenceError);
  }

  TEST_CASE("train: early stopping after `patience` epochs without improvement") {
    const DGTask task = generate_synthetic(small_spec(true));
    TrainConfig cfg = small_train();
    cfg.patience = 2;
    cfg.max_epochs = 10;
    const auto r = train(task, small_model(task), cfg, {[](const ModelParams&) { return 0.5; }});
    CHECK(r.log.epochs.size() == 3);
    CHECK(r.log.best_epoch == 1);
    CHECK(r.log.stop_reason == "patience");
  }

  TEST_CASE("train: returns the parameters of the best validation epoch") {
    const DGTask task = generate_synthetic(small_spec(true));
    TrainConfig cfg = small_train();
    cfg.max_epochs = 4;
    std::vector<ModelParams> seen;
    const std::vector<double> scores{0.1, 0.5, 0.3, 0.2};
    const auto r = train(task, small_model(task), cfg, {[&](const ModelParams& p) {
                           seen.push_back(p);
                           return scores[seen.size() - 1];
                         }});
    REQUIRE(seen.size() == 4);
    CHECK(r.log.best_epoch == 2);
    CHECK(r.log.best_val_weighted_f1 == 0.5);
    CHECK(r.params == seen[1]);
    CHECK_FALSE(r.params == seen[3]);
    CHECK(r.log.stop_reason == "max_epochs");
  }

  TEST_CASE("train: same seed is deterministic, lambda = beta = 0 follows the ERM trajectory") {
    const DGTask task = generate_synthetic(small_spec(true));
    const ModelConfig mc = small_model(task);
    TrainConfig cfg = small_train();
    const auto a = train(task, mc, cfg);
    const auto b = train(task, mc, cfg);
    CHECK(a.params == b.params);
    for (std::size_t e = 0; e < a.log.epochs.size(); ++e) CHECK(a.log.epochs[e].losses.total == b.log.epochs[e].losses.total);
    cfg.seed = 4;
    CHECK_FALSE(train(task, mc, cfg).params == a.params);

    cfg.seed = 3;
    cfg.lambda = 0.0;
    cfg.beta = 0.0;
    const auto zero = train(task, mc, cfg);
    cfg.lambda = 1.0;
    cfg.beta = 1.0;
    cfg.baseline = Baseline::kErm;
    const auto erm = train(task, mc, cfg);
    CHECK(zero.params == erm.params);
    for (std::size_t e = 0; e < zero.log.epochs.size(); ++e) {
      CHECK(zero.log.epochs[e].losses.l_cls == erm.log.epochs[e].losses.l_cls);
    }
  }

  TEST_CASE("train: losses fall on unshifted domains and the invariant loss shrinks") {
    const DGTask task = generate_synthetic(small_spec(false));
    TrainConfig cfg = small_train();
    cfg.max_epochs = 40;
    const ModelConfig mc = small_model(task);
    const auto r = train(task, mc, cfg);
    CHECK(r.log.epochs[19].losses.l_cls < r.log.epochs[0].losses.l_cls);
    CHECK(r.log.epochs.back().losses.total < r.log.epochs[0].losses.total);
    const Batch batch = batch_of(task, 6);
    const double initial = total_loss(batch, ModelParams::init(mc, cfg.seed), cfg).losses.l_dir;
    const double converged = total_loss(batch, r.params, cfg).losses.l_dir;
    CHECK(converged < initial);
    CHECK(r.log.best_val_weighted_f1 > 0.8);
  }

  TEST_CASE("train: rejects a model config that does not fit the task") {
    const DGTask task = generate_synthetic(small_spec(true));
    ModelConfig mc = small_model(task);
    mc.num_classes += 1;
    CHECK_THROWS_AS(train(task, mc, small_train()), ConfigMismatchError);
    TrainConfig bad = small_train();
    bad.batch_size = 1;
    CHECK_THROWS_AS(train(task, small_model(task), bad), ConfigError);
  }

  TEST_CASE("infer: weights on the simplex, argmax with ties to the lowest class") {
    const DGTask task = generate_synthetic(small_spec(true));
    const ModelConfig mc = small_model(task);
    const auto trained = train(task, mc, small_train());
    const auto inf = infer(trained.params, task.test_domain.windows);
    CHECK(inf.predictions.size() == task.test_domain.windows.size());
    for (const auto& w : inf.weights) {
      double s = 0.0;
      for (double v : w) {
        CHECK(v > 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
    auto p = ModelParams::zeros(mc);
    for (int v : infer(p, task.test_domain.windows).predictions) CHECK(v == 0);
    p.classifier_b()[1] = 1.0;
    for (int v : infer(p, task.test_domain.windows).predictions) CHECK(v == 1);
  }

  TEST_CASE("train log: jsonl round trip") {
    testing::TempDir dir("trainlog");
    TrainLog log;
    log.epochs.push_back({1, {1.5, 0.25, 0.125, 1.6}, 0.4, 0.4, 0.01});
    log.epochs.push_back({2, {1.0, 0.2, 0.1, 1.3}, 0.6, 0.6, 0.02});
    log.write_jsonl(dir.str("log.jsonl"));
    const auto back = TrainLog::read_jsonl(dir.str("log.jsonl"));
    REQUIRE(back.epochs.size() == 2);
    CHECK(back.epochs[1].epoch == 2);
    CHECK(back.epochs[0].losses.l_dir == 0.125);
    CHECK(back.epochs[1].val_weighted_f1 == 0.6);
  }
}
