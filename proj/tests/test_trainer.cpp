#include <doctest.h>

#include "blindspot/error.hpp"
#include "blindspot/trainer.hpp"
#include "generators.hpp"

using namespace blindspot;

TEST_CASE("architecture strings") {
  const auto fc = parse_arch("fc10");
  CHECK(fc.family == ArchFamily::softmax);
  CHECK(fc.name == "FC10");
  CHECK(fc.lambdas == std::vector<double>{1e-4});
  CHECK(parse_arch("FC10(1e-2)").lambdas == std::vector<double>{1e-2});
  CHECK(parse_arch("fc10:1").lambdas == std::vector<double>{1.0});

  const auto deep = parse_arch("fc100-100-10");
  CHECK(deep.family == ArchFamily::sigmoid_fc);
  CHECK(deep.hidden == std::vector<std::size_t>{100, 100});
  CHECK(deep.classes == 10);
  CHECK(deep.lambdas == std::vector<double>{1e-5, 1e-5, 1e-6});

  const auto ae = parse_arch("ae400-10");
  CHECK(ae.family == ArchFamily::autoencoder);
  CHECK(ae.hidden == std::vector<std::size_t>{400});
  CHECK(ae.lambdas.back() == 1e-6);

  CHECK_THROWS_AS(parse_arch("cnn5"), InvalidInput);
  CHECK_THROWS_AS(parse_arch("fc10(1e-2"), InvalidInput);
  CHECK_THROWS_AS(parse_arch("ae10-20-10"), InvalidInput);
  CHECK_THROWS_AS(parse_arch("fc1"), InvalidInput);
  CHECK_THROWS_AS(parse_arch("fc"), InvalidInput);
  CHECK_THROWS_AS(parse_arch("fc10-x"), InvalidInput);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto data = make_synthetic_blobs(300, 2);
  TrainConfig cfg;
  cfg.max_lbfgs_iterations = 150;
  cfg.seed = 5;
  cfg.chunk_size = 64;
  std::vector<TrainLogRow> log;
  const Network a = train(parse_arch("fc8-8-2"), data, cfg, &log);
  const Network b = train(parse_arch("fc8-8-2"), data, cfg);
  REQUIRE(a.num_layers() == 3);
  for (std::size_t k = 0; k < a.num_layers(); ++k) CHECK(a.layers[k].weights == b.layers[k].weights);
  REQUIRE(log.size() > 2);
  CHECK(log.back().loss < log.front().loss);
  CHECK(a.training_meta.at("train_error") < 0.05);

  // The chunked reduction order is fixed, but changing chunk size only moves
  // rounding, not the model.
  TrainConfig other = cfg;
  other.chunk_size = 1000;
  const Network c = train(parse_arch("fc8-8-2"), data, other);
  CHECK(std::abs(c.training_meta.at("final_loss") - a.training_meta.at("final_loss")) < 1e-6);
}

TEST_CASE("lambda schedule must match the architecture") {
  const auto data = make_synthetic_blobs(20, 2);
  TrainConfig cfg;
  cfg.lambda_schedule = std::vector<double>{1e-3};
  CHECK_THROWS_AS(train(parse_arch("fc4-2"), data, cfg), InvalidInput);
  cfg.lambda_schedule = std::vector<double>{1e-3, 0.0};
  cfg.max_lbfgs_iterations = 5;
  const Network net = train(parse_arch("fc4-2"), data, cfg);
  CHECK(net.layers[0].lambda == 1e-3);
  CHECK(net.layers[1].lambda == 0.0);
}

TEST_CASE("sparse autoencoder pretraining gives a frozen sigmoid encoder") {
  const auto data = make_synthetic_blobs(200, 9);
  TrainConfig cfg;
  cfg.autoencoder.max_iterations = 60;
  std::vector<TrainLogRow> log;
  const LayerSpec enc = pretrain_autoencoder(data, 12, cfg, &log);
  CHECK(enc.frozen);
  CHECK(enc.kind == LayerKind::sigmoid);
  CHECK(enc.in_dim() == 64);
  CHECK(enc.out_dim() == 12);
  REQUIRE(log.size() > 2);
  CHECK(log.back().loss < log.front().loss);

  cfg.max_lbfgs_iterations = 100;
  const Network net = train(parse_arch("ae12-2"), data, cfg);
  REQUIRE(net.num_layers() == 2);
  CHECK(net.layers[0].frozen);
  CHECK(net.layers[1].kind == LayerKind::softmax);
  CHECK(net.training_meta.at("train_error") < 0.1);

  cfg.autoencoder.sparsity_target = 1.5;
  CHECK_THROWS_AS(pretrain_autoencoder(data, 4, cfg), InvalidInput);
}

TEST_CASE("reconstruction error of a perfect identity map is zero-limited") {
  RngStream rng(1);
  const Matrix x = Matrix::Constant(3, 4, 0.5);
  LayerSpec enc{LayerKind::sigmoid, Matrix::Zero(2, 3), Vector::Zero(2), 0.0, false};
  LayerSpec dec{LayerKind::sigmoid, Matrix::Zero(3, 2), Vector::Zero(3), 0.0, false};
  // Every output is sigmoid(0) = 0.5, equal to the input.
  CHECK(reconstruction_error(enc, dec, x) == doctest::Approx(0.0));
  dec.biases.setConstant(100.0);
  CHECK(reconstruction_error(enc, dec, x) > 0.1);
}

TEST_CASE("adversarial-pool training runs rounds and stays deterministic") {
  const auto data = make_synthetic_blobs(200, 4);
  TrainConfig cfg;
  cfg.max_lbfgs_iterations = 80;
  AdvPoolConfig pool;
  pool.rounds = 2;
  pool.pool_capacity = 20;
  pool.iterations_per_round = 10;
  pool.attack.bisection_steps = 3;
  pool.attack.inner_iterations = 30;
  std::vector<PoolStats> stats;
  const Network a = adversarial_pool_train(parse_arch("fc6-2"), data, cfg, pool, &stats);
  // One pool per layer (input and hidden activations), refreshed each round.
  CHECK(stats.size() == 4);
  for (const auto& s : stats) CHECK(s.generated + s.skipped > 0);
  CHECK(a.training_meta.at("adversarial_rounds") == 2.0);

  AdvPoolConfig threaded = pool;
  threaded.jobs = 3;
  const Network b = adversarial_pool_train(parse_arch("fc6-2"), data, cfg, threaded);
  for (std::size_t k = 0; k < a.num_layers(); ++k) CHECK(a.layers[k].weights == b.layers[k].weights);

  pool.rounds = 0;
  const Network plain = adversarial_pool_train(parse_arch("fc6-2"), data, cfg, pool);
  const Network direct = train(parse_arch("fc6-2"), data, cfg);
  CHECK(plain.layers[0].weights == direct.layers[0].weights);

  pool.mix_ratio = 1.0;
  CHECK_THROWS_AS(pool.validate(), InvalidInput);
}
