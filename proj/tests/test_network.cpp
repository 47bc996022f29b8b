#include <doctest.h>

#include <cmath>
#include <limits>

#include "blindspot/error.hpp"
#include "blindspot/model_io.hpp"
#include "blindspot/network.hpp"
#include "generators.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace blindspot;

TEST_CASE("parameter and input gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const Network net = gen::random_classifier(seed, 3, 16);
    const auto r = gradcheck::check_network(net, seed + 1000);
    CAPTURE(seed);
    CAPTURE(r.first_failure);
    CHECK(r.failures == 0);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("gradients of frozen layers are excluded from the flat view") {
  std::uint64_t seed = 3;
  Network net = gen::random_classifier(seed, 3, 8);
  while (net.num_layers() < 2) net = gen::random_classifier(++seed, 3, 8);
  const std::size_t all = trainable_parameter_count(net);
  net.layers[0].frozen = true;
  const auto l0 = static_cast<std::size_t>(net.layers[0].weights.size() + net.layers[0].biases.size());
  CHECK(trainable_parameter_count(net) == all - l0);
  Vector flat = pack_parameters(net);
  flat.setConstant(0.25);
  unpack_parameters(net, flat);
  CHECK(net.layers[1].weights.isApproxToConstant(0.25));
  CHECK_FALSE(net.layers[0].weights.isApproxToConstant(0.25));
}

TEST_CASE("stable sigmoid stays finite and exact at the extremes") {
  CHECK(stable_sigmoid(0.0) == 0.5);
  CHECK(stable_sigmoid(800.0) == 1.0);
  CHECK(stable_sigmoid(-800.0) == 0.0);
  CHECK(std::isfinite(stable_sigmoid(-1e308)));
  for (double z = -30.0; z <= 30.0; z += 0.7) {
    CHECK(stable_sigmoid(z) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-14));
    CHECK(stable_sigmoid(z) + stable_sigmoid(-z) == doctest::Approx(1.0));
  }
}

TEST_CASE("softmax outputs are probabilities even for huge logits") {
  const std::size_t dims[] = {3, 4};
  const LayerKind kinds[] = {LayerKind::softmax};
  const double lambdas[] = {0.0};
  Network net = make_network("s", dims, kinds, lambdas, 1);
  net.layers[0].weights *= 1e6;
  const Vector p = forward(net, Vector::Constant(3, 1.0)).output();
  CHECK(p.allFinite());
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p.minCoeff() >= 0.0);
  CHECK(cross_entropy(Vector::Unit(4, 1), 0) == doctest::Approx(-std::log(1e-30)));
}

TEST_CASE("argmax ties go to the lowest index") {
  Vector v(4);
  v << 0.1, 0.4, 0.4, 0.1;
  CHECK(argmax(v) == 1);
  CHECK_THROWS_AS(argmax(Vector()), InvalidInput);
}

TEST_CASE("weight decay is lambda * sum(w^2) / units, biases excluded") {
  const std::size_t dims[] = {3, 2, 4};
  const LayerKind kinds[] = {LayerKind::sigmoid, LayerKind::softmax};
  const double lambdas[] = {0.5, 0.25};
  Network net = make_network("d", dims, kinds, lambdas, 2);
  net.layers[0].biases.setConstant(100.0);
  const double expected = 0.5 * net.layers[0].weights.squaredNorm() / 2.0 +
                          0.25 * net.layers[1].weights.squaredNorm() / 4.0;
  CHECK(decay_penalty(net) == doctest::Approx(expected));
}

TEST_CASE("batch and single-example evaluation agree") {
  const Network net = gen::random_classifier(11, 3, 20);
  RngStream rng(4);
  const Matrix x = gen::random_matrix(rng, static_cast<Eigen::Index>(net.input_dim()), 7);
  const Matrix out = forward_batch(net, x);
  const auto pred = predict_batch(net, x);
  for (Eigen::Index j = 0; j < 7; ++j) {
    const Vector single = forward(net, Vector(x.col(j))).output();
    CHECK((out.col(j) - single).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(pred[static_cast<std::size_t>(j)] == argmax(single));
  }
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const Matrix h = activations_at(net, x, k);
    CHECK((forward_batch(net, h, k) - out).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("network validation") {
  Network net = gen::random_classifier(5, 3, 8);
  CHECK_NOTHROW(net.validate());
  Network bad = net;
  bad.layers[0].lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = net;
  bad.layers[0].weights(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = net;
  bad.layers.push_back(bad.layers.back());
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  CHECK_THROWS_AS(Network{}.validate(), InvalidInput);
}

TEST_CASE("model JSON round trip is exact") {
  Network net = gen::random_classifier(8, 3, 10);
  net.layers[0].frozen = true;
  net.training_meta["test_error"] = 0.0123;
  const Network back = network_from_json(nlohmann::json::parse(network_to_json(net).dump()));
  REQUIRE(back.num_layers() == net.num_layers());
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    CHECK(back.layers[k].kind == net.layers[k].kind);
    CHECK(back.layers[k].weights == net.layers[k].weights);
    CHECK(back.layers[k].biases == net.layers[k].biases);
    CHECK(back.layers[k].lambda == net.layers[k].lambda);
    CHECK(back.layers[k].frozen == net.layers[k].frozen);
  }
  CHECK(back.training_meta == net.training_meta);
  CHECK(back.name == net.name);
}

TEST_CASE("model JSON errors carry the offending path") {
  const Network net = gen::random_classifier(9, 2, 6);
  auto expect_path = [](nlohmann::json doc, const std::string& fragment) {
    try {
      network_from_json(doc);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CAPTURE(e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  auto doc = network_to_json(net);
  doc["layers"][0]["weights"].push_back(1.0);
  expect_path(doc, "$.layers[0].weights");

  doc = network_to_json(net);
  doc["layers"][0]["kind"] = "affine+tanh";
  expect_path(doc, "unknown layer kind");

  doc = network_to_json(net);
  doc["extra"] = 1;
  expect_path(doc, "$.extra");

  doc = network_to_json(net);
  doc["layers"] = nlohmann::json::array();
  expect_path(doc, "$.layers");

  doc = network_to_json(net);
  doc["layers"][0].erase("biases");
  expect_path(doc, "$.layers[0].biases");
}
