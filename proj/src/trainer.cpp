#include "blindspot/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>

#include "blindspot/error.hpp"
#include "blindspot/lbfgs.hpp"
#include "blindspot/parallel.hpp"

namespace blindspot {

namespace {

std::size_t parse_count(std::string_view s, std::string_view whole) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v == 0) {
    throw InvalidInput("architecture '" + std::string(whole) + "': bad layer size '" +
                       std::string(s) + "'");
  }
  return v;
}

double parse_real(std::string_view s, std::string_view whole) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("architecture '" + std::string(whole) + "': bad lambda '" +
                       std::string(s) + "'");
  }
}

std::vector<std::size_t> parse_sizes(std::string_view s, std::string_view whole) {
  std::vector<std::size_t> out;
  while (true) {
    const auto dash = s.find('-');
    out.push_back(parse_count(s.substr(0, dash), whole));
    if (dash == std::string_view::npos) break;
    s.remove_prefix(dash + 1);
  }
  return out;
}

}  // namespace

ArchSpec parse_arch(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::string_view s = lower;

  std::optional<double> lambda;
  if (const auto open = s.find('('); open != std::string_view::npos) {
    if (s.back() != ')') throw InvalidInput("architecture '" + lower + "': unbalanced '('");
    lambda = parse_real(s.substr(open + 1, s.size() - open - 2), text);
    s = s.substr(0, open);
  } else if (const auto colon = s.find(':'); colon != std::string_view::npos) {
    lambda = parse_real(s.substr(colon + 1), text);
    s = s.substr(0, colon);
  }

  ArchSpec spec;
  spec.name = lower;
  std::vector<std::size_t> sizes;
  if (s.starts_with("fc")) {
    sizes = parse_sizes(s.substr(2), text);
    spec.family = sizes.size() == 1 ? ArchFamily::softmax : ArchFamily::sigmoid_fc;
  } else if (s.starts_with("ae")) {
    sizes = parse_sizes(s.substr(2), text);
    if (sizes.size() != 2) {
      throw InvalidInput("architecture '" + std::string(text) +
                         "': autoencoder form is aeH-K with one hidden layer");
    }
    spec.family = ArchFamily::autoencoder;
  } else {
    throw InvalidInput("unknown architecture '" + std::string(text) +
                       "' (expected fc10, fcH-...-K or aeH-K)");
  }
  spec.name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(spec.name[0])));
  spec.name[1] = static_cast<char>(std::toupper(static_cast<unsigned char>(spec.name[1])));
  spec.classes = sizes.back();
  if (spec.classes < 2) throw InvalidInput("architecture needs at least two classes");
  spec.hidden.assign(sizes.begin(), sizes.end() - 1);

  switch (spec.family) {
    case ArchFamily::softmax:
      spec.lambdas = {lambda.value_or(1e-4)};
      break;
    case ArchFamily::sigmoid_fc:
      spec.lambdas.assign(spec.hidden.size(), lambda.value_or(1e-5));
      spec.lambdas.push_back(lambda ? *lambda : 1e-6);
      break;
    case ArchFamily::autoencoder:
      spec.lambdas = {0.0, lambda.value_or(1e-6)};
      break;
  }
  return spec;
}

void TrainConfig::validate() const {
  if (max_lbfgs_iterations < 0) throw InvalidInput("train: max_lbfgs_iterations < 0");
  if (memory_pairs < 1) throw InvalidInput("train: memory_pairs must be at least 1");
  if (!(grad_tol > 0.0)) throw InvalidInput("train: grad_tol must be positive");
  if (chunk_size == 0) throw InvalidInput("train: chunk_size must be positive");
  if (lambda_schedule) {
    for (double l : *lambda_schedule) {
      if (!(l >= 0.0)) throw InvalidInput("train: lambdas must be non-negative");
    }
  }
}

void AdvPoolConfig::validate() const {
  if (pool_capacity < 1) throw InvalidInput("adversarial pool: capacity must be at least 1");
  if (!(refresh_fraction > 0.0 && refresh_fraction <= 1.0)) {
    throw InvalidInput("adversarial pool: refresh_fraction must lie in (0, 1]");
  }
  if (!(mix_ratio > 0.0 && mix_ratio < 1.0)) {
    throw InvalidInput("adversarial pool: mix_ratio must lie in (0, 1)");
  }
  if (rounds < 0) throw InvalidInput("adversarial pool: rounds must be non-negative");
  if (iterations_per_round < 1) {
    throw InvalidInput("adversarial pool: iterations_per_round must be positive");
  }
  attack.validate();
}

Network fit(Network net, std::span<const ObjectiveTerm> terms, const TrainConfig& cfg,
            std::vector<TrainLogRow>* log) {
  cfg.validate();
  net.validate();
  for (const auto& t : terms) {
    if (t.inputs == nullptr) throw InvalidInput("fit: objective term without inputs");
    if (static_cast<std::size_t>(t.inputs->cols()) != t.labels.size()) {
      throw InvalidInput("fit: objective term input and label counts differ");
    }
  }

  Network work = net;
  const auto chunk = static_cast<Eigen::Index>(cfg.chunk_size);
  const Objective objective = [&](const Vector& theta, Vector& grad) {
    unpack_parameters(work, theta);
    Gradients g = Gradients::zeros_like(work);
    double total = 0.0;
    for (const auto& t : terms) {
      const Matrix& inputs = *t.inputs;
      for (Eigen::Index start = 0; start < inputs.cols(); start += chunk) {
        const Eigen::Index n = std::min(chunk, inputs.cols() - start);
        total += accumulate_cross_entropy_gradient(
            work, t.first_layer, inputs.middleCols(start, n),
            t.labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(n)),
            t.weight_per_example, g);
      }
    }
    total += decay_penalty(work, true);
    accumulate_decay_gradient(work, g, true);
    grad = pack_gradients(work, g);
    return total;
  };

  LbfgsOptions opts;
  opts.max_iterations = cfg.max_lbfgs_iterations;
  opts.memory = cfg.memory_pairs;
  opts.grad_tol = cfg.grad_tol;

  LbfgsResult res;
  try {
    res = minimize_lbfgs(
        objective, pack_parameters(net), opts, [&](const LbfgsIterate& it) {
          const TrainLogRow row{it.iteration, it.value, it.grad_norm};
          if (log != nullptr) log->push_back(row);
          if (cfg.on_iteration) cfg.on_iteration(row);
          return true;
        });
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string("training '") + net.name + "': " + e.what(),
                          e.iteration());
  }
  unpack_parameters(net, res.x);
  net.training_meta["iterations"] = res.iterations;
  net.training_meta["final_loss"] = res.value;
  net.training_meta["final_grad_norm"] = res.grad_norm;
  net.training_meta["converged"] = res.converged ? 1.0 : 0.0;
  return net;
}

namespace {

void record_errors(Network& net, const LabeledDataset& data, const LabeledDataset* test,
                   std::uint64_t seed) {
  net.training_meta["seed"] = static_cast<double>(seed);
  net.training_meta["train_error"] = error_rate(net, data);
  if (test != nullptr && !test->empty()) net.training_meta["test_error"] = error_rate(net, *test);
}

std::vector<double> resolve_lambdas(const ArchSpec& spec, const TrainConfig& cfg) {
  if (!cfg.lambda_schedule) return spec.lambdas;
  if (cfg.lambda_schedule->size() != spec.lambdas.size()) {
    throw InvalidInput("train: lambda schedule has " +
                       std::to_string(cfg.lambda_schedule->size()) + " entries, architecture '" +
                       spec.name + "' has " + std::to_string(spec.lambdas.size()) + " layers");
  }
  return *cfg.lambda_schedule;
}

}  // namespace

Network train(const ArchSpec& spec, const LabeledDataset& data, const TrainConfig& cfg,
              std::vector<TrainLogRow>* log, const LabeledDataset* test) {
  cfg.validate();
  if (data.empty()) throw InvalidInput("train: empty dataset");
  if (static_cast<std::size_t>(data.num_classes()) > spec.classes) {
    throw InvalidInput("train: dataset has more classes than the architecture outputs");
  }
  const auto lambdas = resolve_lambdas(spec, cfg);
  const double per_example = 1.0 / static_cast<double>(data.size());

  if (spec.family == ArchFamily::autoencoder) {
    LayerSpec encoder = pretrain_autoencoder(data, spec.hidden.front(), cfg);
    encoder.lambda = lambdas[0];
    const std::size_t dims[] = {spec.hidden.front(), spec.classes};
    const LayerKind kinds[] = {LayerKind::softmax};
    const double lam[] = {lambdas[1]};
    Network head = make_network(spec.name, dims, kinds, lam, RngStream(cfg.seed).fork(1).seed());
    Network net;
    net.name = spec.name;
    net.layers = {std::move(encoder), std::move(head.layers.front())};
    // The encoder is frozen, so its features are computed once.
    const Matrix features = activations_at(net, data.pixels(), 1);
    const ObjectiveTerm term{&features, data.labels(), 1, per_example};
    net = fit(std::move(net), std::span(&term, 1), cfg, log);
    record_errors(net, data, test, cfg.seed);
    return net;
  }

  std::vector<std::size_t> dims{data.dim()};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.classes);
  std::vector<LayerKind> kinds(spec.hidden.size(), LayerKind::sigmoid);
  kinds.push_back(LayerKind::softmax);
  Network net = make_network(spec.name, dims, kinds, lambdas, cfg.seed);
  const ObjectiveTerm term{&data.pixels(), data.labels(), 0, per_example};
  net = fit(std::move(net), std::span(&term, 1), cfg, log);
  record_errors(net, data, test, cfg.seed);
  return net;
}

namespace {

struct AutoencoderParams {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

Matrix sigmoid_layer(const Matrix& w, const Vector& b, const Eigen::Ref<const Matrix>& x) {
  Matrix z = w * x;
  z.colwise() += b;
  return z.unaryExpr([](double v) { return stable_sigmoid(v); });
}

}  // namespace

double reconstruction_error(const LayerSpec& encoder, const LayerSpec& decoder,
                            const Matrix& inputs) {
  if (inputs.cols() == 0) throw InvalidInput("reconstruction_error: no inputs");
  const Matrix hidden = sigmoid_layer(encoder.weights, encoder.biases, inputs);
  const Matrix recon = sigmoid_layer(decoder.weights, decoder.biases, hidden);
  return 0.5 * (recon - inputs).squaredNorm() / static_cast<double>(inputs.cols());
}

LayerSpec pretrain_autoencoder(const LabeledDataset& data, std::size_t hidden,
                               const TrainConfig& cfg, std::vector<TrainLogRow>* log) {
  cfg.validate();
  const auto& ae = cfg.autoencoder;
  if (!(ae.sparsity_target > 0.0 && ae.sparsity_target < 1.0)) {
    throw InvalidInput("autoencoder: sparsity target must lie in (0, 1)");
  }
  if (!(ae.sparsity_weight >= 0.0) || !(ae.lambda >= 0.0)) {
    throw InvalidInput("autoencoder: sparsity weight and lambda must be non-negative");
  }
  if (data.empty() || hidden == 0) throw InvalidInput("autoencoder: empty data or hidden layer");

  const LabeledDataset sample = ae.max_examples > 0 && ae.max_examples < data.size()
                                    ? subsample(data, ae.max_examples, cfg.seed)
                                    : data;
  const Matrix& x = sample.pixels();
  const auto n = static_cast<double>(x.cols());
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto chunk = static_cast<Eigen::Index>(cfg.chunk_size);

  const std::size_t dims[] = {sample.dim(), hidden, sample.dim()};
  const LayerKind kinds[] = {LayerKind::sigmoid, LayerKind::sigmoid};
  const double lambdas[] = {ae.lambda, ae.lambda};
  Network net = make_network("autoencoder", dims, kinds, lambdas, cfg.seed);

  const double rho = ae.sparsity_target;
  const double beta = ae.sparsity_weight;
  Network work = net;
  const Objective objective = [&](const Vector& theta, Vector& grad) {
    unpack_parameters(work, theta);
    const auto& enc = work.layers[0];
    const auto& dec = work.layers[1];

    // Pass 1: mean hidden activation over the whole sample.
    Vector mean_act = Vector::Zero(h);
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
      const Eigen::Index m = std::min(chunk, x.cols() - start);
      mean_act += sigmoid_layer(enc.weights, enc.biases, x.middleCols(start, m)).rowwise().sum();
    }
    mean_act /= n;
    mean_act = mean_act.cwiseMax(1e-12).cwiseMin(1.0 - 1e-12);

    double total = 0.0;
    for (Eigen::Index j = 0; j < h; ++j) {
      const double p = mean_act(j);
      total += beta * (rho * std::log(rho / p) + (1.0 - rho) * std::log((1.0 - rho) / (1.0 - p)));
    }
    const Vector sparsity_grad =
        (beta / n) * (-rho / mean_act.array() + (1.0 - rho) / (1.0 - mean_act.array())).matrix();

    // Pass 2: reconstruction gradient.
    Gradients g = Gradients::zeros_like(work);
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
      const Eigen::Index m = std::min(chunk, x.cols() - start);
      const auto xs = x.middleCols(start, m);
      const Matrix a1 = sigmoid_layer(enc.weights, enc.biases, xs);
      const Matrix a2 = sigmoid_layer(dec.weights, dec.biases, a1);
      Matrix delta2 = a2 - xs;
      total += 0.5 * delta2.squaredNorm() / n;
      delta2.array() *= a2.array() * (1.0 - a2.array()) / n;
      g.weights[1].noalias() += delta2 * a1.transpose();
      g.biases[1].noalias() += delta2.rowwise().sum();
      Matrix delta1 = dec.weights.transpose() * delta2;
      delta1.colwise() += sparsity_grad;
      delta1.array() *= a1.array() * (1.0 - a1.array());
      g.weights[0].noalias() += delta1 * xs.transpose();
      g.biases[0].noalias() += delta1.rowwise().sum();
    }
    total += decay_penalty(work);
    accumulate_decay_gradient(work, g, false);
    grad = pack_gradients(work, g);
    return total;
  };

  LbfgsOptions opts;
  opts.max_iterations = ae.max_iterations;
  opts.memory = cfg.memory_pairs;
  opts.grad_tol = cfg.grad_tol;
  const auto res = minimize_lbfgs(objective, pack_parameters(net), opts,
                                  [&](const LbfgsIterate& it) {
                                    const TrainLogRow row{it.iteration, it.value, it.grad_norm};
                                    if (log != nullptr) log->push_back(row);
                                    if (cfg.on_iteration) cfg.on_iteration(row);
                                    return true;
                                  });
  unpack_parameters(net, res.x);

  LayerSpec encoder = std::move(net.layers[0]);
  encoder.frozen = true;
  return encoder;
}

namespace {

struct Pool {
  std::size_t layer = 0;
  Bounds bounds;
  Matrix items;
  std::vector<Label> labels;
};

Bounds bounds_for_layer(const Network& net, std::size_t k) {
  if (k == 0) return Bounds::unit();
  switch (net.layers[k - 1].kind) {
    case LayerKind::sigmoid:
      return Bounds::unit();
    case LayerKind::relu:
      return Bounds{0.0, std::nullopt};
    default:
      return Bounds::unbounded();
  }
}

}  // namespace

Network adversarial_pool_train(const ArchSpec& spec, const LabeledDataset& data,
                               const TrainConfig& cfg, const AdvPoolConfig& pool_cfg,
                               std::vector<PoolStats>* stats, const LabeledDataset* test) {
  pool_cfg.validate();
  return adversarial_pool_train(train(spec, data, cfg, nullptr, test), data, cfg, pool_cfg, stats,
                                test);
}

Network adversarial_pool_train(Network net, const LabeledDataset& data, const TrainConfig& cfg,
                               const AdvPoolConfig& pool_cfg, std::vector<PoolStats>* stats,
                               const LabeledDataset* test) {
  pool_cfg.validate();
  cfg.validate();
  net.validate();
  if (!net.is_classifier()) throw InvalidInput("adversarial pool: classifier network required");
  if (pool_cfg.rounds == 0) return net;

  const std::size_t n_layers = net.num_layers();
  std::vector<Pool> pools;
  if (pool_cfg.per_layer) {
    for (std::size_t k = std::min(pool_cfg.first_pool_layer, n_layers - 1); k < n_layers; ++k) {
      pools.push_back({k, bounds_for_layer(net, k), Matrix(net.activation_dim(k), 0), {}});
    }
  } else {
    pools.push_back({0, Bounds::unit(), Matrix(net.input_dim(), 0), {}});
  }

  RngStream rng = RngStream(cfg.seed).fork(0xAD7E45A1ULL);
  const std::size_t capacity = pool_cfg.pool_capacity;
  const auto refresh = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(pool_cfg.refresh_fraction * capacity)));

  TrainConfig round_cfg = cfg;
  round_cfg.max_lbfgs_iterations = pool_cfg.iterations_per_round;

  for (int round = 1; round <= pool_cfg.rounds; ++round) {
    for (auto& pool : pools) {
      const std::size_t count = pool.labels.size();
      const std::size_t wanted = count < capacity ? capacity - count : refresh;
      PoolStats st;
      st.round = round;
      st.layer = pool.layer;

      std::vector<std::size_t> picks(wanted);
      for (auto& p : picks) p = static_cast<std::size_t>(rng.below(data.size()));
      const LabeledDataset batch = data.subset(picks, "pool-candidates");
      const Matrix acts = activations_at(net, batch.pixels(), pool.layer);
      const Matrix probs = forward_batch(net, acts, pool.layer);

      // Attacks run in parallel; results are collected in candidate order.
      std::vector<std::optional<Vector>> found(picks.size());
      std::vector<char> fooled(picks.size(), 0);
      parallel_for(picks.size(), pool_cfg.jobs, [&](std::size_t i) {
        const auto col = static_cast<Eigen::Index>(i);
        const Label truth = batch.label(i);
        const Vector p = probs.col(col);
        if (argmax(p) != truth) return;
        const Label target = choose_target(p, pool_cfg.attack.target_policy,
                                           pool_cfg.attack.fixed_target);
        PerturbationResult res;
        try {
          res = minimal_perturbation_at(net, pool.layer, acts.col(col), target, pool_cfg.attack,
                                        pool.bounds);
        } catch (const Error&) {
          return;
        }
        if (!res.achieved) return;
        fooled[i] = argmax(forward_from(net, pool.layer, res.perturbed)) != truth ? 1 : 0;
        found[i] = std::move(res.perturbed);
      });

      Matrix fresh(acts.rows(), 0);
      std::vector<Label> fresh_labels;
      std::size_t misclassified = 0;
      for (std::size_t i = 0; i < picks.size(); ++i) {
        if (!found[i]) {
          ++st.skipped;
          continue;
        }
        misclassified += static_cast<std::size_t>(fooled[i]);
        fresh.conservativeResize(Eigen::NoChange, fresh.cols() + 1);
        fresh.col(fresh.cols() - 1) = *found[i];
        fresh_labels.push_back(batch.label(i));
      }
      st.generated = fresh_labels.size();
      st.misclassified_by_generator =
          st.generated == 0 ? 0.0
                            : static_cast<double>(misclassified) / static_cast<double>(st.generated);

      // Fill free slots first, then overwrite a random subset of old ones.
      std::size_t next = 0;
      const std::size_t free_slots = capacity - pool.labels.size();
      const std::size_t appended = std::min(free_slots, fresh_labels.size());
      if (appended > 0) {
        const auto old_cols = pool.items.cols();
        pool.items.conservativeResize(Eigen::NoChange, old_cols + static_cast<Eigen::Index>(appended));
        for (; next < appended; ++next) {
          pool.items.col(old_cols + static_cast<Eigen::Index>(next)) =
              fresh.col(static_cast<Eigen::Index>(next));
          pool.labels.push_back(fresh_labels[next]);
        }
      }
      if (next < fresh_labels.size()) {
        const auto slots = seeded_permutation(pool.labels.size(), rng.next_u64());
        for (std::size_t s = 0; next < fresh_labels.size(); ++next, ++s) {
          pool.items.col(static_cast<Eigen::Index>(slots[s])) =
              fresh.col(static_cast<Eigen::Index>(next));
          pool.labels[slots[s]] = fresh_labels[next];
        }
      }
      if (stats != nullptr) stats->push_back(st);
    }

    std::vector<ObjectiveTerm> terms;
    terms.push_back({&data.pixels(), data.labels(), 0,
                     (1.0 - pool_cfg.mix_ratio) / static_cast<double>(data.size())});
    std::size_t live = 0;
    for (const auto& pool : pools) live += pool.labels.empty() ? 0 : 1;
    for (const auto& pool : pools) {
      if (pool.labels.empty()) continue;
      terms.push_back({&pool.items, pool.labels, pool.layer,
                       pool_cfg.mix_ratio / static_cast<double>(live * pool.labels.size())});
    }
    net = fit(std::move(net), terms, round_cfg);
  }

  net.training_meta["adversarial_rounds"] = pool_cfg.rounds;
  record_errors(net, data, test, cfg.seed);
  return net;
}

}  // namespace blindspot
