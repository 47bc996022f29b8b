#include "blindspot/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "blindspot/error.hpp"
#include "blindspot/model_io.hpp"
#include "blindspot/rng.hpp"

namespace blindspot {

std::string_view source_split_name(SourceSplit s) noexcept {
  return s == SourceSplit::train ? "train" : "test";
}

SourceSplit parse_source_split(std::string_view name) {
  if (name == "train") return SourceSplit::train;
  if (name == "test") return SourceSplit::test;
  throw InvalidInput("unknown split '" + std::string(name) + "' (expected train or test)");
}

void AdversarialSetConfig::validate() const {
  attack.validate();
  if (!(max_failure_rate >= 0.0 && max_failure_rate <= 1.0)) {
    throw InvalidInput("adversarial set: max_failure_rate must lie in [0, 1]");
  }
}

double AdversarialSet::failure_rate() const noexcept {
  return attempted == 0 ? 0.0 : static_cast<double>(failures) / static_cast<double>(attempted);
}

AdversarialSet build_adversarial_set(const Network& net, const LabeledDataset& data,
                                     const AdversarialSetConfig& cfg) {
  cfg.validate();
  net.validate();
  if (data.dim() != net.input_dim()) {
    throw InvalidInput("adversarial set: dataset dimension " + std::to_string(data.dim()) +
                       " does not match model input " + std::to_string(net.input_dim()));
  }
  const auto predictions = predict_batch(net, data.pixels());
  std::vector<std::size_t> candidates;
  for (std::size_t i : seeded_permutation(data.size(), cfg.seed)) {
    if (predictions[i] == data.label(i)) candidates.push_back(i);
    if (cfg.limit != 0 && candidates.size() == cfg.limit) break;
  }
  std::sort(candidates.begin(), candidates.end());

  std::vector<AdversarialResult> attempts(candidates.size());
  parallel_for(candidates.size(), cfg.jobs, [&](std::size_t k) {
    const std::size_t i = candidates[k];
    attempts[k] = attack(net, data.image(i), data.label(i), cfg.attack);
  });

  AdversarialSet set;
  set.generator_model = net.name;
  set.source_split = cfg.split;
  set.attempted = candidates.size();
  double total = 0.0;
  for (std::size_t k = 0; k < attempts.size(); ++k) {
    if (!attempts[k].achieved) {
      ++set.failures;
      continue;
    }
    total += attempts[k].distortion;
    set.source_indices.push_back(candidates[k]);
    set.results.push_back(std::move(attempts[k]));
  }
  if (!set.results.empty()) set.average_distortion = total / static_cast<double>(set.size());
  if (set.failure_rate() > cfg.max_failure_rate) {
    throw Error("adversarial set for " + net.name + " is invalid: " +
                std::to_string(set.failures) + " of " + std::to_string(set.attempted) +
                " attacks failed");
  }
  return set;
}

AdversarialSet amplified_set(const AdversarialSet& set, double target_stddev, AmplifyMode mode) {
  AdversarialSet out = set;
  double total = 0.0;
  for (auto& r : out.results) {
    if (r.r.size() > 0 && r.r.squaredNorm() > 0.0) {
      r.perturbed = amplify(r.original, r.perturbed, target_stddev, mode);
    }
    r.r = r.perturbed.pixels - r.original.pixels;
    r.distortion = distortion(r.original, r.perturbed);
    total += r.distortion;
  }
  out.average_distortion = out.results.empty() ? 0.0 : total / static_cast<double>(out.size());
  return out;
}

const TransferRow& TransferMatrix::row(std::string_view label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw InvalidInput("transfer matrix has no row '" + std::string(label) + "'");
}

CsvWriter TransferMatrix::table() const {
  std::vector<std::string> header{"Row"};
  header.insert(header.end(), columns.begin(), columns.end());
  header.emplace_back("Av. distortion");
  CsvWriter csv(std::move(header));
  for (const auto& r : rows) {
    std::vector<std::string> cells{r.label};
    for (double e : r.errors) cells.push_back(format_number(e, 6));
    cells.push_back(format_number(r.average_distortion, 6));
    csv.row(std::move(cells));
  }
  return csv;
}

namespace {

// Misclassification rate against true labels of each model on a column batch.
std::vector<double> column_errors(const std::vector<Network>& models, const Matrix& inputs,
                                  const std::vector<Label>& labels) {
  std::vector<double> errors;
  for (const auto& m : models) {
    if (labels.empty()) {
      errors.push_back(0.0);
      continue;
    }
    const auto pred = predict_batch(m, inputs);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i] ? 1 : 0;
    errors.push_back(static_cast<double>(wrong) / static_cast<double>(labels.size()));
  }
  return errors;
}

// Noisy copies of the originals of the given sets; example e of set s uses
// stream fork(s).fork(e) of the row stream.
std::pair<Matrix, std::vector<Label>> noisy_originals(const std::vector<AdversarialSet>& sets,
                                                      const std::vector<std::size_t>& which,
                                                      double stddev, const RngStream& row_rng,
                                                      double& average, std::size_t jobs) {
  std::size_t count = 0;
  for (std::size_t s : which) count += sets[s].size();
  const auto dim = count == 0 ? 0 : sets[which.front()].results.front().original.pixels.size();
  Matrix inputs(dim, static_cast<Eigen::Index>(count));
  std::vector<Label> labels(count);
  std::vector<double> dist(count);
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t s : which) {
    for (std::size_t e = 0; e < sets[s].size(); ++e) slots.emplace_back(s, e);
  }
  parallel_for(count, jobs, [&](std::size_t k) {
    const auto [s, e] = slots[k];
    const auto& res = sets[s].results[e];
    RngStream rng = row_rng.fork(s).fork(e);
    const Image noisy = gaussian_baseline(res.original, stddev, rng);
    inputs.col(static_cast<Eigen::Index>(k)) = noisy.pixels;
    labels[k] = res.original_label;
    dist[k] = distortion(res.original, noisy);
  });
  average = count == 0 ? 0.0 : std::accumulate(dist.begin(), dist.end(), 0.0) /
                                   static_cast<double>(count);
  return {std::move(inputs), std::move(labels)};
}

}  // namespace

TransferMatrix cross_error_matrix(const std::vector<Network>& models,
                                  const std::vector<AdversarialSet>& sets,
                                  const TransferConfig& cfg) {
  if (models.empty()) throw InvalidInput("cross_error_matrix: no models");
  const std::size_t dim = models.front().input_dim();
  for (const auto& m : models) {
    m.validate();
    if (m.input_dim() != dim) throw InvalidInput("cross_error_matrix: model input dimensions differ");
  }
  for (const auto& s : sets) {
    for (const auto& r : s.results) {
      if (r.perturbed.pixels.size() != static_cast<Eigen::Index>(dim)) {
        throw InvalidInput("cross_error_matrix: set " + s.generator_model +
                           " does not match the model input dimension");
      }
    }
  }

  TransferMatrix out;
  for (const auto& m : models) out.columns.push_back(m.name);

  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto& set = sets[s];
    Matrix inputs(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(set.size()));
    std::vector<Label> labels;
    for (std::size_t e = 0; e < set.size(); ++e) {
      inputs.col(static_cast<Eigen::Index>(e)) = set.results[e].perturbed.pixels;
      labels.push_back(set.results[e].original_label);
    }
    TransferRow row;
    row.label = set.generator_model;
    row.errors = column_errors(models, inputs, labels);
    row.average_distortion = set.average_distortion;
    row.adversarial = true;
    row.source_set = s;
    out.rows.push_back(std::move(row));
  }

  const RngStream root(cfg.seed);
  std::vector<std::size_t> all_sets(sets.size());
  std::iota(all_sets.begin(), all_sets.end(), 0);
  std::uint64_t row_key = 0;
  auto noise_row = [&](std::string label, const std::vector<std::size_t>& which, double stddev,
                       std::optional<std::size_t> source) {
    TransferRow row;
    row.label = std::move(label);
    double avg = 0.0;
    if (!which.empty()) {
      auto [inputs, labels] = noisy_originals(sets, which, stddev, root.fork(row_key), avg, cfg.jobs);
      row.errors = column_errors(models, inputs, labels);
    } else {
      row.errors.assign(models.size(), 0.0);
    }
    ++row_key;
    row.average_distortion = avg;
    row.source_set = source;
    out.rows.push_back(std::move(row));
  };
  std::vector<std::size_t> nonempty;
  for (std::size_t s : all_sets) {
    if (sets[s].size() > 0) nonempty.push_back(s);
  }
  for (double sd : cfg.gaussian_stddevs) {
    if (!(sd >= 0.0)) throw InvalidInput("cross_error_matrix: noise stddev must be non-negative");
    noise_row("Gaussian noise, stddev=" + format_number(sd, 6), nonempty, sd, std::nullopt);
  }
  if (cfg.matched_gaussian) {
    for (std::size_t s = 0; s < sets.size(); ++s) {
      const double sd = sets[s].average_distortion;
      std::vector<std::size_t> which;
      if (sets[s].size() > 0) which.push_back(s);
      noise_row("Gaussian noise matched to " + sets[s].generator_model + ", stddev=" +
                    format_number(sd, 6),
                which, sd, s);
    }
  }
  return out;
}

std::string describe_model(const Network& net) {
  std::string kinds;
  std::string lambdas;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    if (k > 0) {
      kinds += " ";
      lambdas += " ";
    }
    kinds += std::string(layer_kind_name(l.kind)) + "(" + std::to_string(l.out_dim()) + ")";
    if (l.frozen) kinds += "[frozen]";
    lambdas += format_number(l.lambda, 6);
  }
  return kinds + "; lambda " + lambdas;
}

CsvWriter model_summary_table(const std::vector<ModelSummary>& rows) {
  CsvWriter csv({"Name", "Description", "Training error", "Test error", "Av. min. distortion"});
  for (const auto& r : rows) {
    csv.row({r.name, r.description, format_number(r.train_error, 6),
             format_number(r.test_error, 6), format_number(r.average_distortion, 6)});
  }
  return csv;
}

CrossTrainingStudy cross_training_set_study(const LabeledDataset& train,
                                            const LabeledDataset& test,
                                            const CrossTrainingConfig& cfg,
                                            const ModelProvider& provider) {
  const auto [p1, p2] = split_half(train, cfg.split_seed);
  const ModelProvider fit_model = provider ? provider : [&](const ArchSpec& spec,
                                                            const LabeledDataset& data,
                                                            const std::string& name) {
    Network net = blindspot::train(spec, data, cfg.train, nullptr, &test);
    net.name = name;
    return net;
  };

  struct Plan {
    const char* arch;
    const LabeledDataset* data;
    const char* name;
  };
  const Plan plans[] = {{"fc100-100-10", &p1, "FC100-100-10"},
                        {"fc123-456-10", &p1, "FC123-456-10"},
                        {"fc100-100-10", &p2, "FC100-100-10'"}};

  CrossTrainingStudy study;
  for (const auto& plan : plans) {
    study.models.push_back(fit_model(parse_arch(plan.arch), *plan.data, plan.name));
    study.models.back().name = plan.name;
  }

  AdversarialSetConfig attack_cfg = cfg.attack;
  attack_cfg.split = SourceSplit::test;
  attack_cfg.jobs = cfg.jobs;
  for (const auto& m : study.models) study.sets.push_back(build_adversarial_set(m, test, attack_cfg));

  for (std::size_t i = 0; i < study.models.size(); ++i) {
    const auto& m = study.models[i];
    std::vector<double> errs{error_rate(m, p1), error_rate(m, p2), error_rate(m, test)};
    study.baseline.row({m.name, format_number(errs[0], 6), format_number(errs[1], 6),
                        format_number(errs[2], 6), format_number(study.sets[i].average_distortion, 6)});
    study.baseline_errors.push_back(std::move(errs));
  }

  TransferConfig plain;
  plain.gaussian_stddevs = {cfg.unamplified_noise_stddev};
  plain.matched_gaussian = false;
  plain.seed = cfg.noise_seed;
  plain.jobs = cfg.jobs;
  study.unamplified = cross_error_matrix(study.models, study.sets, plain);

  std::vector<AdversarialSet> boosted;
  for (const auto& s : study.sets) {
    boosted.push_back(amplified_set(s, cfg.amplify_stddev));
    boosted.back().generator_model = s.generator_model + " amplified to stddev=" +
                                     format_number(cfg.amplify_stddev, 6);
  }
  TransferConfig amp = plain;
  amp.gaussian_stddevs = {cfg.amplify_stddev};
  amp.seed = mix_seed(cfg.noise_seed + 1);
  study.amplified = cross_error_matrix(study.models, boosted, amp);
  return study;
}

Direction natural_basis(std::size_t dim, std::size_t i) {
  if (i >= dim) throw InvalidInput("natural_basis: index outside dimension");
  Direction d;
  d.vector = Vector::Zero(static_cast<Eigen::Index>(dim));
  d.vector(static_cast<Eigen::Index>(i)) = 1.0;
  d.kind = Direction::Kind::natural_basis;
  d.index = i;
  return d;
}

Direction random_direction(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw InvalidInput("random_direction: dimension must be positive");
  RngStream rng(seed);
  Vector v = gaussian(rng, dim, 1.0);
  while (v.norm() == 0.0) v = gaussian(rng, dim, 1.0);
  Direction d;
  d.vector = v / v.norm();
  d.kind = Direction::Kind::random;
  d.seed = seed;
  return d;
}

std::vector<std::size_t> top_activating(const Network& net, std::size_t layer_index,
                                        const Direction& dir, const LabeledDataset& held_out,
                                        std::size_t k) {
  if (layer_index > net.num_layers()) throw InvalidInput("top_activating: layer out of range");
  if (k > held_out.size()) throw InvalidInput("top_activating: k exceeds held-out size");
  if (static_cast<std::size_t>(dir.vector.size()) != net.activation_dim(layer_index)) {
    throw InvalidInput("top_activating: direction dimension does not match the layer");
  }
  const Matrix phi = activations_at(net, held_out.pixels(), layer_index);
  const Vector scores = phi.transpose() * dir.vector;
  std::vector<std::size_t> order(held_out.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  order.resize(k);
  return order;
}

InspectionGrids inspect_directions(const Network& net, std::size_t layer_index,
                                   const LabeledDataset& held_out, std::size_t rows,
                                   std::size_t images_per_row, std::uint64_t seed) {
  if (layer_index > net.num_layers()) throw InvalidInput("inspect: layer out of range");
  const std::size_t dim = net.activation_dim(layer_index);
  const auto units = seeded_permutation(dim, seed);
  const RngStream root(seed);
  InspectionGrids g;
  for (std::size_t r = 0; r < rows; ++r) {
    g.natural.push_back(natural_basis(dim, units[r % dim]));
    g.random.push_back(random_direction(dim, root.fork(r).next_u64()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    g.natural_top.push_back(top_activating(net, layer_index, g.natural[r], held_out, images_per_row));
    g.random_top.push_back(top_activating(net, layer_index, g.random[r], held_out, images_per_row));
  }
  return g;
}

void write_inspection_grids(const InspectionGrids& grids, const LabeledDataset& held_out,
                            const std::filesystem::path& natural_path,
                            const std::filesystem::path& random_path) {
  auto write = [&](const std::vector<std::vector<std::size_t>>& tops,
                   const std::filesystem::path& path) {
    std::vector<Image> images;
    std::size_t cols = 1;
    for (const auto& row : tops) {
      cols = std::max(cols, row.size());
      for (std::size_t i : row) images.push_back(held_out.image(i));
    }
    write_pgm_grid(images, cols, path);
  };
  write(grids.natural_top, natural_path);
  write(grids.random_top, random_path);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunManifest::RunManifest(std::string command) {
  doc_ = {{"command", std::move(command)},
          {"status", "running"},
          {"models", nlohmann::json::array()},
          {"datasets", nlohmann::json::array()},
          {"outputs", nlohmann::json::array()}};
}

void RunManifest::set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }

void RunManifest::add_model(const Network& net, const std::string& path) {
  nlohmann::json m = {{"name", net.name},
                      {"hash", hex64(fnv1a64(network_to_json(net).dump()))},
                      {"description", describe_model(net)}};
  if (!path.empty()) m["path"] = path;
  doc_["models"].push_back(std::move(m));
}

void RunManifest::add_dataset(const LabeledDataset& data) {
  doc_["datasets"].push_back(
      {{"name", data.name()}, {"size", data.size()}, {"hash", hex64(data.content_hash())}});
}

void RunManifest::add_output(const std::filesystem::path& path) {
  doc_["outputs"].push_back({{"path", path.filename().string()},
                             {"hash", hex64(fnv1a64(read_text_file(path)))}});
}

void RunManifest::set_status(const std::string& status, const std::string& message) {
  doc_["status"] = status;
  if (!message.empty()) doc_["message"] = message;
}

void RunManifest::write(const std::filesystem::path& path) const {
  write_text_file(path, doc_.dump(2) + "\n");
}

}  // namespace blindspot
