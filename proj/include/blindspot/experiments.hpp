#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "blindspot/adversary.hpp"
#include "blindspot/dataio.hpp"
#include "blindspot/network.hpp"
#include "blindspot/parallel.hpp"
#include "blindspot/trainer.hpp"

namespace blindspot {

enum class SourceSplit { train, test };

std::string_view source_split_name(SourceSplit s) noexcept;
SourceSplit parse_source_split(std::string_view name);

struct AdversarialSetConfig {
  AttackConfig attack = [] {
    AttackConfig a;
    a.target_policy = TargetPolicy::cycle_all;
    return a;
  }();
  // Correctly classified inputs attacked, drawn by seeded permutation (0 = all).
  std::size_t limit = 1000;
  std::uint64_t seed = 0;
  SourceSplit split = SourceSplit::train;
  // build_adversarial_set throws when more attacks than this fail.
  double max_failure_rate = 0.01;
  std::size_t jobs = 1;

  void validate() const;
};

struct AdversarialSet {
  std::string generator_model;
  SourceSplit source_split = SourceSplit::train;
  // Achieved results only, in source-index order.
  std::vector<AdversarialResult> results;
  std::vector<std::size_t> source_indices;
  std::size_t attempted = 0;
  std::size_t failures = 0;
  double average_distortion = 0.0;

  std::size_t size() const noexcept { return results.size(); }
  double failure_rate() const noexcept;
};

// Attacks correctly classified inputs of data; failures (no target reached)
// are counted and left out of the set.
AdversarialSet build_adversarial_set(const Network& net, const LabeledDataset& data,
                                     const AdversarialSetConfig& cfg);

// Copy of set with every perturbed image moved along its perturbation to
// target_stddev (clamped to [0, 1]).
AdversarialSet amplified_set(const AdversarialSet& set, double target_stddev,
                             AmplifyMode mode = AmplifyMode::rms);

struct TransferRow {
  std::string label;
  std::vector<double> errors;  // one per victim column
  double average_distortion = 0.0;
  bool adversarial = false;
  // Index of the generating set for adversarial and matched-noise rows.
  std::optional<std::size_t> source_set;
};

struct TransferMatrix {
  std::vector<std::string> columns;
  std::vector<TransferRow> rows;

  const TransferRow& row(std::string_view label) const;
  // Columns: Row, one per victim, Av. distortion. Errors are fractions.
  CsvWriter table() const;
};

struct TransferConfig {
  // Noise rows over the originals of every set, in this order.
  std::vector<double> gaussian_stddevs{0.1, 0.3};
  // Adds one noise row per set at that set's average distortion.
  bool matched_gaussian = true;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Entry (i, j): fraction of set i's perturbed images that model j
// misclassifies against the true label.
TransferMatrix cross_error_matrix(const std::vector<Network>& models,
                                  const std::vector<AdversarialSet>& sets,
                                  const TransferConfig& cfg = {});

struct ModelSummary {
  std::string name;
  std::string description;
  double train_error = 0.0;
  double test_error = 0.0;
  double average_distortion = 0.0;
};

std::string describe_model(const Network& net);
// Columns: Name, Description, Training error, Test error, Av. min. distortion.
CsvWriter model_summary_table(const std::vector<ModelSummary>& rows);

// Supplies a trained model for (architecture, training data, display name).
using ModelProvider =
    std::function<Network(const ArchSpec&, const LabeledDataset&, const std::string&)>;

struct CrossTrainingConfig {
  std::uint64_t split_seed = 0;
  TrainConfig train;
  AdversarialSetConfig attack = [] {
    AdversarialSetConfig a;
    a.split = SourceSplit::test;
    return a;
  }();
  double amplify_stddev = 0.1;
  double unamplified_noise_stddev = 0.06;
  std::uint64_t noise_seed = 0;
  std::size_t jobs = 1;
};

struct CrossTrainingStudy {
  std::vector<Network> models;  // FC100-100-10, FC123-456-10 (both P1), FC100-100-10' (P2)
  std::vector<AdversarialSet> sets;
  // Columns: Model, Error on P1, Error on P2, Error on Test, Min Av. Distortion.
  CsvWriter baseline{{"Model", "Error on P1", "Error on P2", "Error on Test", "Min Av. Distortion"}};
  std::vector<std::vector<double>> baseline_errors;  // [model][P1, P2, test]
  TransferMatrix unamplified;
  TransferMatrix amplified;
};

// Halves train into P1/P2, trains the three models (through provider when
// given), attacks the test set and evaluates both blocks.
CrossTrainingStudy cross_training_set_study(const LabeledDataset& train,
                                            const LabeledDataset& test,
                                            const CrossTrainingConfig& cfg,
                                            const ModelProvider& provider = {});

struct Direction {
  enum class Kind { natural_basis, random };
  Vector vector;
  Kind kind = Kind::natural_basis;
  std::size_t index = 0;   // natural_basis
  std::uint64_t seed = 0;  // random
};

Direction natural_basis(std::size_t dim, std::size_t i);
// Normalized Gaussian vector, deterministic per seed.
Direction random_direction(std::size_t dim, std::uint64_t seed);

// Indices of the k held-out images with the largest <phi(x), dir>, where phi
// is the activation of layer layer_index (0 = the input). Descending order,
// ties to the lower index.
std::vector<std::size_t> top_activating(const Network& net, std::size_t layer_index,
                                        const Direction& dir, const LabeledDataset& held_out,
                                        std::size_t k);

struct InspectionGrids {
  std::vector<Direction> natural;
  std::vector<Direction> random;
  std::vector<std::vector<std::size_t>> natural_top;
  std::vector<std::vector<std::size_t>> random_top;
};

// rows directions of each kind (seeded unit choice for the natural basis),
// images_per_row top images per direction.
InspectionGrids inspect_directions(const Network& net, std::size_t layer_index,
                                   const LabeledDataset& held_out, std::size_t rows,
                                   std::size_t images_per_row, std::uint64_t seed);
void write_inspection_grids(const InspectionGrids& grids, const LabeledDataset& held_out,
                            const std::filesystem::path& natural_path,
                            const std::filesystem::path& random_path);

// Provenance record written next to every run's outputs.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set(const std::string& key, nlohmann::json value);
  void add_model(const Network& net, const std::string& path = {});
  void add_dataset(const LabeledDataset& data);
  void add_output(const std::filesystem::path& path);
  void set_status(const std::string& status, const std::string& message = {});
  const nlohmann::json& json() const noexcept { return doc_; }
  void write(const std::filesystem::path& path) const;

 private:
  nlohmann::json doc_;
};

std::string hex64(std::uint64_t v);
// FNV-1a 64-bit over bytes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace blindspot
