#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blindspot/adversary.hpp"
#include "blindspot/dataio.hpp"
#include "blindspot/network.hpp"

namespace blindspot {

enum class ArchFamily {
  softmax,      // FC10(lambda): a single affine+softmax layer
  sigmoid_fc,   // FC-H1-...-K: sigmoid hidden layers and a softmax classifier
  autoencoder,  // AE-H-K: frozen sparse-autoencoder encoder and a softmax classifier
};

struct ArchSpec {
  std::string name;
  ArchFamily family = ArchFamily::softmax;
  std::vector<std::size_t> hidden;
  std::size_t classes = 10;
  // One coefficient per layer, in order.
  std::vector<double> lambdas;
};

// Accepts "fc10", "fc10(1e-2)", "fc10:1e-2", "fc100-100-10", "fc123-456-10",
// "ae400-10" (case-insensitive). Defaults: FC10 lambda 1e-4; sigmoid nets
// 1e-5 on hidden layers and 1e-6 on the output; AE classifier 1e-6.
ArchSpec parse_arch(std::string_view text);

struct SparseAutoencoderConfig {
  double sparsity_target = 0.05;
  double sparsity_weight = 0.1;
  // Weight decay on encoder and decoder, same lambda * sum(w^2) / units form.
  // 0.6 over 400 units is 1.5e-3 * sum(w^2) on the encoder.
  double lambda = 0.6;
  int max_iterations = 400;
  // Pretrain on a seeded subsample of this size (0 = all examples).
  std::size_t max_examples = 0;
};

struct TrainLogRow {
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainConfig {
  int max_lbfgs_iterations = 2000;
  int memory_pairs = 10;
  double grad_tol = 1e-5;
  // Overrides the per-layer lambdas of the architecture when set.
  std::optional<std::vector<double>> lambda_schedule;
  std::uint64_t seed = 0;
  // Columns per gradient chunk; chunks are reduced in index order.
  std::size_t chunk_size = 8192;
  SparseAutoencoderConfig autoencoder;
  std::function<void(const TrainLogRow&)> on_iteration;

  void validate() const;
};

// One cross-entropy term of a training objective: activations feeding
// layer first_layer, with their labels, weighted per example.
struct ObjectiveTerm {
  const Matrix* inputs = nullptr;
  std::span<const Label> labels;
  std::size_t first_layer = 0;
  double weight_per_example = 0.0;
};

// Minimizes sum of terms + weight decay over the trainable parameters with
// L-BFGS, starting from net. Throws DivergenceError on a non-finite loss.
Network fit(Network net, std::span<const ObjectiveTerm> terms, const TrainConfig& cfg,
            std::vector<TrainLogRow>* log = nullptr);

// Trains a fresh network of the given family on the whole dataset (full batch).
// The result carries training_meta: iterations, final_loss, train_error and,
// when test is given, test_error.
Network train(const ArchSpec& spec, const LabeledDataset& data, const TrainConfig& cfg,
              std::vector<TrainLogRow>* log = nullptr, const LabeledDataset* test = nullptr);

// Sigmoid encoder (dim -> hidden) trained to reconstruct its input through a
// discarded sigmoid decoder, with mean squared reconstruction error, KL
// sparsity on mean activations and weight decay. The returned layer is frozen.
LayerSpec pretrain_autoencoder(const LabeledDataset& data, std::size_t hidden,
                               const TrainConfig& cfg, std::vector<TrainLogRow>* log = nullptr);

// Reconstruction objective of the autoencoder (without sparsity or decay);
// exposed for tests.
double reconstruction_error(const LayerSpec& encoder, const LayerSpec& decoder,
                            const Matrix& inputs);

struct AdvPoolConfig {
  std::size_t pool_capacity = 3000;
  double refresh_fraction = 0.25;
  double mix_ratio = 0.3;
  int rounds = 0;
  bool per_layer = true;
  // L-BFGS iterations after each pool refresh.
  int iterations_per_round = 100;
  // Pools are kept only for activations feeding layers >= this index.
  std::size_t first_pool_layer = 0;
  // Threads for pool generation; results do not depend on it.
  std::size_t jobs = 1;
  AttackConfig attack = [] {
    AttackConfig a;
    a.bisection_steps = 6;
    a.inner_iterations = 100;
    return a;
  }();

  void validate() const;
};

struct PoolStats {
  int round = 0;
  std::size_t layer = 0;
  std::size_t generated = 0;
  std::size_t skipped = 0;
  // Fraction of newly generated items the pre-refresh model misclassifies.
  double misclassified_by_generator = 0.0;
};

// Plain training followed by alternating rounds: refresh a random subset of
// every adversarial pool from the current model, then continue training on
// the originals mixed with the pools. Per-layer pools hold perturbed
// activation vectors that only train the layers above them.
Network adversarial_pool_train(const ArchSpec& spec, const LabeledDataset& data,
                               const TrainConfig& cfg, const AdvPoolConfig& pool_cfg,
                               std::vector<PoolStats>* stats = nullptr,
                               const LabeledDataset* test = nullptr);
// Same rounds, starting from an already trained network.
Network adversarial_pool_train(Network start, const LabeledDataset& data, const TrainConfig& cfg,
                               const AdvPoolConfig& pool_cfg,
                               std::vector<PoolStats>* stats = nullptr,
                               const LabeledDataset* test = nullptr);

}  // namespace blindspot
