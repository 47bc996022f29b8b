#include "blindspot/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blindspot/adversary.hpp"
#include "blindspot/dataio.hpp"
#include "blindspot/error.hpp"
#include "blindspot/experiments.hpp"
#include "blindspot/model_io.hpp"
#include "blindspot/spectral.hpp"
#include "blindspot/trainer.hpp"

namespace blindspot {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kDeskTrainExamples = 10000;
constexpr int kDeskIterations = 500;

struct GlobalOptions {
  std::string config;
  bool desk_scale = false;
  std::size_t jobs = 1;
  std::string data;
  std::string out = "out";
  std::uint64_t seed = 0;
};

struct AttackOptions {
  std::string policy = "cycle_all";
  int target = 0;
  double c_init = 0.01;
  double c_growth = 10.0;
  int bisection_steps = 20;
  int inner_iterations = 500;
  std::size_t limit = 1000;
  bool full = false;
  double max_failure_rate = 0.01;

  AttackConfig attack_config() const {
    AttackConfig a;
    a.target_policy = parse_target_policy(policy);
    a.fixed_target = target;
    a.c_init = c_init;
    a.c_growth = c_growth;
    a.bisection_steps = bisection_steps;
    a.inner_iterations = inner_iterations;
    a.validate();
    return a;
  }
};

struct TrainOptions {
  std::string spec;
  std::string name;
  std::vector<double> lambdas;
  int max_iterations = 2000;
  std::size_t train_limit = 0;
  int ae_iterations = 400;
  std::size_t ae_examples = 0;
  double ae_sparsity = SparseAutoencoderConfig{}.sparsity_target;
  double ae_sparsity_weight = SparseAutoencoderConfig{}.sparsity_weight;
  double ae_lambda = SparseAutoencoderConfig{}.lambda;
  int pool_rounds = 0;
  std::size_t pool_capacity = 3000;
  double pool_mix = 0.3;
  double pool_refresh = 0.25;
  int pool_iterations = 100;
  std::size_t pool_first_layer = 0;
};

struct Options {
  GlobalOptions global;
  AttackOptions attack;
  TrainOptions train;
  std::string model;
  std::vector<std::string> models;
  std::string layers;
  std::string split = "train";
  std::size_t grid = 16;
  std::vector<double> noise{0.1, 0.3};
  bool no_matched = false;
  std::string model_cache;
  std::size_t layer = 1;
  std::size_t rows = 8;
  std::size_t cols = 8;
  std::size_t grid_points = 64;
  std::string mode = "tightened";
  std::size_t probes = 10000;
};

void add_attack_options(CLI::App* cmd, AttackOptions& a) {
  cmd->add_option("--policy", a.policy,
                  "Target policy: second_most_probable, least_probable, fixed, cycle_all");
  cmd->add_option("--target", a.target, "Target label for the fixed policy");
  cmd->add_option("--c-init", a.c_init, "Initial penalty weight");
  cmd->add_option("--c-growth", a.c_growth, "Penalty growth factor while bracketing");
  cmd->add_option("--bisection-steps", a.bisection_steps, "Geometric bisection steps on c");
  cmd->add_option("--inner-iterations", a.inner_iterations, "L-BFGS iterations per inner solve");
  cmd->add_option("--limit", a.limit, "Correctly classified inputs to attack per model");
  cmd->add_flag("--full", a.full, "Attack every correctly classified input");
  cmd->add_option("--max-failure-rate", a.max_failure_rate,
                  "Fail when more attacks than this fraction fail");
}

void add_train_options(CLI::App* cmd, TrainOptions& t) {
  cmd->add_option("--max-iterations", t.max_iterations, "L-BFGS iteration cap");
  cmd->add_option("--train-limit", t.train_limit, "Seeded training subsample size (0 = all)");
  cmd->add_option("--ae-iterations", t.ae_iterations, "Autoencoder pretraining iterations");
  cmd->add_option("--ae-examples", t.ae_examples, "Autoencoder pretraining subsample (0 = all)");
  cmd->add_option("--ae-sparsity", t.ae_sparsity, "Target mean activation of the encoder units");
  cmd->add_option("--ae-sparsity-weight", t.ae_sparsity_weight, "Weight of the KL sparsity penalty");
  cmd->add_option("--ae-lambda", t.ae_lambda, "Autoencoder weight decay");
}

// Settings shared by every command, recorded in the manifest.
nlohmann::json global_json(const GlobalOptions& g) {
  return {{"desk_scale", g.desk_scale}, {"jobs", g.jobs}, {"seed", g.seed}, {"out", g.out}};
}

nlohmann::json attack_json(const AttackOptions& a) {
  return {{"policy", a.policy},
          {"target", a.target},
          {"c_init", a.c_init},
          {"c_growth", a.c_growth},
          {"bisection_steps", a.bisection_steps},
          {"inner_iterations", a.inner_iterations},
          {"limit", a.full ? 0 : a.limit},
          {"max_failure_rate", a.max_failure_rate}};
}

fs::path data_dir(const GlobalOptions& g) {
  if (!g.data.empty()) return g.data;
  if (const char* env = std::getenv("BLINDSPOT_DATA"); env != nullptr && *env != '\0') return env;
  return "data";
}

LabeledDataset load_split(const GlobalOptions& g, SourceSplit split, RunManifest& manifest) {
  LabeledDataset d = load_mnist(data_dir(g), split == SourceSplit::train ? MnistSplit::train
                                                                        : MnistSplit::test);
  manifest.add_dataset(d);
  return d;
}

TrainConfig train_config(const Options& o) {
  TrainConfig cfg;
  cfg.seed = o.global.seed;
  cfg.max_lbfgs_iterations = o.train.max_iterations;
  if (o.global.desk_scale) cfg.max_lbfgs_iterations = std::min(cfg.max_lbfgs_iterations, kDeskIterations);
  if (!o.train.lambdas.empty()) cfg.lambda_schedule = o.train.lambdas;
  cfg.autoencoder.max_iterations = o.train.ae_iterations;
  cfg.autoencoder.max_examples = o.train.ae_examples;
  cfg.autoencoder.sparsity_target = o.train.ae_sparsity;
  cfg.autoencoder.sparsity_weight = o.train.ae_sparsity_weight;
  cfg.autoencoder.lambda = o.train.ae_lambda;
  cfg.validate();
  return cfg;
}

nlohmann::json train_json(const Options& o, const TrainConfig& cfg) {
  nlohmann::json j = {{"max_iterations", cfg.max_lbfgs_iterations},
                      {"train_limit", o.train.train_limit},
                      {"ae_iterations", cfg.autoencoder.max_iterations},
                      {"ae_examples", cfg.autoencoder.max_examples},
                      {"ae_sparsity", cfg.autoencoder.sparsity_target},
                      {"ae_sparsity_weight", cfg.autoencoder.sparsity_weight},
                      {"ae_lambda", cfg.autoencoder.lambda}};
  if (cfg.lambda_schedule) j["lambdas"] = *cfg.lambda_schedule;
  return j;
}

LabeledDataset training_subset(const Options& o, const LabeledDataset& train) {
  std::size_t limit = o.train.train_limit;
  if (limit == 0 && o.global.desk_scale) limit = kDeskTrainExamples;
  if (limit == 0 || limit >= train.size()) return train;
  return subsample(train, limit, o.global.seed);
}

AdversarialSetConfig set_config(const Options& o, SourceSplit split) {
  AdversarialSetConfig c;
  c.attack = o.attack.attack_config();
  c.limit = o.attack.full ? 0 : o.attack.limit;
  c.seed = o.global.seed;
  c.split = split;
  c.max_failure_rate = o.attack.max_failure_rate;
  c.jobs = o.global.jobs;
  c.validate();
  return c;
}

std::vector<Network> load_models(const std::vector<std::string>& paths, RunManifest& manifest) {
  if (paths.empty()) throw InvalidInput("at least one model is required");
  std::vector<Network> models;
  std::set<std::string> names;
  for (const auto& p : paths) {
    models.push_back(load_model(p));
    if (!names.insert(models.back().name).second) {
      throw InvalidInput("duplicate model name '" + models.back().name + "' (" + p + ")");
    }
    manifest.add_model(models.back(), p);
  }
  return models;
}

void emit_csv(const CsvWriter& csv, const fs::path& path, RunManifest& manifest) {
  csv.write(path);
  manifest.add_output(path);
}

std::string percent(double v) { return format_number(100.0 * v, 4) + "%"; }

// ---- commands ----

void cmd_train(const Options& o, RunManifest& m, std::ostream& out) {
  if (o.train.spec.empty()) throw InvalidInput("train: --spec is required");
  const ArchSpec spec = parse_arch(o.train.spec);
  const TrainConfig cfg = train_config(o);
  AdvPoolConfig pool;
  pool.rounds = o.train.pool_rounds;
  pool.pool_capacity = o.train.pool_capacity;
  pool.mix_ratio = o.train.pool_mix;
  pool.refresh_fraction = o.train.pool_refresh;
  pool.iterations_per_round = o.train.pool_iterations;
  pool.first_pool_layer = o.train.pool_first_layer;
  pool.jobs = o.global.jobs;
  pool.validate();

  nlohmann::json tj = train_json(o, cfg);
  tj["spec"] = o.train.spec;
  tj["pool"] = {{"rounds", pool.rounds},
                {"capacity", pool.pool_capacity},
                {"mix", pool.mix_ratio},
                {"refresh", pool.refresh_fraction},
                {"iterations", pool.iterations_per_round},
                {"first_layer", pool.first_pool_layer}};
  m.set("train", tj);

  const LabeledDataset full = load_split(o.global, SourceSplit::train, m);
  const LabeledDataset test = load_split(o.global, SourceSplit::test, m);
  const LabeledDataset data = training_subset(o, full);

  std::vector<TrainLogRow> log;
  Network net = train(spec, data, cfg, &log, &test);
  std::vector<PoolStats> stats;
  if (pool.rounds > 0) net = adversarial_pool_train(std::move(net), data, cfg, pool, &stats, &test);
  if (!o.train.name.empty()) net.name = o.train.name;

  const fs::path dir = o.global.out;
  save_model(net, dir / "model.json");
  m.add_model(net, (dir / "model.json").string());
  m.add_output(dir / "model.json");

  CsvWriter csv({"iteration", "loss", "grad_norm"});
  for (const auto& r : log) {
    csv.row({std::to_string(r.iteration), format_number(r.loss), format_number(r.grad_norm)});
  }
  emit_csv(csv, dir / "train_log.csv", m);
  if (!stats.empty()) {
    CsvWriter ps({"round", "layer", "generated", "skipped", "misclassified_by_generator"});
    for (const auto& s : stats) {
      ps.row({std::to_string(s.round), std::to_string(s.layer), std::to_string(s.generated),
              std::to_string(s.skipped), format_number(s.misclassified_by_generator, 6)});
    }
    emit_csv(ps, dir / "pool_stats.csv", m);
  }
  out << net.name << ": train error " << percent(net.training_meta.at("train_error"))
      << ", test error " << percent(net.training_meta.at("test_error")) << "\n";
}

void cmd_attack(const Options& o, RunManifest& m, std::ostream& out) {
  if (o.model.empty()) throw InvalidInput("attack: --model is required");
  const SourceSplit split = parse_source_split(o.split);
  const AdversarialSetConfig cfg = set_config(o, split);
  m.set("attack", attack_json(o.attack));
  m.set("split", o.split);
  const Network net = load_model(o.model);
  m.add_model(net, o.model);
  const LabeledDataset data = load_split(o.global, split, m);
  const AdversarialSet set = build_adversarial_set(net, data, cfg);

  const fs::path dir = o.global.out;
  CsvWriter csv({"index", "label", "target", "distortion", "c_final", "inner_iterations"});
  std::size_t fooled = 0;
  for (std::size_t k = 0; k < set.size(); ++k) {
    const auto& r = set.results[k];
    fooled += predict(net, r.perturbed) != r.original_label ? 1 : 0;
    csv.row({std::to_string(set.source_indices[k]), std::to_string(r.original_label),
             std::to_string(r.target), format_number(r.distortion, 8), format_number(r.c_final, 8),
             std::to_string(r.inner_iters_used)});
  }
  emit_csv(csv, dir / "attack.csv", m);

  const double generator_error =
      set.size() == 0 ? 0.0 : static_cast<double>(fooled) / static_cast<double>(set.size());
  CsvWriter summary({"model", "split", "attempted", "achieved", "failures", "average_distortion",
                     "generator_error"});
  summary.row({net.name, o.split, std::to_string(set.attempted), std::to_string(set.size()),
               std::to_string(set.failures), format_number(set.average_distortion, 8),
               format_number(generator_error, 6)});
  emit_csv(summary, dir / "attack_summary.csv", m);

  // Rows of (original, perturbed, magnified difference) triples.
  std::vector<Image> tiles;
  for (std::size_t k = 0; k < std::min(o.grid, set.size()); ++k) {
    const auto& r = set.results[k];
    tiles.push_back(r.original);
    tiles.push_back(r.perturbed);
    Vector diff = (0.5 + 10.0 * r.r.array()).cwiseMax(0.0).cwiseMin(1.0).matrix();
    tiles.push_back(Image{r.original.width, r.original.height, std::move(diff)});
  }
  if (!tiles.empty()) {
    write_pgm_grid(tiles, 6, dir / "adversarial.pgm");
    m.add_output(dir / "adversarial.pgm");
  }
  out << net.name << ": " << set.size() << "/" << set.attempted
      << " targets reached, average distortion " << format_number(set.average_distortion, 6)
      << ", generator error " << percent(generator_error) << "\n";
}

void cmd_transfer(const Options& o, RunManifest& m, std::ostream& out) {
  const SourceSplit split = parse_source_split(o.split);
  const AdversarialSetConfig cfg = set_config(o, split);
  m.set("attack", attack_json(o.attack));
  m.set("split", o.split);
  m.set("noise", o.noise);
  const auto models = load_models(o.models, m);
  const LabeledDataset data = load_split(o.global, split, m);
  std::vector<AdversarialSet> sets;
  for (const auto& net : models) {
    sets.push_back(build_adversarial_set(net, data, cfg));
    out << net.name << ": " << sets.back().size() << " adversarial examples, average distortion "
        << format_number(sets.back().average_distortion, 6) << "\n";
  }
  TransferConfig tc;
  tc.gaussian_stddevs = o.noise;
  tc.matched_gaussian = !o.no_matched;
  tc.seed = mix_seed(o.global.seed ^ 0x7A45F3ULL);
  tc.jobs = o.global.jobs;
  const TransferMatrix matrix = cross_error_matrix(models, sets, tc);
  emit_csv(matrix.table(), fs::path(o.global.out) / "transfer.csv", m);
}

void cmd_cross_train(const Options& o, RunManifest& m, std::ostream& out) {
  const TrainConfig tcfg = train_config(o);
  CrossTrainingConfig cfg;
  cfg.split_seed = o.global.seed;
  cfg.train = tcfg;
  cfg.attack = set_config(o, SourceSplit::test);
  cfg.noise_seed = mix_seed(o.global.seed ^ 0xC2055ULL);
  cfg.jobs = o.global.jobs;
  m.set("train", train_json(o, tcfg));
  m.set("attack", attack_json(o.attack));

  const LabeledDataset full = load_split(o.global, SourceSplit::train, m);
  const LabeledDataset test = load_split(o.global, SourceSplit::test, m);
  LabeledDataset train = training_subset(o, full);
  if (train.size() % 2 != 0) {
    std::vector<std::size_t> idx(train.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    train = train.subset(idx, train.name());
  }

  const fs::path dir = o.global.out;
  const ModelProvider provider = [&](const ArchSpec& spec, const LabeledDataset& data,
                                     const std::string& name) {
    std::string file = name;
    std::replace(file.begin(), file.end(), '\'', 'p');
    const fs::path cached = o.model_cache.empty() ? fs::path() : fs::path(o.model_cache) / (file + ".json");
    Network net;
    if (!cached.empty() && fs::exists(cached)) {
      net = load_model(cached);
      out << name << ": loaded " << cached.string() << "\n";
    } else {
      net = blindspot::train(spec, data, tcfg, nullptr, &test);
      net.name = name;
      if (!cached.empty()) save_model(net, cached);
    }
    net.name = name;
    save_model(net, dir / "models" / (file + ".json"));
    m.add_model(net, (dir / "models" / (file + ".json")).string());
    return net;
  };
  const CrossTrainingStudy study = cross_training_set_study(train, test, cfg, provider);
  emit_csv(study.baseline, dir / "table3.csv", m);
  emit_csv(study.unamplified.table(), dir / "table4_unamplified.csv", m);
  emit_csv(study.amplified.table(), dir / "table4_amplified.csv", m);
  out << study.baseline.str();
}

void cmd_inspect(const Options& o, RunManifest& m, std::ostream& out) {
  if (o.model.empty()) throw InvalidInput("inspect: --model is required");
  const Network net = load_model(o.model);
  m.add_model(net, o.model);
  m.set("inspect", {{"layer", o.layer}, {"rows", o.rows}, {"cols", o.cols}});
  if (o.layer > net.num_layers()) {
    throw InvalidInput("inspect: --layer " + std::to_string(o.layer) + " exceeds the " +
                       std::to_string(net.num_layers()) + " layers of " + net.name);
  }
  if (o.rows == 0 || o.cols == 0) throw InvalidInput("inspect: --rows and --cols must be positive");
  const LabeledDataset test = load_split(o.global, SourceSplit::test, m);
  const InspectionGrids g = inspect_directions(net, o.layer, test, o.rows, o.cols, o.global.seed);
  const fs::path dir = o.global.out;
  write_inspection_grids(g, test, dir / "natural.pgm", dir / "random.pgm");
  m.add_output(dir / "natural.pgm");
  m.add_output(dir / "random.pgm");

  CsvWriter csv({"row", "kind", "unit_or_seed", "top_indices"});
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
  };
  for (std::size_t r = 0; r < g.natural.size(); ++r) {
    csv.row({std::to_string(r), "natural", std::to_string(g.natural[r].index), join(g.natural_top[r])});
  }
  for (std::size_t r = 0; r < g.random.size(); ++r) {
    csv.row({std::to_string(r), "random", std::to_string(g.random[r].seed), join(g.random_top[r])});
  }
  emit_csv(csv, dir / "directions.csv", m);
  out << "wrote " << (dir / "natural.pgm").string() << " and " << (dir / "random.pgm").string()
      << "\n";
}

void cmd_spectral(const Options& o, RunManifest& m, std::ostream& out) {
  if (o.model.empty() == o.layers.empty()) {
    throw InvalidInput("spectral: give exactly one of --model or --layers");
  }
  SigmoidBoundMode mode;
  if (o.mode == "tightened") {
    mode = SigmoidBoundMode::tightened;
  } else if (o.mode == "plain") {
    mode = SigmoidBoundMode::plain;
  } else {
    throw InvalidInput("spectral: --mode must be tightened or plain");
  }
  m.set("spectral", {{"grid_points", o.grid_points}, {"mode", o.mode}, {"probes", o.probes}});
  const fs::path dir = o.global.out;
  std::optional<Network> net;
  SpectralReport report;
  if (!o.model.empty()) {
    net = load_model(o.model);
    m.add_model(*net, o.model);
    report = network_bound(spectral_layers(*net), o.grid_points, mode);
  } else {
    report = network_bound(load_spectral_layers(o.layers), o.grid_points, mode);
    m.set("layers", o.layers);
  }
  emit_csv(report.table(), dir / "spectral.csv", m);

  CsvWriter summary({"product_bound", "probes", "probe_max", "probe_within_bound"});
  if (net) {
    RngStream rng(o.global.seed);
    const double probe = empirical_lipschitz_probe(*net, o.probes, rng);
    summary.row({format_number(report.product, 8), std::to_string(o.probes),
                 format_number(probe, 8), probe <= report.product ? "yes" : "no"});
    out << "product bound " << format_number(report.product, 6) << ", largest probe ratio "
        << format_number(probe, 6) << "\n";
  } else {
    summary.row({format_number(report.product, 8), "0", "", ""});
    out << "product bound " << format_number(report.product, 6) << "\n";
  }
  emit_csv(summary, dir / "spectral_summary.csv", m);
}

void cmd_report(const Options& o, RunManifest& m, std::ostream& out) {
  const SourceSplit split = parse_source_split(o.split);
  const AdversarialSetConfig cfg = set_config(o, split);
  m.set("attack", attack_json(o.attack));
  const auto models = load_models(o.models, m);
  const LabeledDataset train = load_split(o.global, SourceSplit::train, m);
  const LabeledDataset test = load_split(o.global, SourceSplit::test, m);
  std::vector<ModelSummary> rows;
  for (const auto& net : models) {
    const AdversarialSet set = build_adversarial_set(net, split == SourceSplit::train ? train : test, cfg);
    rows.push_back({net.name, describe_model(net), error_rate(net, train), error_rate(net, test),
                    set.average_distortion});
  }
  const CsvWriter table = model_summary_table(rows);
  emit_csv(table, fs::path(o.global.out) / "table1.csv", m);
  out << table.str();
}

// ---- config merging ----

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

bool flag_present(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.starts_with(flag + "=");
  });
}

std::vector<std::string> config_tokens(const nlohmann::json& section, CLI::App* scope,
                                       const std::string& where,
                                       const std::vector<std::string>& args) {
  if (!section.is_object()) throw FormatError("config: section '" + where + "' must be an object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : section.items()) {
    const std::string flag = flag_name(key);
    const CLI::Option* opt = scope->get_option_no_throw(flag);
    if (opt == nullptr || flag == "--config" || flag == "--help") {
      throw FormatError("config: unknown key '" + key + "' in section '" + where + "'");
    }
    if (flag_present(args, flag)) continue;
    auto scalar = [&](const nlohmann::json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
      if (v.is_number()) return format_number(v.get<double>(), 17);
      throw FormatError("config: key '" + key + "' in section '" + where +
                        "' must be a string, number, boolean or array of those");
    };
    if (value.is_boolean()) {
      if (opt->get_expected_min() != 0) {
        throw FormatError("config: key '" + key + "' in section '" + where + "' expects a value");
      }
      if (value.get<bool>()) tokens.push_back(flag);
    } else if (value.is_array()) {
      if (value.empty()) continue;
      tokens.push_back(flag);
      for (const auto& v : value) tokens.push_back(scalar(v));
    } else {
      tokens.push_back(flag);
      tokens.push_back(scalar(value));
    }
  }
  return tokens;
}

std::optional<std::string> prescan_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Adversarial examples and Lipschitz bounds for small MNIST networks", "blindspot"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", o.global.config, "JSON file with per-command sections");
  app.add_flag("--desk-scale", o.global.desk_scale, "Subsampled, faster runs");
  app.add_option("--jobs", o.global.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--data", o.global.data, "Directory with the MNIST IDX files");
  app.add_option("--out", o.global.out, "Output directory");
  app.add_option("--seed", o.global.seed, "Master seed");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--spec", o.train.spec, "Architecture, e.g. fc100-100-10, fc10(1e-2), ae400-10");
  train->add_option("--name", o.train.name, "Model name (default: the architecture)");
  train->add_option("--lambda", o.train.lambdas, "Per-layer weight decay, overriding the defaults");
  add_train_options(train, o.train);
  train->add_option("--pool-rounds", o.train.pool_rounds, "Adversarial-pool rounds after training");
  train->add_option("--pool-capacity", o.train.pool_capacity, "Items per pool");
  train->add_option("--pool-mix", o.train.pool_mix, "Objective weight of the pools");
  train->add_option("--pool-refresh", o.train.pool_refresh, "Fraction of a full pool replaced per round");
  train->add_option("--pool-iterations", o.train.pool_iterations, "L-BFGS iterations per round");
  train->add_option("--pool-first-layer", o.train.pool_first_layer, "Lowest layer with a pool");

  auto* attack = app.add_subcommand("attack", "Generate adversarial examples for one model");
  attack->add_option("--model", o.model, "Model JSON");
  attack->add_option("--split", o.split, "train or test");
  attack->add_option("--grid", o.grid, "Examples shown in adversarial.pgm");
  add_attack_options(attack, o.attack);

  auto* transfer = app.add_subcommand("transfer", "Cross-model error matrix");
  transfer->add_option("--models", o.models, "Model JSON files");
  transfer->add_option("--split", o.split, "train or test");
  transfer->add_option("--noise", o.noise, "Gaussian noise rows (stddev)");
  transfer->add_flag("--no-matched", o.no_matched, "Skip the matched-stddev noise rows");
  add_attack_options(transfer, o.attack);

  auto* cross = app.add_subcommand("cross-train", "Cross-training-set study on two halves of train");
  add_train_options(cross, o.train);
  cross->add_option("--model-cache", o.model_cache, "Reuse or store trained models here");
  add_attack_options(cross, o.attack);

  auto* inspect = app.add_subcommand("inspect", "Top test images along unit and random directions");
  inspect->add_option("--model", o.model, "Model JSON");
  inspect->add_option("--layer", o.layer, "Activation layer (0 = input)");
  inspect->add_option("--rows", o.rows, "Directions of each kind");
  inspect->add_option("--cols", o.cols, "Images per direction");

  auto* spectral = app.add_subcommand("spectral", "Layer-wise Lipschitz upper bounds");
  spectral->add_option("--model", o.model, "Model JSON");
  spectral->add_option("--layers", o.layers, "Layer-list JSON (conv, pooling, normalization, affine)");
  spectral->add_option("--grid-points", o.grid_points, "Frequency samples per axis for conv layers");
  spectral->add_option("--mode", o.mode, "tightened or plain");
  spectral->add_option("--probes", o.probes, "Random pairs for the empirical probe");

  auto* report = app.add_subcommand("report", "Model summary table with minimal distortions");
  report->add_option("--models", o.models, "Model JSON files");
  report->add_option("--split", o.split, "train or test");
  add_attack_options(report, o.attack);

  std::unique_ptr<RunManifest> manifest;
  try {
    std::vector<std::string> merged = args;
    if (const auto config_path = prescan_config(args)) {
      nlohmann::json cfg;
      try {
        cfg = nlohmann::json::parse(read_text_file(*config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("config " + *config_path + ": invalid JSON: " + e.what());
      }
      if (!cfg.is_object()) throw FormatError("config: top level must be an object");
      std::string command;
      for (const auto& a : args) {
        if (app.get_subcommand_no_throw(a) != nullptr) {
          command = a;
          break;
        }
      }
      std::vector<std::string> global_tokens;
      std::vector<std::string> command_tokens;
      for (const auto& [section, body] : cfg.items()) {
        if (section == "global") {
          global_tokens = config_tokens(body, &app, section, args);
        } else if (CLI::App* sub = app.get_subcommand_no_throw(section)) {
          if (section == command) command_tokens = config_tokens(body, sub, section, args);
        } else {
          throw FormatError("config: unknown section '" + section + "'");
        }
      }
      merged = global_tokens;
      merged.insert(merged.end(), args.begin(), args.end());
      if (!command_tokens.empty()) {
        auto pos = std::find(merged.begin(), merged.end(), command);
        merged.insert(pos + 1, command_tokens.begin(), command_tokens.end());
      }
    }
    std::reverse(merged.begin(), merged.end());
    app.parse(merged);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  const fs::path out_dir = o.global.out;
  manifest = std::make_unique<RunManifest>(command);
  manifest->set("global", global_json(o.global));
  manifest->set("data", data_dir(o.global).string());

  int code = kExitOk;
  try {
    fs::create_directories(out_dir);
    if (command == "train") cmd_train(o, *manifest, out);
    if (command == "attack") cmd_attack(o, *manifest, out);
    if (command == "transfer") cmd_transfer(o, *manifest, out);
    if (command == "cross-train") cmd_cross_train(o, *manifest, out);
    if (command == "inspect") cmd_inspect(o, *manifest, out);
    if (command == "spectral") cmd_spectral(o, *manifest, out);
    if (command == "report") cmd_report(o, *manifest, out);
    manifest->set_status("ok");
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    manifest->set_status("invalid", e.what());
    code = kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    manifest->set_status("invalid", e.what());
    code = kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    manifest->set_status("failed", e.what());
    code = kExitRuntime;
  }
  try {
    manifest->write(out_dir / "manifest.json");
  } catch (const std::exception& e) {
    err << "error: cannot write manifest: " << e.what() << "\n";
    if (code == kExitOk) code = kExitRuntime;
  }
  return code;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace blindspot
