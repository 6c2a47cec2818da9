#include "tcl/cli.hpp"

#include "tcl/eval.hpp"
#include "tcl/text_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#ifndef TCL_VERSION
#define TCL_VERSION "unknown"
#endif

namespace tcl::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string version() { return TCL_VERSION; }

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    std::string_view body = text::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    auto key = text::trim(body.substr(0, eq));
    auto value = text::trim(body.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    values[std::string(key)] = std::string(value);
  }
  return values;
}

std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  return parse_key_values(in);
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

int to_int(const std::string& v) { return static_cast<int>(text::parse_int(v)); }

// Single table of TrainConfig keys so reading, writing and the manifest stay in sync.
struct ConfigField {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

const std::vector<ConfigField>& config_fields() {
  using text::format_double;
  static const std::vector<ConfigField> fields = {
      {"epochs", [](auto& c, auto& v) { c.epochs = to_int(v); }, [](auto& c) { return std::to_string(c.epochs); }},
      {"warmup_epochs", [](auto& c, auto& v) { c.warmup_epochs = to_int(v); },
       [](auto& c) { return std::to_string(c.warmup_epochs); }},
      {"batch_size", [](auto& c, auto& v) { c.batch_size = to_int(v); },
       [](auto& c) { return std::to_string(c.batch_size); }},
      {"base_lr", [](auto& c, auto& v) { c.base_lr = text::parse_double(v); },
       [](auto& c) { return format_double(c.base_lr); }},
      {"momentum", [](auto& c, auto& v) { c.momentum = text::parse_double(v); },
       [](auto& c) { return format_double(c.momentum); }},
      {"weight_decay", [](auto& c, auto& v) { c.weight_decay = text::parse_double(v); },
       [](auto& c) { return format_double(c.weight_decay); }},
      {"tau", [](auto& c, auto& v) { c.tau = text::parse_double(v); }, [](auto& c) { return format_double(c.tau); }},
      {"mixup_alpha", [](auto& c, auto& v) { c.mixup_alpha = text::parse_double(v); },
       [](auto& c) { return format_double(c.mixup_alpha); }},
      {"embedding_dim", [](auto& c, auto& v) { c.embedding_dim = to_int(v); },
       [](auto& c) { return std::to_string(c.embedding_dim); }},
      {"hidden_dim", [](auto& c, auto& v) { c.hidden_dim = to_int(v); },
       [](auto& c) { return std::to_string(c.hidden_dim); }},
      {"update_frequency", [](auto& c, auto& v) { c.update_frequency = to_int(v); },
       [](auto& c) { return std::to_string(c.update_frequency); }},
      {"aug_strength", [](auto& c, auto& v) { c.aug_strength = text::parse_double(v); },
       [](auto& c) { return format_double(c.aug_strength); }},
      {"correction", [](auto& c, auto& v) { c.correction = parse_bool(v); },
       [](auto& c) { return std::string(c.correction ? "true" : "false"); }},
      {"checkpoint_every", [](auto& c, auto& v) { c.checkpoint_every = to_int(v); },
       [](auto& c) { return std::to_string(c.checkpoint_every); }},
      {"seed", [](auto& c, auto& v) { c.seed = static_cast<std::uint64_t>(text::parse_int(v)); },
       [](auto& c) { return std::to_string(c.seed); }},
  };
  return fields;
}

}  // namespace

void apply_config(const std::map<std::string, std::string>& values, TrainConfig& config) {
  const auto& fields = config_fields();
  for (const auto& [key, value] : values) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return key == f.key; });
    if (it == fields.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    try {
      it->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
  }
}

void write_config(std::ostream& out, const TrainConfig& config) {
  for (const auto& f : config_fields()) out << f.key << " = " << f.get(config) << '\n';
}

namespace {

ordered_json config_json(const TrainConfig& config) {
  ordered_json j = ordered_json::object();
  for (const auto& f : config_fields()) j[f.key] = f.get(config);
  return j;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& path, const std::string& command, const ordered_json& config,
                    std::uint64_t seed, const ordered_json& inputs, const std::vector<std::string>& artifacts,
                    double seconds) {
  ordered_json m;
  m["command"] = command;
  m["version"] = version();
  m["seed"] = seed;
  m["config"] = config;
  m["inputs"] = inputs;
  m["artifacts"] = artifacts;
  m["wall_clock_seconds"] = seconds;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  out << m.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  int n = 1000;
  int n_test = 0;
  int k = 4;
  int d = 8;
  double separation = 6.0;
  std::string noise = "none";
  double ratio = 0.0;
  std::uint64_t seed = 1;
  std::string output;
  std::string test_output;
  std::string out_dir;
  std::string config_path;
};

int cmd_generate(const GenerateArgs& a_in, const CLI::App& sub, std::ostream& out) {
  Stopwatch clock;
  GenerateArgs a = a_in;
  if (!a.config_path.empty()) {
    // Config values apply only where the flag was not given on the command line.
    for (const auto& [key, value] : load_key_values(a.config_path)) {
      auto given = [&](const char* flag) { return sub.count(flag) > 0; };
      if (key == "n") { if (!given("--n")) a.n = to_int(value); }
      else if (key == "n_test") { if (!given("--n-test")) a.n_test = to_int(value); }
      else if (key == "k") { if (!given("--k")) a.k = to_int(value); }
      else if (key == "d") { if (!given("--d")) a.d = to_int(value); }
      else if (key == "sep") { if (!given("--sep")) a.separation = text::parse_double(value); }
      else if (key == "noise") { if (!given("--noise")) a.noise = value; }
      else if (key == "ratio") { if (!given("--ratio")) a.ratio = text::parse_double(value); }
      else if (key == "seed") { if (!given("--seed")) a.seed = static_cast<std::uint64_t>(text::parse_int(value)); }
      else throw std::invalid_argument("unknown generate config key '" + key + "'");
    }
  }
  if (a.output.empty()) {
    if (a.out_dir.empty()) throw std::invalid_argument("generate: need -o FILE or --out DIR");
    a.output = (fs::path(a.out_dir) / "dataset.txt").string();
  } else if (!a.out_dir.empty() && fs::path(a.output).is_relative()) {
    a.output = (fs::path(a.out_dir) / a.output).string();
  }
  if (a.n_test > 0 && a.test_output.empty()) a.test_output = (fs::path(a.output).parent_path() / "test.txt").string();
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);

  const NoiseKind kind = parse_noise_kind(a.noise);
  auto split = generate_blob_split(a.n, a.n_test, a.k, a.d, a.separation, a.seed);
  Dataset train = inject_noise(split.train, kind, kind == NoiseKind::kNone ? 0.0 : a.ratio,
                               a.seed ^ 0x9e3779b97f4a7c15ULL);
  save_dataset(a.output, train);
  std::vector<std::string> artifacts{a.output};
  if (a.n_test > 0) {
    save_dataset(a.test_output, split.test);
    artifacts.push_back(a.test_output);
  }

  ordered_json cfg;
  cfg["n"] = a.n;
  cfg["n_test"] = a.n_test;
  cfg["k"] = a.k;
  cfg["d"] = a.d;
  cfg["sep"] = a.separation;
  cfg["noise"] = to_string(kind);
  cfg["ratio"] = a.ratio;
  const std::string manifest = a.output + ".manifest.json";
  artifacts.push_back(manifest);
  write_manifest(manifest, "generate", cfg, a.seed, ordered_json::object(), artifacts, clock.seconds());
  out << "wrote " << train.size() << " samples (realized noise " << train.realized_noise() << ") to " << a.output
      << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string test;
  std::string out_dir;
  std::string config_path;
  std::string manifest_path;
  int hist_bins = 20;
  TrainConfig flags;
  bool no_correction = false;
};

int cmd_train(TrainArgs a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  Stopwatch clock;
  TrainConfig config;

  if (!a.manifest_path.empty()) {
    std::ifstream in(a.manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest '" + a.manifest_path + "'");
    const auto m = nlohmann::json::parse(in);
    std::map<std::string, std::string> values;
    for (const auto& [key, value] : m.at("config").items()) values[key] = value.get<std::string>();
    apply_config(values, config);
    const auto& inputs = m.at("inputs");
    if (a.data.empty()) a.data = inputs.at("data").get<std::string>();
    if (a.test.empty() && inputs.contains("test")) a.test = inputs.at("test").get<std::string>();
    if (!sub.count("--hist-bins") && inputs.contains("hist_bins")) a.hist_bins = inputs.at("hist_bins").get<int>();
  }
  if (!a.config_path.empty()) apply_config(load_key_values(a.config_path), config);

  // Command-line flags take precedence over the config file.
  const auto& f = a.flags;
  auto given = [&](const char* flag) { return sub.count(flag) > 0; };
  if (given("--epochs")) config.epochs = f.epochs;
  if (given("--warmup")) config.warmup_epochs = f.warmup_epochs;
  if (given("--batch-size")) config.batch_size = f.batch_size;
  if (given("--lr")) config.base_lr = f.base_lr;
  if (given("--momentum")) config.momentum = f.momentum;
  if (given("--weight-decay")) config.weight_decay = f.weight_decay;
  if (given("--tau")) config.tau = f.tau;
  if (given("--alpha")) config.mixup_alpha = f.mixup_alpha;
  if (given("--embedding-dim")) config.embedding_dim = f.embedding_dim;
  if (given("--hidden-dim")) config.hidden_dim = f.hidden_dim;
  if (given("--update-frequency")) config.update_frequency = f.update_frequency;
  if (given("--aug-strength")) config.aug_strength = f.aug_strength;
  if (given("--checkpoint-every")) config.checkpoint_every = f.checkpoint_every;
  if (given("--seed")) config.seed = f.seed;
  if (a.no_correction) config.correction = false;
  config.validate();

  if (a.data.empty()) throw std::invalid_argument("train: --data is required");
  if (a.out_dir.empty()) throw std::invalid_argument("train: --out is required");
  const Dataset train_ds = load_dataset(a.data);
  const Dataset test_ds = a.test.empty() ? Dataset{} : load_dataset(a.test);
  if (!a.test.empty() && (test_ds.dim() != train_ds.dim() || test_ds.num_classes != train_ds.num_classes))
    throw std::runtime_error("train: test set shape (d=" + std::to_string(test_ds.dim()) + ", K=" +
                             std::to_string(test_ds.num_classes) + ") does not match training set");

  const fs::path dir(a.out_dir);
  fs::create_directories(dir / "checkpoints");
  std::vector<std::string> artifacts;
  auto track = [&](const fs::path& p) {
    artifacts.push_back(p.string());
    return p;
  };

  auto metrics = open_out(track(dir / "metrics.csv"));
  write_metrics_header(metrics);

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    write_metrics_row(metrics, m);
    metrics.flush();
    out << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.loss.total << " acc_test " << m.acc_test
        << " auc " << m.auc_detect << '\n';
  };
  hooks.on_checkpoint = [&](int epoch, const ModelParams& p) {
    std::ostringstream name;
    name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
    save_checkpoint(track(dir / "checkpoints" / name.str()).string(), p);
  };
  hooks.on_warning = [&](const std::string& msg) { err << "warning: " << msg << '\n'; };

  const TrainResult result = train(config, train_ds, test_ds, hooks);
  metrics.close();

  {
    auto loss = open_out(track(dir / "loss.csv"));
    write_loss_header(loss);
    for (std::size_t e = 0; e < result.step_losses.size(); ++e)
      for (std::size_t s = 0; s < result.step_losses[e].size(); ++s)
        write_loss_row(loss, static_cast<int>(e), static_cast<int>(s), result.step_losses[e][s]);
  }
  save_checkpoint(track(dir / "final.ckpt").string(), result.params);
  {
    auto cfg = open_out(track(dir / "config.txt"));
    write_config(cfg, config);
  }
  if (result.final_state) {
    {
      auto gmm = open_out(track(dir / "gmm.txt"));
      write_gmm(gmm, result.final_state->gmm);
    }
    std::vector<DetectionRecord> records(train_ds.size());
    for (std::size_t i = 0; i < train_ds.size(); ++i)
      records[i] = {train_ds.samples[i].sample_id, result.final_state->clean_probs[i], train_ds.samples[i].is_clean()};
    auto hist = open_out(track(dir / "clean_hist.csv"));
    export_clean_histogram(hist, records, a.hist_bins);
  }

  ordered_json inputs;
  inputs["data"] = a.data;
  if (!a.test.empty()) inputs["test"] = a.test;
  inputs["hist_bins"] = a.hist_bins;
  artifacts.push_back((dir / "manifest.json").string());
  write_manifest(dir / "manifest.json", "train", config_json(config), config.seed, inputs, artifacts,
                 clock.seconds());
  out << "run written to " << dir.string() << '\n';
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string test;
  std::string out_dir;
  std::string config_path;
  int knn_k = 0;
};

int cmd_eval(EvalArgs a, std::ostream& out) {
  if (!a.config_path.empty()) {
    for (const auto& [key, value] : load_key_values(a.config_path)) {
      if (key == "knn_k") { if (a.knn_k == 0) a.knn_k = to_int(value); }
      else throw std::invalid_argument("unknown eval config key '" + key + "'");
    }
  }
  const ModelParams params = load_checkpoint(a.checkpoint);
  const Dataset data = load_dataset(a.data);
  const Dataset test = a.test.empty() ? data : load_dataset(a.test);
  const auto shape = params.shape();
  for (const Dataset* ds : {&data, &test}) {
    if (ds->dim() != shape.input_dim || ds->num_classes != shape.num_classes)
      throw std::runtime_error("eval: checkpoint/dataset mismatch (checkpoint d=" + std::to_string(shape.input_dim) +
                               " K=" + std::to_string(shape.num_classes) + ", dataset d=" +
                               std::to_string(ds->dim()) + " K=" + std::to_string(ds->num_classes) + ")");
  }

  const double acc = accuracy(predict_all(params, test), test.true_labels());
  const int k = a.knn_k > 0 ? a.knn_k : default_knn_k(data.size());
  const auto bank = forward(params, data.feature_matrix());
  const auto queries = forward(params, test.feature_matrix());
  const double knn = knn_eval(bank.embeddings, data.noisy_labels(), queries.embeddings, test.true_labels(), k);
  const EpochState state = e_step(data, params);
  const double auc = detection_auc_of(data, state.clean_probs);
  const double imbalance = imbalance_ratio(data.noisy_labels(), data.num_classes);

  std::ostringstream table;
  table << "metric,value\n"
        << "accuracy," << text::format_double(acc) << '\n'
        << "knn_accuracy," << text::format_double(knn) << '\n'
        << "detection_auc," << text::format_double(auc) << '\n'
        << "imbalance_ratio," << text::format_double(imbalance) << '\n';
  out << table.str();
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    auto report = open_out(fs::path(a.out_dir) / "eval.csv");
    report << table.str();
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Twin-contrastive noisy-label learning on synthetic data", "tcl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version());

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic blob dataset with injected label noise");
  g->add_option("--n", gen.n, "Training samples")->check(CLI::PositiveNumber);
  g->add_option("--n-test", gen.n_test, "Clean test samples drawn from the same clusters")->check(CLI::NonNegativeNumber);
  g->add_option("--k", gen.k, "Number of classes")->check(CLI::PositiveNumber);
  g->add_option("--d", gen.d, "Feature dimension")->check(CLI::PositiveNumber);
  g->add_option("--sep", gen.separation, "Minimum distance between cluster centers");
  g->add_option("--noise", gen.noise, "none | sym | asym");
  g->add_option("--ratio", gen.ratio, "Fraction of flipped labels");
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("-o,--output", gen.output, "Dataset file");
  g->add_option("--test-out", gen.test_output, "Test dataset file");
  g->add_option("--out", gen.out_dir, "Output directory");
  g->add_option("--config", gen.config_path, "key = value config file");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train on a dataset file and write a run directory");
  t->add_option("--data", tr.data, "Training dataset file");
  t->add_option("--test", tr.test, "Clean test dataset file");
  t->add_option("--out", tr.out_dir, "Run directory");
  t->add_option("--config", tr.config_path, "key = value config file");
  t->add_option("--manifest", tr.manifest_path, "Reuse the config and inputs of an earlier run");
  t->add_option("--epochs", tr.flags.epochs);
  t->add_option("--warmup", tr.flags.warmup_epochs);
  t->add_option("--batch-size", tr.flags.batch_size);
  t->add_option("--lr", tr.flags.base_lr);
  t->add_option("--momentum", tr.flags.momentum);
  t->add_option("--weight-decay", tr.flags.weight_decay);
  t->add_option("--tau", tr.flags.tau);
  t->add_option("--alpha", tr.flags.mixup_alpha);
  t->add_option("--embedding-dim", tr.flags.embedding_dim);
  t->add_option("--hidden-dim", tr.flags.hidden_dim);
  t->add_option("--update-frequency", tr.flags.update_frequency);
  t->add_option("--aug-strength", tr.flags.aug_strength);
  t->add_option("--checkpoint-every", tr.flags.checkpoint_every);
  t->add_option("--seed", tr.flags.seed);
  t->add_option("--hist-bins", tr.hist_bins, "Bins of the clean-probability histogram")->check(CLI::Range(2, 1000));
  t->add_flag("--no-correction", tr.no_correction, "Baseline: keep every clean weight at 1");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Training dataset (k-NN bank, detection AUC)")->required();
  e->add_option("--test", ev.test, "Test dataset (defaults to --data)");
  e->add_option("--knn-k", ev.knn_k, "Neighbors for k-NN (default min(200, n/10))")->check(CLI::NonNegativeNumber);
  e->add_option("--out", ev.out_dir, "Directory for eval.csv");
  e->add_option("--config", ev.config_path, "key = value config file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, *g, out);
    if (t->parsed()) return cmd_train(tr, *t, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace tcl::cli
