// madiff: data generation, training, prediction, evaluation, ablations and
// scan benchmarks over the synthetic egocentric benchmark.
//
// Exit codes: 0 success, 2 configuration or schema error, 3 non-finite
// numerics, 4 I/O failure.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>
#include <nlohmann/json.hpp>

#include "madiff/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace madiff;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ----------------------------------------------------------------- files

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Single-instance guard for an output location.
class Lock {
 public:
  explicit Lock(fs::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw IoError("output is locked by another run (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) throw IoError("cannot write lockfile " + path_.string());
  }
  ~Lock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  Lock(const Lock&) = delete;
  Lock& operator=(const Lock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Writes sha256 lines for the given outputs and echoes them.
void write_checksums(const fs::path& dir, const std::vector<fs::path>& files) {
  std::ostringstream os;
  for (const auto& f : files) {
    const auto sum = synth::file_checksum(f);
    os << sum << "  " << f.filename().string() << '\n';
    std::cout << "sha256 " << f.filename().string() << ' ' << sum << '\n';
  }
  write_text(dir / "checksums.txt", os.str());
}

// ------------------------------------------------------------ run config

struct RunConfig {
  std::string preset = "toy";
  pipeline::ModelConfig model;
  pipeline::TrainConfig train;
  pipeline::DataOptions data;
  std::uint64_t seed = 0;
  std::size_t samples = 10;
  std::string split = "test";
  bool heavy_only = false;
  metrics::EvalOptions eval;
  std::vector<std::string> variants{"full", "v1"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> observation_ratios;
  json model_overrides = json::object();
  json train_overrides = json::object();
};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (!known.contains(k)) throw ConfigError(path + "." + k + ": unknown key");
}

template <class T>
void get(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

void apply_preset(RunConfig& rc) {
  try {
    const auto p = pipeline::preset_from_string(rc.preset);
    rc.model = pipeline::model_config_from_json(rc.model_overrides, p.model);
    rc.train = pipeline::train_config_from_json(rc.train_overrides, p.train);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  reject_unknown(j,
                 {"preset", "model", "train", "data", "seed", "samples", "split", "heavy_only", "eval", "ablate"},
                 "config");
  get(j, "preset", rc.preset, "config");
  if (j.contains("model")) rc.model_overrides = j.at("model");
  if (j.contains("train")) rc.train_overrides = j.at("train");
  if (!rc.model_overrides.is_object()) throw ConfigError("config.model: expected an object");
  if (!rc.train_overrides.is_object()) throw ConfigError("config.train: expected an object");
  get(j, "seed", rc.seed, "config");
  get(j, "samples", rc.samples, "config");
  get(j, "split", rc.split, "config");
  get(j, "heavy_only", rc.heavy_only, "config");
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"homographies", "ransac_seed"}, "config.data");
    std::string h = pipeline::to_string(rc.data.homographies);
    get(d, "homographies", h, "config.data");
    try {
      rc.data.homographies = pipeline::homography_source_from_string(h);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.data.homographies: ") + e.what());
    }
    get(d, "ransac_seed", rc.data.ransac_seed, "config.data");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, {"sigma", "resolution", "wde_weights"}, "config.eval");
    get(e, "sigma", rc.eval.sigma, "config.eval");
    get(e, "resolution", rc.eval.resolution, "config.eval");
    get(e, "wde_weights", rc.eval.wde_weights, "config.eval");
  }
  if (j.contains("ablate")) {
    const json& a = j.at("ablate");
    reject_unknown(a, {"variants", "seeds", "observation_ratios"}, "config.ablate");
    get(a, "variants", rc.variants, "config.ablate");
    get(a, "seeds", rc.seeds, "config.ablate");
    get(a, "observation_ratios", rc.observation_ratios, "config.ablate");
  }
  try {
    pipeline::preset_from_string(rc.preset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.preset: ") + e.what());
  }
  return rc;
}

json to_json(const RunConfig& rc, const std::string& command) {
  json j{{"command", command},
         {"preset", rc.preset},
         {"model", pipeline::to_json(rc.model)},
         {"train", pipeline::to_json(rc.train)},
         {"data",
          {{"homographies", pipeline::to_string(rc.data.homographies)}, {"ransac_seed", rc.data.ransac_seed}}},
         {"seed", rc.seed},
         {"samples", rc.samples},
         {"split", rc.split},
         {"heavy_only", rc.heavy_only},
         {"eval", {{"sigma", rc.eval.sigma}, {"resolution", rc.eval.resolution}, {"wde_weights", rc.eval.wde_weights}}}};
  if (command == "ablate")
    j["ablate"] = {{"variants", rc.variants}, {"seeds", rc.seeds}, {"observation_ratios", rc.observation_ratios}};
  return j;
}

// `--ablate key:value` flags; conflicting values for one key are rejected.
void apply_ablation_flags(json& model, const std::vector<std::string>& flags) {
  std::map<std::string, std::string> seen;
  for (const auto& f : flags) {
    const auto colon = f.find(':');
    if (colon == std::string::npos) throw ConfigError("--ablate " + f + ": expected key:value");
    const std::string key = f.substr(0, colon), value = f.substr(colon + 1);
    if (auto it = seen.find(key); it != seen.end() && it->second != value)
      throw ConfigError("--ablate: conflicting flags " + key + ":" + it->second + " and " + f);
    seen[key] = value;
    if (key == "motion" || key == "scan") {
      model[key] = value;
    } else if (key == "cdc") {
      if (value != "on" && value != "off") throw ConfigError("--ablate cdc: expected on or off");
      model["cdc"] = value == "on";
    } else if (key == "blocks") {
      try {
        model["blocks"] = std::stoul(value);
      } catch (const std::exception&) {
        throw ConfigError("--ablate blocks: expected a count");
      }
    } else {
      throw ConfigError("--ablate " + f + ": unknown key (motion, scan, cdc, blocks)");
    }
  }
}

// `--weights name=value,...` loss-weight overrides.
void apply_weight_flags(json& model, const std::vector<std::string>& flags) {
  for (const auto& f : flags) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw ConfigError("--weights " + f + ": expected name=value");
    try {
      model["weights"][f.substr(0, eq)] = std::stod(f.substr(eq + 1));
    } catch (const std::invalid_argument&) {
      throw ConfigError("--weights " + f + ": value is not a number");
    }
  }
}

// Named structural and loss variants used by `ablate`.
json variant_overrides(const std::string& name) {
  static const std::map<std::string, json> table{
      {"full", json::object()},
      {"v1", {{"motion", "none"}}},
      {"v2", {{"motion", "fused-input"}}},
      {"v3", {{"motion", "sum"}}},
      {"v4", {{"scan", "bidirectional"}}},
      {"no-cdc", {{"cdc", false}}},
      {"neither", {{"weights", {{"angle", 0.0}, {"len", 0.0}}}}},
      {"only-angle", {{"weights", {{"len", 0.0}}}}},
      {"only-length", {{"weights", {{"angle", 0.0}}}}},
  };
  if (auto it = table.find(name); it != table.end()) return it->second;
  if (name.starts_with("blocks=")) {
    try {
      return {{"blocks", std::stoul(name.substr(7))}};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown variant '" + name + "' (full, v1..v4, no-cdc, neither, only-angle, only-length, blocks=N)");
}

void merge(json& base, const json& patch) {
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object())
      merge(base[k], v);
    else
      base[k] = v;
  }
}

// ----------------------------------------------------------------- data

struct LoadedData {
  synth::Dataset dataset;
  std::string checksum;
};

LoadedData load_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("dataset " + path.string() + " does not exist");
  LoadedData d;
  d.checksum = synth::file_checksum(path);
  try {
    d.dataset = synth::read_dataset(path);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return d;
}

// Shapes the model must share with the dataset; user overrides that
// disagree surface as a mismatch error.
void align_with_dataset(RunConfig& rc, const synth::SynthConfig& sc) {
  json& m = rc.model_overrides;
  auto pin = [&](const char* key, auto value) {
    if (!m.contains(key)) m[key] = value;
  };
  pin("n_past", sc.n_past);
  pin("n_future", sc.n_future);
  pin("d_sem", sc.d_sem);
  pin("width", sc.width);
  pin("height", sc.height);
  apply_preset(rc);
  if (rc.model.n_past != sc.n_past || rc.model.n_future != sc.n_future || rc.model.d_sem != sc.d_sem)
    throw ConfigError("dataset/format mismatch: dataset has n_past=" + std::to_string(sc.n_past) +
                      ", n_future=" + std::to_string(sc.n_future) + ", d_sem=" + std::to_string(sc.d_sem) +
                      "; model expects " + std::to_string(rc.model.n_past) + ", " + std::to_string(rc.model.n_future) +
                      ", " + std::to_string(rc.model.d_sem));
}

std::vector<pipeline::Example> examples(const synth::Dataset& d, const std::string& split, const RunConfig& rc,
                                        bool heavy_only) {
  auto picked = d.split(split);
  if (heavy_only) std::erase_if(picked, [](const synth::Scenario* s) { return !s->egomotion_heavy; });
  if (picked.empty()) throw ConfigError("split '" + split + "' selects no scenarios");
  return pipeline::make_examples(picked, pipeline::SyntheticSemanticProvider{}, rc.data);
}

// ------------------------------------------------------------- commands

struct CommonFlags {
  std::string config;
  std::string out;
  std::string data;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
};

RunConfig resolve(const CommonFlags& f) {
  RunConfig rc = f.config.empty() ? RunConfig{} : run_config_from_json(read_json(f.config));
  if (f.seed) rc.seed = *f.seed;
  if (f.preset) rc.preset = *f.preset;
  return rc;
}

void prepare_out_dir(const fs::path& dir, bool force, const std::vector<std::string>& products) {
  ensure_dir(dir);
  if (!force)
    for (const auto& p : products)
      if (fs::exists(dir / p)) throw IoError((dir / p).string() + " exists (use --force to overwrite)");
}

int cmd_gen(const CommonFlags& f, std::size_t n_train, std::size_t n_val, std::size_t n_test) {
  const fs::path out = f.out;
  synth::SynthConfig sc;
  std::uint64_t seed = f.seed.value_or(0);
  if (!f.config.empty()) {
    const json j = read_json(f.config);
    reject_unknown(j, {"synth", "seed", "train", "val", "test"}, "config");
    if (j.contains("synth")) {
      try {
        sc = synth::config_from_json(j.at("synth"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config.synth: ") + e.what());
      }
    }
    if (!f.seed) get(j, "seed", seed, "config");
    get(j, "train", n_train, "config");
    get(j, "val", n_val, "config");
    get(j, "test", n_test, "config");
  }
  const std::size_t n = n_train + n_val + n_test;
  if (n == 0) throw ConfigError("gen: the dataset would be empty");
  if (fs::exists(out) && !f.force) throw IoError(out.string() + " exists (use --force to overwrite)");
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  Lock lock(out.string() + ".lock");

  const auto ds = synth::generate_dataset(
      n, {static_cast<double>(n_train), static_cast<double>(n_val), static_cast<double>(n_test)}, sc, seed);
  synth::write_dataset(ds, out);
  write_json(out.string() + ".config.json",
             {{"command", "gen"},
              {"synth", synth::config_to_json(sc)},
              {"seed", seed},
              {"train", n_train},
              {"val", n_val},
              {"test", n_test}});
  std::cout << "train " << ds.split("train").size() << "\nval " << ds.split("val").size() << "\ntest "
            << ds.split("test").size() << "\nsha256 " << synth::file_checksum(out) << '\n';
  return 0;
}

int cmd_train(const CommonFlags& f, const std::vector<std::string>& ablate, const std::vector<std::string>& weights,
              std::optional<std::size_t> epochs, const std::string& resume) {
  RunConfig rc = resolve(f);
  apply_ablation_flags(rc.model_overrides, ablate);
  apply_weight_flags(rc.model_overrides, weights);
  if (epochs) rc.train_overrides["epochs"] = *epochs;
  const auto data = load_dataset(f.data);
  std::optional<pipeline::Checkpoint> prior;
  if (!resume.empty()) {
    prior = pipeline::load_checkpoint(fs::path(resume));
    rc.model_overrides = pipeline::to_json(prior->model);
    rc.seed = prior->seed;
  }
  align_with_dataset(rc, data.dataset.config);
  if (rc.train_overrides.empty() || !rc.train_overrides.contains("seed")) rc.train.seed = rc.seed;

  const fs::path dir = f.out;
  prepare_out_dir(dir, f.force, {"checkpoint.madf", "loss_curve.csv"});
  Lock lock(dir / ".madiff.lock");
  json resolved = to_json(rc, "train");
  resolved["dataset"] = {{"path", f.data}, {"sha256", data.checksum}};
  if (!resume.empty()) resolved["resume"] = resume;
  write_json(dir / "config.json", resolved);

  const auto train = examples(data.dataset, "train", rc, false);
  std::unique_ptr<pipeline::Model> model;
  dg::AdamWState opt;
  if (prior) {
    model = pipeline::model_from_checkpoint(*prior);
    if (prior->optimizer) opt = *prior->optimizer;
  } else {
    model = std::make_unique<pipeline::Model>(rc.model, rc.seed);
  }
  std::cout << "training " << train.size() << " sequences, " << model->params().scalar_count() << " parameters\n";
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = pipeline::train(*model, train, rc.train, [&](std::size_t e, const losses::LossBreakdown& b) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "epoch " << e << " total " << b.total << " vlb " << b.vlb << " dis " << b.dis << " reg " << b.reg
              << " angle " << b.angle << " len " << b.len << " (" << std::fixed << std::setprecision(1) << s << "s)\n"
              << std::defaultfloat << std::setprecision(6);
  }, &opt);
  pipeline::save_checkpoint(pipeline::make_checkpoint(*model, rc.train, rc.seed, &opt), dir / "checkpoint.madf");
  write_text(dir / "loss_curve.csv", pipeline::loss_curve_csv(result));
  std::cout << "step " << opt.step << '\n';
  write_checksums(dir, {dir / "checkpoint.madf", dir / "loss_curve.csv"});
  return 0;
}

json trajectory_json(const metrics::Trajectory& t) {
  json a = json::array();
  for (const auto& p : t) a.push_back({p.u, p.v});
  return a;
}

std::unique_ptr<pipeline::Model> load_model(const std::string& path, RunConfig& rc, const synth::SynthConfig& sc) {
  const auto ck = pipeline::load_checkpoint(fs::path(path));
  rc.model_overrides = pipeline::to_json(ck.model);
  align_with_dataset(rc, sc);
  return pipeline::model_from_checkpoint(ck);
}

int cmd_predict(const CommonFlags& f, const std::string& checkpoint, std::optional<std::size_t> samples,
                const std::string& split, const std::vector<std::string>& ids) {
  RunConfig rc = resolve(f);
  if (samples) rc.samples = *samples;
  if (!split.empty()) rc.split = split;
  if (rc.samples == 0) throw ConfigError("--samples must be positive");
  const auto data = load_dataset(f.data);
  const auto model = load_model(checkpoint, rc, data.dataset.config);
  auto ex = examples(data.dataset, rc.split, rc, rc.heavy_only);
  if (!ids.empty()) {
    const std::set<std::string> want(ids.begin(), ids.end());
    std::erase_if(ex, [&](const pipeline::Example& e) { return !want.contains(e.id); });
    if (ex.size() != want.size()) throw ConfigError("--ids names scenarios that are not in the split");
  }

  const fs::path out = f.out;
  if (fs::exists(out) && !f.force) throw IoError(out.string() + " exists (use --force to overwrite)");
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  Lock lock(out.string() + ".lock");
  json resolved = to_json(rc, "predict");
  resolved["checkpoint"] = checkpoint;
  resolved["dataset"] = {{"path", f.data}, {"sha256", data.checksum}};
  write_json(out.string() + ".config.json", resolved);

  json seqs = json::array();
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    pipeline::InferenceOptions io;
    io.samples = rc.samples;
    io.seed = synth::splitmix64(rc.seed ^ synth::splitmix64(i + 1));
    io.clamped = &clamped;
    const auto pred = pipeline::predict(*model, ex[i], io);
    metrics::Trajectory past(ex[i].waypoints.begin(), ex[i].waypoints.begin() + static_cast<std::ptrdiff_t>(ex[i].n_past));
    json s{{"id", ex[i].id}, {"seed", io.seed}, {"past", trajectory_json(past)}, {"samples", json::array()}};
    for (const auto& p : pred) s["samples"].push_back(trajectory_json(p));
    seqs.push_back(std::move(s));
  }
  write_json(out, {{"format", "madiff-predictions"},
                   {"version", 1},
                   {"samples", rc.samples},
                   {"seed", rc.seed},
                   {"n_future", model->config().n_future},
                   {"cdc_border_clamps", clamped},
                   {"sequences", seqs}});
  std::cout << "predicted " << ex.size() << " sequences x " << rc.samples << " samples\nsha256 "
            << synth::file_checksum(out) << '\n';
  return 0;
}

void print_overall(const std::string& label, const metrics::GroupStats& g) {
  std::cout << std::left << std::setw(8) << label << " ADE " << g.ade << " FDE " << g.fde << " WDE " << g.wde;
  if (g.sim) std::cout << " SIM " << *g.sim << " AUC-J " << *g.auc_judd << " NSS " << *g.nss;
  std::cout << '\n';
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, std::optional<std::size_t> samples,
             const std::string& split, bool heavy_only, std::size_t render) {
  RunConfig rc = resolve(f);
  if (samples) rc.samples = *samples;
  if (!split.empty()) rc.split = split;
  if (heavy_only) rc.heavy_only = true;
  const auto data = load_dataset(f.data);
  const auto model = load_model(checkpoint, rc, data.dataset.config);
  const auto ex = examples(data.dataset, rc.split, rc, rc.heavy_only);

  const fs::path dir = f.out;
  prepare_out_dir(dir, f.force, {"report.json", "per_archetype.csv", "cvh_per_archetype.csv"});
  Lock lock(dir / ".madiff.lock");
  json resolved = to_json(rc, "eval");
  resolved["checkpoint"] = checkpoint;
  resolved["dataset"] = {{"path", f.data}, {"sha256", data.checksum}};
  write_json(dir / "config.json", resolved);

  const auto rep = pipeline::evaluate(*model, ex, rc.samples, rc.seed, rc.eval);
  const auto cvh = pipeline::evaluate_constant_velocity(ex, rc.eval);
  write_json(dir / "report.json", {{"format", "madiff-report"},
                                   {"version", 1},
                                   {"split", rc.split},
                                   {"heavy_only", rc.heavy_only},
                                   {"model", metrics::report_to_json(rep)},
                                   {"cvh", metrics::report_to_json(cvh)}});
  write_text(dir / "per_archetype.csv", metrics::per_archetype_csv(rep));
  write_text(dir / "cvh_per_archetype.csv", metrics::per_archetype_csv(cvh));
  std::vector<fs::path> products{dir / "report.json", dir / "per_archetype.csv", dir / "cvh_per_archetype.csv"};

  for (std::size_t i = 0; i < std::min(render, ex.size()); ++i) {
    pipeline::InferenceOptions io;
    io.samples = rc.samples;
    io.seed = rep.seeds[i];
    const auto pts = metrics::interaction_points(pipeline::predict(*model, ex[i], io), ex[i].affordance);
    const auto pred = metrics::affordance_map(pts, rc.eval.sigma, rc.eval.resolution);
    const auto gt = metrics::affordance_map({ex[i].affordance}, rc.eval.sigma, rc.eval.resolution);
    metrics::write_pgm(pred, dir / (ex[i].id + "_pred.pgm"));
    metrics::write_pgm(gt, dir / (ex[i].id + "_gt.pgm"));
  }
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << ex.size() << " sequences, " << rc.samples << " samples\n";
  print_overall("model", rep.overall);
  print_overall("cvh", cvh.overall);
  write_checksums(dir, products);
  return 0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const CommonFlags& f, const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds,
               const std::vector<double>& ratios, std::optional<std::size_t> epochs, std::optional<std::size_t> samples,
               bool heavy_only) {
  RunConfig rc = resolve(f);
  if (!variants.empty()) rc.variants = variants;
  if (!seeds.empty()) rc.seeds = seeds;
  if (!ratios.empty()) rc.observation_ratios = ratios;
  if (epochs) rc.train_overrides["epochs"] = *epochs;
  if (samples) rc.samples = *samples;
  if (heavy_only) rc.heavy_only = true;
  if (rc.variants.empty() || rc.seeds.empty()) throw ConfigError("ablate needs at least one variant and one seed");
  for (const auto& v : rc.variants) variant_overrides(v);
  const auto data = load_dataset(f.data);
  align_with_dataset(rc, data.dataset.config);

  const fs::path dir = f.out;
  prepare_out_dir(dir, f.force, {"ablation.csv", "ablation_summary.csv"});
  Lock lock(dir / ".madiff.lock");
  json resolved = to_json(rc, "ablate");
  resolved["dataset"] = {{"path", f.data}, {"sha256", data.checksum}};
  write_json(dir / "config.json", resolved);

  std::vector<double> obs = rc.observation_ratios;
  if (obs.empty()) obs.push_back(0.0);  // 0: dataset split as stored
  std::ostringstream rows;
  rows << std::setprecision(10) << "variant,seed,observation_ratio,n_past,dataset_sha256,sequences,ade,fde,wde,sim,auc_judd,nss\n";
  std::ostringstream summary;
  summary << std::setprecision(10) << "variant,observation_ratio,seeds,median_ade,median_fde,median_wde\n";
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };

  for (double ratio : obs) {
    synth::Dataset ds = data.dataset;
    if (ratio > 0.0) {
      for (auto& s : ds.scenarios) s = synth::reslice(s, ratio);
      ds.config.n_past = ds.scenarios.front().n_past;
      ds.config.n_future = ds.scenarios.front().n_future;
    }
    RunConfig base = rc;
    base.model_overrides["n_past"] = ds.config.n_past;
    base.model_overrides["n_future"] = ds.config.n_future;
    apply_preset(base);
    const auto train = examples(ds, "train", base, false);
    const auto test = examples(ds, base.split, base, base.heavy_only);
    const auto cvh = pipeline::evaluate_constant_velocity(test, base.eval);
    rows << "cvh,," << ratio << ',' << ds.config.n_past << ',' << data.checksum << ',' << test.size() << ','
         << cvh.overall.ade << ',' << cvh.overall.fde << ',' << cvh.overall.wde << ',' << opt(cvh.overall.sim) << ','
         << opt(cvh.overall.auc_judd) << ',' << opt(cvh.overall.nss) << '\n';

    for (const auto& v : rc.variants) {
      RunConfig vc = base;
      merge(vc.model_overrides, variant_overrides(v));
      apply_preset(vc);
      std::vector<double> ade, fde, wde;
      for (auto seed : rc.seeds) {
        vc.train.seed = seed;
        pipeline::Model model(vc.model, seed);
        pipeline::train(model, train, vc.train);
        const auto rep = pipeline::evaluate(model, test, vc.samples, seed, vc.eval);
        ade.push_back(rep.overall.ade);
        fde.push_back(rep.overall.fde);
        wde.push_back(rep.overall.wde);
        rows << v << ',' << seed << ',' << ratio << ',' << ds.config.n_past << ',' << data.checksum << ','
             << test.size() << ',' << rep.overall.ade << ',' << rep.overall.fde << ',' << rep.overall.wde << ','
             << opt(rep.overall.sim) << ',' << opt(rep.overall.auc_judd) << ',' << opt(rep.overall.nss) << '\n';
        std::cout << v << " seed " << seed << " ratio " << ratio << " ADE " << rep.overall.ade << " FDE "
                  << rep.overall.fde << std::endl;
      }
      summary << v << ',' << ratio << ',' << rc.seeds.size() << ',' << median(ade) << ',' << median(fde) << ','
              << median(wde) << '\n';
    }
  }
  write_text(dir / "ablation.csv", rows.str());
  write_text(dir / "ablation_summary.csv", summary.str());
  std::cout << summary.str();
  write_checksums(dir, {dir / "ablation.csv", dir / "ablation_summary.csv"});
  return 0;
}

int cmd_bench_scan(const CommonFlags& f, const std::vector<std::size_t>& lengths, std::size_t channels,
                   std::size_t state, std::size_t chunk, std::size_t repeats) {
  if (lengths.empty() || channels == 0 || state == 0 || chunk == 0 || repeats == 0)
    throw ConfigError("bench-scan: lengths, channels, state, chunk and repeats must be positive");
  std::ostringstream csv;
  csv << std::setprecision(6) << "length,channels,state,chunk,threads,sequential_us,chunked_us,speedup,max_abs_diff\n";
  const auto params = ssm::random_selective_params(channels, state, f.seed.value_or(0));
  for (std::size_t L : lengths) {
    std::mt19937_64 rng(L);
    std::normal_distribution<double> n01;
    std::vector<double> x(L * channels);
    for (auto& v : x) v = n01(rng);
    const std::vector<double> m;
    auto time_it = [&](auto&& fn) {
      std::vector<double> best_out;
      double best = 1e300;
      for (std::size_t r = 0; r < repeats; ++r) {
        auto st = ssm::ScanState::zeros(channels, state);
        const auto t0 = std::chrono::steady_clock::now();
        auto out = fn(st);
        best = std::min(best, std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
        best_out = std::move(out);
      }
      return std::make_pair(best, best_out);
    };
    const auto [seq_us, seq_y] =
        time_it([&](ssm::ScanState& st) { return ssm::selective_scan_sequential(x, m, channels, 0, params, st); });
    const auto [chk_us, chk_y] =
        time_it([&](ssm::ScanState& st) { return ssm::selective_scan_chunked(x, m, channels, 0, params, st, chunk); });
    double diff = 0.0;
    for (std::size_t i = 0; i < seq_y.size(); ++i) diff = std::max(diff, std::abs(seq_y[i] - chk_y[i]));
    csv << L << ',' << channels << ',' << state << ',' << chunk << ',' << omp_get_max_threads() << ',' << seq_us << ','
        << chk_us << ',' << seq_us / chk_us << ',' << diff << '\n';
  }
  if (f.out.empty()) {
    std::cout << csv.str();
  } else {
    if (fs::exists(f.out) && !f.force) throw IoError(f.out + " exists (use --force to overwrite)");
    write_text(f.out, csv.str());
    std::cout << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-aware latent diffusion for egocentric hand trajectory prediction"};
  app.require_subcommand(1);
  CommonFlags f;

  auto add_common = [&](CLI::App* sub, bool needs_data, bool needs_out) {
    sub->add_option("-c,--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    auto* o = sub->add_option("-o,--out", f.out, "output path");
    if (needs_out) o->required();
    if (needs_data) sub->add_option("-d,--data", f.data, "dataset (JSON Lines)")->required();
    sub->add_flag("--force", f.force, "overwrite existing outputs");
    sub->add_option("--seed", f.seed, "seed");
  };

  std::size_t n_train = 2000, n_val = 200, n_test = 500;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, false, true);
  gen->add_option("--train", n_train, "training scenarios");
  gen->add_option("--val", n_val, "validation scenarios");
  gen->add_option("--test", n_test, "test scenarios");

  std::vector<std::string> ablate_flags, weight_flags;
  std::optional<std::size_t> epochs, samples;
  std::string resume, checkpoint, split;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, true, true);
  train->add_option("--preset", f.preset, "toy or paper");
  train->add_option("--ablate", ablate_flags, "structural flags, e.g. motion:none scan:bidirectional cdc:off blocks:4");
  train->add_option("--weights", weight_flags, "loss-weight overrides, e.g. angle=0 len=0")->delimiter(',');
  train->add_option("--epochs", epochs, "epochs (overrides the preset)");
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  std::vector<std::string> ids;
  auto* predict = app.add_subcommand("predict", "sample future trajectories");
  add_common(predict, true, true);
  predict->add_option("--checkpoint", checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("-M,--samples", samples, "samples per sequence (default 10)");
  predict->add_option("--split", split, "dataset split (default test)");
  predict->add_option("--ids", ids, "restrict to these scenario ids")->delimiter(',');

  bool heavy_only = false;
  std::size_t render = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against the constant-velocity baseline");
  add_common(eval, true, true);
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("-M,--samples", samples, "samples per sequence (default 10)");
  eval->add_option("--split", split, "dataset split (default test)");
  eval->add_flag("--heavy-only", heavy_only, "only egomotion-heavy scenarios");
  eval->add_option("--render", render, "write affordance maps (PGM) for the first N sequences");

  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<double> ratios;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate variants with shared seeds");
  add_common(ablate, true, true);
  ablate->add_option("--preset", f.preset, "toy or paper");
  ablate->add_option("--variants", variants, "full, v1..v4, no-cdc, neither, only-angle, only-length, blocks=N")
      ->delimiter(',');
  ablate->add_option("--seeds", seeds, "training and sampling seeds")->delimiter(',');
  ablate->add_option("--observation-ratios", ratios, "re-slice the dataset at these ratios")->delimiter(',');
  ablate->add_option("--epochs", epochs, "epochs (overrides the preset)");
  ablate->add_option("-M,--samples", samples, "samples per sequence (default 10)");
  ablate->add_flag("--heavy-only", heavy_only, "evaluate on egomotion-heavy scenarios only");

  std::vector<std::size_t> lengths{64, 256, 1024, 4096};
  std::size_t channels = 64, state = 16, chunk = 64, repeats = 5;
  auto* bench = app.add_subcommand("bench-scan", "time the sequential and chunked selective scans (CSV)");
  bench->add_option("-o,--out", f.out, "CSV path (default stdout only)");
  bench->add_flag("--force", f.force, "overwrite existing outputs");
  bench->add_option("--seed", f.seed, "parameter seed");
  bench->add_option("--lengths", lengths, "sequence lengths")->delimiter(',');
  bench->add_option("--channels", channels, "scan channels");
  bench->add_option("--state", state, "state size");
  bench->add_option("--chunk", chunk, "chunk length");
  bench->add_option("--repeats", repeats, "timing repeats (best is kept)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(f, n_train, n_val, n_test);
    if (*train) return cmd_train(f, ablate_flags, weight_flags, epochs, resume);
    if (*predict) return cmd_predict(f, checkpoint, samples, split, ids);
    if (*eval) return cmd_eval(f, checkpoint, samples, split, heavy_only, render);
    if (*ablate) return cmd_ablate(f, variants, seeds, ratios, epochs, samples, heavy_only);
    if (*bench) return cmd_bench_scan(f, lengths, channels, state, chunk, repeats);
  } catch (const pipeline::NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << " (term: " << e.term << ")\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const pipeline::CheckpointError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
