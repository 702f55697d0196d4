// salref: refines 3D lesion detections by classifying TP vs FP candidates
// from radiomic features of instance-level saliency maps.
//
// Pipeline: synth -> train-scorer -> saliency -> features -> train-lr ->
// refine (plus shift and report). Every stage is deterministic given the
// config and seeds, writes only into the configured output directory, and
// records a manifest (config snapshot, input hashes).

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "salref/eval.hpp"
#include "salref/instances.hpp"
#include "salref/nifti.hpp"
#include "salref/radiomics.hpp"
#include "salref/refine.hpp"
#include "salref/rng.hpp"
#include "salref/saliency.hpp"
#include "salref/synth.hpp"
#include "salref/tinynet.hpp"
#include "salref/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace salref;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config

json default_config() {
  return json{
      {"out_dir", "out"},
      {"seed", 1234},
      {"workers", 0},  // 0 = available parallelism
      {"phantoms",
       {{"count", 12},
        {"dims", {32, 32, 32}},
        {"n_lesions", 6},
        {"n_decoys", 6},
        {"radius_min", 2.0},
        {"radius_max", 3.5},
        {"lesion_offset", 3.0},
        {"secondary_offset", 1.0},
        {"noise_std", 1.0},
        {"channels", 2},
        {"decoy_offset_scale", 0.45},
        {"train_fraction", 0.5}}},
      {"scorer", {{"epochs", 120}, {"lr", 0.05}, {"grad_target", "sigmoid"}}},
      {"saliency", {{"n_samples", 50}, {"sigma", 0.05}, {"channel", 0}}},
      {"features", {{"dilation_radius", 1}, {"bin_width", 10.0}}},
      {"lr",
       {{"lambda", 1.0},
        {"class_weight_tp", 0.29},
        {"class_weight_fp", 0.71},
        {"max_iter", 10000},
        {"tol", 1e-6},
        {"threshold", 0.5}}},
      {"bootstrap", {{"b", 1000}, {"alpha", 0.05}}},
  };
}

void merge_into(json& base, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

// Applies `--set a.b.c=value` overrides; values parse as JSON when possible,
// else as strings.
void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) {
    throw ValidationError("--set expects key=value, got: " + kv);
  }
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part, prev;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ValidationError("--set: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &((*node)[parts[i]]);
  }
  (*node)[parts.back()] = value;
}

void collect_unknown_keys(const json& cfg, const json& ref,
                          const std::string& prefix,
                          std::vector<std::string>& errors) {
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!ref.contains(it.key())) {
      errors.push_back(path + ": unknown config key");
    } else if (it->is_object() && ref[it.key()].is_object()) {
      collect_unknown_keys(*it, ref[it.key()], path, errors);
    }
  }
}

void validate_config(const json& cfg) {
  std::vector<std::string> errors;
  collect_unknown_keys(cfg, default_config(), "", errors);
  auto need_pos_int = [&](const char* section, const char* key) {
    if (!cfg.contains(section) || !cfg[section].contains(key) ||
        !cfg[section][key].is_number() || cfg[section][key].get<double>() < 1) {
      errors.push_back(std::string(section) + "." + key + ": positive number required");
    }
  };
  need_pos_int("phantoms", "count");
  need_pos_int("saliency", "n_samples");
  need_pos_int("lr", "max_iter");
  need_pos_int("bootstrap", "b");
  if (cfg["saliency"]["sigma"].get<double>() < 0.0) {
    errors.push_back("saliency.sigma: must be >= 0");
  }
  if (cfg["features"]["bin_width"].get<double>() <= 0.0) {
    errors.push_back("features.bin_width: must be > 0");
  }
  const double alpha = cfg["bootstrap"]["alpha"].get<double>();
  if (alpha <= 0.0 || alpha >= 1.0) {
    errors.push_back("bootstrap.alpha: must be in (0, 1)");
  }
  const double tf = cfg["phantoms"]["train_fraction"].get<double>();
  if (tf <= 0.0 || tf >= 1.0) {
    errors.push_back("phantoms.train_fraction: must be in (0, 1)");
  }
  if (!errors.empty()) {
    std::string msg = "config validation failed:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

struct CliState {
  json cfg = default_config();
  std::string config_path;
  std::vector<std::string> overrides;
  int seed_override = -1;
  int workers_override = -1;
  std::string out_override;

  void finalize() {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ValidationError("cannot open config file: " + config_path);
      json user;
      try {
        in >> user;
      } catch (const json::exception& e) {
        throw FormatError("bad config JSON: " + std::string(e.what()));
      }
      merge_into(cfg, user);
    }
    for (const std::string& kv : overrides) apply_override(cfg, kv);
    if (seed_override >= 0) cfg["seed"] = seed_override;
    if (workers_override >= 0) cfg["workers"] = workers_override;
    if (!out_override.empty()) cfg["out_dir"] = out_override;
    validate_config(cfg);
  }

  fs::path out_dir() const { return fs::path(cfg["out_dir"].get<std::string>()); }
  std::uint64_t seed() const { return cfg["seed"].get<std::uint64_t>(); }
  int workers() const {
    int w = cfg["workers"].get<int>();
    if (w <= 0) w = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(1, w);
  }
  PhantomSpec phantom_spec(int case_index) const {
    const json& p = cfg["phantoms"];
    PhantomSpec spec;
    spec.dims = {p["dims"][0].get<int>(), p["dims"][1].get<int>(),
                 p["dims"][2].get<int>()};
    spec.n_lesions = p["n_lesions"].get<int>();
    spec.radius_min = p["radius_min"].get<double>();
    spec.radius_max = p["radius_max"].get<double>();
    spec.lesion_offset = p["lesion_offset"].get<double>();
    spec.secondary_offset = p["secondary_offset"].get<double>();
    spec.noise_std = p["noise_std"].get<double>();
    spec.channels = p["channels"].get<int>();
    spec.decoy_offset_scale = p["decoy_offset_scale"].get<double>();
    spec.seed = derive_seed(seed(), 0x100000 + case_index);
    return spec;
  }
};

// ---------------------------------------------------------------------------
// Manifests

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void write_manifest(const CliState& st, const std::string& stage,
                    const std::vector<fs::path>& inputs) {
  json m = {{"stage", stage}, {"version", kVersion}, {"config", st.cfg}};
  json hashes = json::object();
  for (const fs::path& p : inputs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_file(p)));
    hashes[p.filename().string()] = buf;
  }
  m["input_hashes"] = hashes;
  std::ofstream out(st.out_dir() / ("manifest_" + stage + ".json"),
                    std::ios::trunc);
  out << m.dump(2) << "\n";
}

void require_file(const fs::path& p, const std::string& stage_hint) {
  if (!fs::exists(p)) {
    throw ValidationError("missing prerequisite " + p.string() + "; run `salref " +
                          stage_hint + "` first");
  }
}

// ---------------------------------------------------------------------------
// Case bookkeeping

struct CaseRef {
  int index = 0;
  std::string name;  // "case_03"
  bool train = false;
};

std::vector<CaseRef> load_cases(const CliState& st) {
  const fs::path manifest = st.out_dir() / "phantoms" / "manifest.json";
  require_file(manifest, "synth");
  std::ifstream in(manifest);
  json m;
  in >> m;
  std::vector<CaseRef> cases;
  for (const json& c : m["cases"]) {
    cases.push_back({c["index"].get<int>(), c["name"].get<std::string>(),
                     c["train"].get<bool>()});
  }
  return cases;
}

VolumeStack load_case_stack(const CliState& st, const CaseRef& c,
                            bool standardized) {
  const int channels = st.cfg["phantoms"]["channels"].get<int>();
  const fs::path dir = st.out_dir() / "phantoms";
  VolumeStack stack;
  for (int ch = 0; ch < channels; ++ch) {
    const fs::path p = dir / (c.name + "_img_c" + std::to_string(ch) + ".nii");
    require_file(p, "synth");
    Volume3D v = read_volume(p);
    if (standardized) v = zscore(v);
    if (ch == 0) stack = VolumeStack(v.dims, channels);
    stack.set_channel(ch, v);
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Stages

void cmd_synth(const CliState& st) {
  const fs::path dir = st.out_dir() / "phantoms";
  fs::create_directories(dir);
  const int count = st.cfg["phantoms"]["count"].get<int>();
  const int n_decoys = st.cfg["phantoms"]["n_decoys"].get<int>();
  const double train_fraction =
      st.cfg["phantoms"]["train_fraction"].get<double>();
  const int n_train = std::max(1, static_cast<int>(count * train_fraction));

  json cases = json::array();
  std::vector<fs::path> written;
  for (int i = 0; i < count; ++i) {
    const PhantomSpec spec = st.phantom_spec(i);
    Phantom ph = generate_phantom(spec);
    LabelMap pred = generate_candidates(
        ph.gt, n_decoys, spec, derive_seed(st.seed(), 0x200000 + i), &ph.stack);

    char name[32];
    std::snprintf(name, sizeof(name), "case_%02d", i);
    for (int ch = 0; ch < spec.channels; ++ch) {
      const fs::path p = dir / (std::string(name) + "_img_c" +
                                std::to_string(ch) + ".nii");
      write_nifti(ph.stack.extract_channel(ch), p);
      written.push_back(p);
    }
    const fs::path gt_path = dir / (std::string(name) + "_gt.nii");
    const fs::path pred_path = dir / (std::string(name) + "_pred.nii");
    write_nifti(ph.gt, gt_path);
    write_nifti(pred, pred_path);
    written.push_back(gt_path);
    written.push_back(pred_path);

    cases.push_back({{"index", i},
                     {"name", name},
                     {"train", i < n_train},
                     {"seed", spec.seed},
                     {"n_lesions", spec.n_lesions},
                     {"n_decoys", n_decoys}});
  }

  json manifest = {{"cases", cases}, {"version", kVersion}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  write_manifest(st, "synth", {});
  std::cout << "synth: wrote " << count << " phantom cases to " << dir << "\n";
}

void cmd_train_scorer(const CliState& st) {
  const std::vector<CaseRef> cases = load_cases(st);
  std::vector<TrainSample> dataset;
  std::vector<fs::path> inputs;
  for (const CaseRef& c : cases) {
    if (!c.train) continue;
    TrainSample s;
    s.input = load_case_stack(st, c, /*standardized=*/true);
    const fs::path gt_path = st.out_dir() / "phantoms" / (c.name + "_gt.nii");
    LabelMap gt = read_labels(gt_path);
    s.target = BinaryMask(gt.dims);
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      s.target.bits[i] = gt.labels[i] > 0;
    }
    dataset.push_back(std::move(s));
    inputs.push_back(gt_path);
  }
  if (dataset.empty()) throw ValidationError("train-scorer: no training cases");

  const int channels = st.cfg["phantoms"]["channels"].get<int>();
  TinyNetParams params = init_tinynet(channels, derive_seed(st.seed(), 0xA11CE));
  const int epochs = st.cfg["scorer"]["epochs"].get<int>();
  const double lr = st.cfg["scorer"]["lr"].get<double>();
  TrainResult result = train_tiny(params, dataset, epochs, lr, st.seed());

  const fs::path path = st.out_dir() / "scorer.bin";
  save_tinynet(result.params, path);
  write_manifest(st, "train-scorer", inputs);
  std::cout << "train-scorer: " << dataset.size() << " cases, " << epochs
            << " epochs, final loss "
            << (result.loss_per_epoch.empty() ? 0.0 : result.loss_per_epoch.back())
            << ", params -> " << path << "\n";
}

TinyNet load_scorer(const CliState& st) {
  const fs::path path = st.out_dir() / "scorer.bin";
  require_file(path, "train-scorer");
  const std::string target = st.cfg["scorer"]["grad_target"].get<std::string>();
  return TinyNet(load_tinynet(path), target == "logit"
                                         ? TinyNet::GradTarget::kLogit
                                         : TinyNet::GradTarget::kSigmoid);
}

void cmd_saliency(const CliState& st) {
  const std::vector<CaseRef> cases = load_cases(st);
  const TinyNet scorer = load_scorer(st);
  const fs::path dir = st.out_dir() / "saliency";
  fs::create_directories(dir);

  SaliencyConfig cfg;
  cfg.n_samples = st.cfg["saliency"]["n_samples"].get<int>();
  cfg.noise_sigma = st.cfg["saliency"]["sigma"].get<double>();
  cfg.channel = st.cfg["saliency"]["channel"].get<int>();

  json manifest_entries = json::array();
  int total = 0, failed = 0;
  for (const CaseRef& c : cases) {
    VolumeStack stack = load_case_stack(st, c, /*standardized=*/true);
    LabelMap pred = read_labels(st.out_dir() / "phantoms" / (c.name + "_pred.nii"));
    LabelMap gt = read_labels(st.out_dir() / "phantoms" / (c.name + "_gt.nii"));
    const MatchResult match = match_lesions(pred, gt);
    std::vector<LesionInstance> instances = instances_from_labels(pred);
    if (instances.empty()) continue;

    SaliencyConfig case_cfg = cfg;
    case_cfg.seed = derive_seed(st.seed(), 0x300000 + c.index);
    const std::vector<BatchEntry> batch =
        saliency_batch(scorer, stack, instances, case_cfg, st.workers());

    for (std::size_t i = 0; i < batch.size(); ++i) {
      const BatchEntry& e = batch[i];
      ++total;
      if (!e.map) {
        ++failed;
        std::cerr << "warning: saliency failed for " << c.name << " lesion "
                  << e.lesion_id << ": " << e.error << "\n";
        continue;
      }
      const std::string fname =
          c.name + "_" + std::to_string(e.lesion_id) + "_sal.nii";
      write_nifti(e.map->map, dir / fname);
      manifest_entries.push_back(
          {{"patient", c.name},
           {"lesion_id", e.lesion_id},
           {"group", match.is_tp(e.lesion_id) ? "TP" : "FP"},
           {"cardinality", instances[i].cardinality},
           {"seed", e.map->config.seed},
           {"train", c.train},
           {"file", fname}});
    }
  }

  json manifest = {{"maps", manifest_entries},
                   {"config",
                    {{"n_samples", cfg.n_samples},
                     {"sigma", cfg.noise_sigma},
                     {"channel", cfg.channel}}}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  write_manifest(st, "saliency", {st.out_dir() / "scorer.bin"});
  std::cout << "saliency: " << (total - failed) << "/" << total
            << " maps written to " << dir << "\n";
}

void cmd_features(const CliState& st) {
  const fs::path sal_dir = st.out_dir() / "saliency";
  const fs::path sal_manifest = sal_dir / "manifest.json";
  require_file(sal_manifest, "saliency");
  json manifest;
  {
    std::ifstream in(sal_manifest);
    in >> manifest;
  }

  ExtractionOptions opts;
  opts.dilation_radius = st.cfg["features"]["dilation_radius"].get<int>();
  opts.bin_width = st.cfg["features"]["bin_width"].get<double>();

  struct Task {
    std::string patient, group, file;
    int lesion_id;
    bool train;
  };
  std::vector<Task> tasks;
  for (const json& e : manifest["maps"]) {
    tasks.push_back({e["patient"].get<std::string>(), e["group"].get<std::string>(),
                     e["file"].get<std::string>(), e["lesion_id"].get<int>(),
                     e["train"].get<bool>()});
  }

  // Predicted-instance voxel sets, cached per case.
  std::map<std::string, std::vector<LesionInstance>> case_instances;
  for (const Task& t : tasks) {
    if (!case_instances.count(t.patient)) {
      LabelMap pred =
          read_labels(st.out_dir() / "phantoms" / (t.patient + "_pred.nii"));
      case_instances[t.patient] = instances_from_labels(pred);
    }
  }

  std::vector<FeatureVector> rows(tasks.size());
  std::vector<char> warned(tasks.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) break;
      const Task& t = tasks[i];
      SaliencyMap sal;
      sal.map = read_volume(sal_dir / t.file);
      sal.lesion_id = t.lesion_id;
      const auto& instances = case_instances.at(t.patient);
      const auto it = std::find_if(
          instances.begin(), instances.end(),
          [&](const LesionInstance& li) { return li.id == t.lesion_id; });
      if (it == instances.end()) {
        throw ValidationError("features: lesion " + std::to_string(t.lesion_id) +
                              " not found in " + t.patient);
      }
      ExtractionOutcome out = extract_all(sal, *it, opts);
      out.vector.patient = t.patient;
      out.vector.group = t.group;
      rows[i] = std::move(out.vector);
      warned[i] = out.low_level_warning;
    }
  };
  {
    std::vector<std::thread> pool;
    const int w = st.workers();
    for (int k = 0; k < w; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  int low_level = 0, incomplete = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    low_level += warned[i] != 0;
    if (!rows[i].complete) {
      ++incomplete;
      std::cerr << "warning: features incomplete for " << rows[i].patient
                << " lesion " << rows[i].lesion_id << ": "
                << rows[i].exclusion_reason << "\n";
    }
  }
  if (low_level > 0) {
    std::cerr << "WARNING: " << low_level << "/" << rows.size()
              << " ROIs discretized to fewer than 8 gray levels at bin_width="
              << opts.bin_width
              << "; texture features may be degenerate. Consider a smaller "
                 "features.bin_width for standardized maps.\n";
  }

  std::vector<FeatureVector> train_rows, test_rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].complete) continue;
    (tasks[i].train ? train_rows : test_rows).push_back(rows[i]);
  }
  // Deterministic order: by patient then lesion id (tasks already sorted by
  // manifest order, which is case then id).
  {
    std::ofstream out(st.out_dir() / "features_train.csv", std::ios::trunc);
    out << features_csv(train_rows);
  }
  {
    std::ofstream out(st.out_dir() / "features_test.csv", std::ios::trunc);
    out << features_csv(test_rows);
  }
  write_manifest(st, "features", {sal_manifest});
  std::cout << "features: " << train_rows.size() << " train / "
            << test_rows.size() << " test rows (" << incomplete
            << " excluded)\n";
}

Matrix to_matrix(const std::vector<FeatureVector>& rows) {
  Matrix x(rows.size(), kFeatureCount);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < kFeatureCount; ++c) x.at(r, c) = rows[r].values[c];
  }
  return x;
}

void cmd_train_lr(const CliState& st) {
  const fs::path csv_path = st.out_dir() / "features_train.csv";
  require_file(csv_path, "features");
  std::ifstream in(csv_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::vector<FeatureVector> rows = parse_features_csv(ss.str());
  if (rows.empty()) throw ValidationError("train-lr: empty training CSV");

  Matrix x_raw = to_matrix(rows);
  std::vector<int> y;
  for (const FeatureVector& r : rows) y.push_back(r.group == "TP" ? 1 : 0);

  Standardizer std_ = fit_standardizer(x_raw);
  if (!std_.dropped.empty()) {
    std::cerr << "warning: " << std_.dropped.size()
              << " zero-variance feature(s) dropped\n";
  }
  Matrix x = apply_standardizer(std_, x_raw);

  const json& lrc = st.cfg["lr"];
  LRModel model = train_lr(x, y, lrc["lambda"].get<double>(),
                           {lrc["class_weight_tp"].get<double>(),
                            lrc["class_weight_fp"].get<double>()},
                           lrc["max_iter"].get<int>(), lrc["tol"].get<double>());
  model.standardizer = std_;
  model.threshold = lrc["threshold"].get<double>();
  if (!model.converged) {
    std::cerr << "warning: LR did not converge within max_iter\n";
  }

  const fs::path model_path = st.out_dir() / "model.json";
  save_lr_model(model, model_path);

  // Normalized coefficient importances, largest first.
  try {
    const std::vector<double> imp = feature_importance(model);
    std::vector<int> order(imp.size());
    for (std::size_t i = 0; i < imp.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return std::abs(imp[a]) > std::abs(imp[b]);
    });
    json ranked = json::array();
    for (int i : order) {
      if (imp[i] == 0.0) continue;
      ranked.push_back({{"feature", feature_names()[i]}, {"coefficient", imp[i]}});
    }
    std::ofstream out(st.out_dir() / "importance.json", std::ios::trunc);
    out << ranked.dump(2) << "\n";
  } catch (const ValidationError&) {
    std::cerr << "warning: all weights zero, no importances written\n";
  }

  write_manifest(st, "train-lr", {csv_path});
  std::cout << "train-lr: " << rows.size() << " rows, objective "
            << model.final_objective << ", model -> " << model_path << "\n";
}

void cmd_refine(const CliState& st) {
  const fs::path model_path = st.out_dir() / "model.json";
  require_file(model_path, "train-lr");
  const LRModel model = load_lr_model(model_path);

  const fs::path csv_path = st.out_dir() / "features_test.csv";
  require_file(csv_path, "features");
  std::ifstream in(csv_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::vector<FeatureVector> rows = parse_features_csv(ss.str());

  const std::vector<CaseRef> cases = load_cases(st);
  const double threshold = st.cfg["lr"]["threshold"].get<double>();

  int base_tp = 0, base_fp = 0, base_fn = 0;
  RefinedConfusion total;
  std::vector<LesionRecord> records;
  for (const CaseRef& c : cases) {
    if (c.train) continue;
    LabelMap pred = read_labels(st.out_dir() / "phantoms" / (c.name + "_pred.nii"));
    LabelMap gt = read_labels(st.out_dir() / "phantoms" / (c.name + "_gt.nii"));
    const MatchResult match = match_lesions(pred, gt);
    base_tp += match.n_tp;
    base_fp += match.n_fp;
    base_fn += match.n_fn;

    std::vector<FeatureVector> case_rows;
    for (const FeatureVector& r : rows) {
      if (r.patient == c.name) case_rows.push_back(r);
    }
    const RefinedConfusion rc =
        refine_predictions(match, case_rows, model, threshold);
    total.kept_tp += rc.kept_tp;
    total.kept_fp += rc.kept_fp;
    total.rejected_tp += rc.rejected_tp;
    total.rejected_fp += rc.rejected_fp;
    total.excluded_kept += rc.excluded_kept;

    auto decided = [&](int pred_id) {
      for (const FeatureVector& r : case_rows) {
        if (r.lesion_id == pred_id && r.complete) {
          std::vector<double> x(r.values.begin(), r.values.end());
          return predict_proba(model, x) >= threshold;
        }
      }
      return true;  // fail-open
    };
    for (const auto& [pred_id, gt_ids] : match.tp) {
      records.push_back({LesionRecord::Kind::kTp, decided(pred_id)});
    }
    for (int pred_id : match.fp) {
      records.push_back({LesionRecord::Kind::kFp, decided(pred_id)});
    }
    for (int i = 0; i < match.n_fn; ++i) {
      records.push_back({LesionRecord::Kind::kFn, true});
    }
  }
  total.n_tp = total.kept_tp;
  total.n_fp = total.kept_fp;
  total.n_fn = base_fn + total.rejected_tp;

  const MetricReport report = bootstrap_ci(
      records, st.cfg["bootstrap"]["b"].get<int>(),
      st.cfg["bootstrap"]["alpha"].get<double>(), derive_seed(st.seed(), 0xB007));

  json j = {
      {"baseline",
       {{"n_tp", base_tp},
        {"n_fp", base_fp},
        {"n_fn", base_fn},
        {"f1", f1_score(base_tp, base_fp, base_fn)},
        {"ppv", ppv(base_tp, base_fp)}}},
      {"refined",
       {{"n_tp", report.n_tp},
        {"n_fp", report.n_fp},
        {"n_fn", report.n_fn},
        {"f1", report.f1},
        {"ppv", report.ppv},
        {"kept_tp", total.kept_tp},
        {"kept_fp", total.kept_fp},
        {"rejected_tp", total.rejected_tp},
        {"rejected_fp", total.rejected_fp},
        {"excluded_kept", total.excluded_kept},
        {"f1_ci", {report.f1_bootstrap->ci_low, report.f1_bootstrap->ci_high}},
        {"f1_mean", report.f1_bootstrap->mean},
        {"ppv_ci", {report.ppv_bootstrap->ci_low, report.ppv_bootstrap->ci_high}},
        {"ppv_mean", report.ppv_bootstrap->mean},
        {"bootstrap_b", report.bootstrap_b},
        {"bootstrap_alpha", report.bootstrap_alpha},
        {"skipped_resamples", report.skipped_resamples}}},
  };
  std::ofstream out(st.out_dir() / "refine_report.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  write_manifest(st, "refine", {model_path, csv_path});
  std::cout << "refine: baseline F1 " << j["baseline"]["f1"].get<double>()
            << " -> refined F1 " << report.f1 << " (PPV "
            << j["baseline"]["ppv"].get<double>() << " -> " << report.ppv
            << ")\n";
}

void cmd_shift(const CliState& st) {
  const fs::path sal_dir = st.out_dir() / "saliency";
  const fs::path sal_manifest = sal_dir / "manifest.json";
  require_file(sal_manifest, "saliency");
  json manifest;
  {
    std::ifstream in(sal_manifest);
    in >> manifest;
  }

  GroupedStats train, test;
  std::ostringstream violin;
  violin << "cohort,group,patient,lesion_id,mean,max,min\n";
  for (const json& e : manifest["maps"]) {
    const Volume3D v = read_volume(sal_dir / e["file"].get<std::string>());
    MapStats ms;
    ms.min = ms.max = v.data[0];
    double sum = 0.0;
    for (double x : v.data) {
      sum += x;
      ms.min = std::min(ms.min, x);
      ms.max = std::max(ms.max, x);
    }
    ms.mean = sum / static_cast<double>(v.data.size());
    const std::string group = e["group"].get<std::string>();
    const bool is_train = e["train"].get<bool>();
    (is_train ? train : test)[group].push_back(ms);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", ms.mean, ms.max, ms.min);
    violin << (is_train ? "train" : "test") << "," << group << ","
           << e["patient"].get<std::string>() << "," << e["lesion_id"].get<int>()
           << "," << buf << "\n";
  }

  const ShiftReport report = domain_shift_report(train, test);
  json comparisons = json::array();
  for (const ShiftComparison& c : report.comparisons) {
    json jc = {{"group", c.group},
               {"statistic", c.statistic},
               {"train", {{"n", c.train.n}, {"mean", c.train.mean}, {"std", c.train.std}}},
               {"test", {{"n", c.test.n}, {"mean", c.test.mean}, {"std", c.test.std}}},
               {"within_one_std", c.within_one_std}};
    if (c.test_result) {
      jc["u"] = c.test_result->u_a;
      jc["p_two_sided"] = c.test_result->p_two_sided;
      jc["exact"] = c.test_result->exact;
    }
    comparisons.push_back(jc);
  }
  json j = {{"comparisons", comparisons}, {"warnings", report.warnings}};
  {
    std::ofstream out(st.out_dir() / "shift_report.json", std::ios::trunc);
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(st.out_dir() / "violin.csv", std::ios::trunc);
    out << violin.str();
  }
  for (const std::string& w : report.warnings) {
    std::cerr << "warning: " << w << "\n";
  }
  write_manifest(st, "shift", {sal_manifest});
  std::cout << "shift: " << comparisons.size() << " comparisons -> "
            << (st.out_dir() / "shift_report.json") << "\n";
}

std::string format_table(int tp0, int fp0, int fn0, int tp1, int fp1, int fn1,
                         const json* refined_ci) {
  char buf[256];
  std::ostringstream os;
  os << "                 Baseline       Refined\n";
  std::snprintf(buf, sizeof(buf), "TPs        %12d  %12d\n", tp0, tp1);
  os << buf;
  std::snprintf(buf, sizeof(buf), "FPs        %12d  %12d\n", fp0, fp1);
  os << buf;
  std::snprintf(buf, sizeof(buf), "FNs        %12d  %12d\n", fn0, fn1);
  os << buf;
  const double f10 = f1_score(tp0, fp0, fn0), f11 = f1_score(tp1, fp1, fn1);
  const double p0 = ppv(tp0, fp0), p1 = ppv(tp1, fp1);
  if (refined_ci && refined_ci->contains("f1_ci")) {
    std::snprintf(buf, sizeof(buf), "F1 score   %12.4f  %12.4f [%.4f, %.4f]\n",
                  f10, f11, (*refined_ci)["f1_ci"][0].get<double>(),
                  (*refined_ci)["f1_ci"][1].get<double>());
    os << buf;
    std::snprintf(buf, sizeof(buf), "PPV        %12.4f  %12.4f [%.4f, %.4f]\n",
                  p0, p1, (*refined_ci)["ppv_ci"][0].get<double>(),
                  (*refined_ci)["ppv_ci"][1].get<double>());
    os << buf;
  } else {
    std::snprintf(buf, sizeof(buf), "F1 score   %12.4f  %12.4f\n", f10, f11);
    os << buf;
    std::snprintf(buf, sizeof(buf), "PPV        %12.4f  %12.4f\n", p0, p1);
    os << buf;
  }
  return os.str();
}

void cmd_report(const CliState& st, const std::string& baseline_counts,
                const std::string& refined_counts) {
  auto parse_counts = [](const std::string& s) {
    int tp, fp, fn;
    if (std::sscanf(s.c_str(), "%d,%d,%d", &tp, &fp, &fn) != 3) {
      throw ValidationError("counts must be tp,fp,fn — got: " + s);
    }
    return std::array<int, 3>{tp, fp, fn};
  };

  std::string table;
  if (!baseline_counts.empty() && !refined_counts.empty()) {
    const auto b = parse_counts(baseline_counts);
    const auto r = parse_counts(refined_counts);
    table = format_table(b[0], b[1], b[2], r[0], r[1], r[2], nullptr);
  } else {
    const fs::path path = st.out_dir() / "refine_report.json";
    require_file(path, "refine");
    std::ifstream in(path);
    json j;
    in >> j;
    const json& b = j["baseline"];
    const json& r = j["refined"];
    table = format_table(b["n_tp"].get<int>(), b["n_fp"].get<int>(),
                         b["n_fn"].get<int>(), r["n_tp"].get<int>(),
                         r["n_fp"].get<int>(), r["n_fn"].get<int>(), &r);
  }
  std::cout << table;
  fs::create_directories(st.out_dir());
  std::ofstream out(st.out_dir() / "report.txt", std::ios::trunc);
  out << table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"salref: saliency-map radiomics refinement of 3D lesion detection"};
  app.require_subcommand(1);

  CliState st;
  app.add_option("--config", st.config_path, "JSON config file");
  app.add_option("--set", st.overrides, "override config entries (a.b.c=value)");
  app.add_option("--seed", st.seed_override, "override the base seed");
  app.add_option("--workers", st.workers_override,
                 "worker count (1 = serial reference run)");
  app.add_option("--out", st.out_override, "output directory");

  auto* synth = app.add_subcommand("synth", "generate synthetic phantom cases");
  auto* train_scorer =
      app.add_subcommand("train-scorer", "train the built-in scorer");
  auto* saliency =
      app.add_subcommand("saliency", "generate per-lesion saliency maps");
  auto* features =
      app.add_subcommand("features", "extract radiomic features to CSV");
  auto* train_lr = app.add_subcommand("train-lr", "train the TP/FP classifier");
  auto* refine = app.add_subcommand("refine", "refine detections and report metrics");
  auto* shift = app.add_subcommand("shift", "train/test saliency domain-shift report");
  auto* report = app.add_subcommand("report", "print a comparison table");
  std::string baseline_counts, refined_counts;
  report->add_option("--baseline", baseline_counts, "baseline tp,fp,fn counts");
  report->add_option("--refined", refined_counts, "refined tp,fp,fn counts");

  // global options remain valid after the subcommand name
  for (CLI::App* sub : {synth, train_scorer, saliency, features, train_lr,
                        refine, shift, report}) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    st.finalize();
    fs::create_directories(st.out_dir());
    if (synth->parsed()) cmd_synth(st);
    if (train_scorer->parsed()) cmd_train_scorer(st);
    if (saliency->parsed()) cmd_saliency(st);
    if (features->parsed()) cmd_features(st);
    if (train_lr->parsed()) cmd_train_lr(st);
    if (refine->parsed()) cmd_refine(st);
    if (shift->parsed()) cmd_shift(st);
    if (report->parsed()) cmd_report(st, baseline_counts, refined_counts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
