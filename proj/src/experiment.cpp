#include "tpm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tpm/kernels.hpp"

namespace tpm {

using json = nlohmann::ordered_json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- JSON reading helpers ----

class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  const json& at(const char* key) const {
    if (!obj_.contains(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return obj_.at(key);
  }

  std::uint64_t unsigned_int(const char* key, std::optional<std::uint64_t> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      at(key);
    }
    const json& v = obj_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where_ + "." + key + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  double number(const char* key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      at(key);
    }
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(where_ + "." + key + ": expected a number");
    return v.get<double>();
  }

  std::string string(const char* key, std::optional<std::string> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      at(key);
    }
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(where_ + "." + key + ": expected a string");
    return v.get<std::string>();
  }

  const std::string& where() const { return where_; }

 private:
  const json& obj_;
  std::string where_;
};

DatasetConfig read_dataset(const json& node) {
  const Reader r(node, "dataset");
  r.allow({"name", "format", "width", "height", "train", "valid", "test", "path", "split", "split_seed"});
  DatasetConfig d;
  d.name = r.string("name", d.name);
  try {
    d.format = parse_dataset_format(r.string("format", "csv_labeled"));
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("dataset.format: ") + e.what());
  }
  d.width = r.unsigned_int("width", 0);
  d.height = r.unsigned_int("height", 0);
  if (r.has("path")) {
    if (r.has("train") || r.has("valid") || r.has("test")) {
      throw ConfigError("dataset: give either 'path' or 'train'/'valid'/'test', not both");
    }
    d.path = r.string("path");
    if (r.has("split")) {
      const json& s = r.at("split");
      if (!s.is_array() || s.size() != 3 || !std::all_of(s.begin(), s.end(), [](const json& v) { return v.is_number(); })) {
        throw ConfigError("dataset.split: expected three numbers");
      }
      for (std::size_t i = 0; i < 3; ++i) d.split[i] = s[i].get<double>();
    }
    d.split_seed = r.unsigned_int("split_seed", 0);
  } else {
    if (r.has("split") || r.has("split_seed")) throw ConfigError("dataset: 'split' requires 'path'");
    d.train = r.string("train");
    d.valid = r.string("valid");
    d.test = r.string("test");
  }
  return d;
}

std::variant<SpnModelConfig, MtModelConfig> read_model(const json& node) {
  const Reader r(node, "model");
  r.allow({"spn", "mt"});
  if (r.has("spn") == r.has("mt")) throw ConfigError("model: exactly one of 'spn' or 'mt' is required");
  if (r.has("spn")) {
    const Reader s(r.at("spn"), "model.spn");
    s.allow({"m", "rho", "alpha", "cluster_max_iters", "cluster_restarts", "seed"});
    SpnModelConfig c;
    c.m = s.unsigned_int("m", c.m);
    c.rho = s.number("rho", c.rho);
    c.alpha = s.number("alpha", c.alpha);
    c.cluster_max_iters = s.unsigned_int("cluster_max_iters", c.cluster_max_iters);
    c.cluster_restarts = s.unsigned_int("cluster_restarts", c.cluster_restarts);
    c.seed = s.unsigned_int("seed", c.seed);
    return c;
  }
  const Reader s(r.at("mt"), "model.mt");
  s.allow({"C", "iters", "tol", "alpha", "seed"});
  MtModelConfig c;
  c.components = s.unsigned_int("C", c.components);
  c.iters = s.unsigned_int("iters", c.iters);
  c.tol = s.number("tol", c.tol);
  c.alpha = s.number("alpha", c.alpha);
  c.seed = s.unsigned_int("seed", c.seed);
  return c;
}

EmbeddingConfig read_embedding(const json& node) {
  const Reader r(node, "embedding");
  EmbeddingConfig e;
  const std::string mode = r.string("mode");
  if (mode == "query") {
    r.allow({"mode", "k", "min_side", "max_side", "scale", "seed"});
    e.mode = EmbeddingMode::kQuery;
    e.k = r.unsigned_int("k", e.k);
    e.min_side = r.unsigned_int("min_side", e.min_side);
    e.max_side = r.unsigned_int("max_side", e.max_side);
  } else if (mode == "patch") {
    r.allow({"mode", "s", "d", "stride", "scale", "seed"});
    e.mode = EmbeddingMode::kPatch;
    e.s = r.unsigned_int("s", e.s);
    e.d = r.unsigned_int("d", e.d);
    e.stride = r.unsigned_int("stride", e.stride);
  } else {
    throw ConfigError("embedding.mode: expected 'query' or 'patch'");
  }
  try {
    e.scale = parse_feature_scale(r.string("scale", "log"));
  } catch (const ArgumentError& ex) {
    throw ConfigError(std::string("embedding.scale: ") + ex.what());
  }
  e.seed = r.unsigned_int("seed", e.seed);
  return e;
}

EvalConfig read_eval(const json& node) {
  const Reader r(node, "eval");
  r.allow({"C_grid", "step", "max_iters", "grad_tol"});
  EvalConfig e;
  if (r.has("C_grid")) {
    const json& g = r.at("C_grid");
    if (!g.is_array()) throw ConfigError("eval.C_grid: expected an array of numbers");
    e.c_grid.clear();
    for (const json& v : g) {
      if (!v.is_number()) throw ConfigError("eval.C_grid: expected an array of numbers");
      e.c_grid.push_back(v.get<double>());
    }
  }
  e.step = r.unsigned_int("step", e.step);
  e.max_iters = r.unsigned_int("max_iters", e.max_iters);
  e.grad_tol = r.number("grad_tol", e.grad_tol);
  return e;
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  json d;
  d["name"] = cfg.dataset.name;
  d["format"] = std::string(dataset_format_name(cfg.dataset.format));
  d["width"] = cfg.dataset.width;
  d["height"] = cfg.dataset.height;
  if (cfg.dataset.presplit()) {
    d["train"] = cfg.dataset.train;
    d["valid"] = cfg.dataset.valid;
    d["test"] = cfg.dataset.test;
  } else {
    d["path"] = cfg.dataset.path;
    d["split"] = cfg.dataset.split;
    d["split_seed"] = cfg.dataset.split_seed;
  }
  j["dataset"] = d;
  json m;
  if (const auto* spn = std::get_if<SpnModelConfig>(&cfg.model)) {
    m["spn"] = {{"m", spn->m},
                {"rho", spn->rho},
                {"alpha", spn->alpha},
                {"cluster_max_iters", spn->cluster_max_iters},
                {"cluster_restarts", spn->cluster_restarts},
                {"seed", spn->seed}};
  } else {
    const auto& mt = std::get<MtModelConfig>(cfg.model);
    m["mt"] = {{"C", mt.components}, {"iters", mt.iters}, {"tol", mt.tol}, {"alpha", mt.alpha}, {"seed", mt.seed}};
  }
  j["model"] = m;
  json e;
  const auto& emb = cfg.embedding;
  if (emb.mode == EmbeddingMode::kQuery) {
    e["mode"] = "query";
    e["k"] = emb.k;
    e["min_side"] = emb.min_side;
    e["max_side"] = emb.max_side;
  } else {
    e["mode"] = "patch";
    e["s"] = emb.s;
    e["d"] = emb.d;
    e["stride"] = emb.stride;
  }
  e["scale"] = std::string(feature_scale_name(emb.scale));
  e["seed"] = emb.seed;
  j["embedding"] = e;
  j["eval"] = {{"C_grid", cfg.eval.c_grid},
               {"step", cfg.eval.step},
               {"max_iters", cfg.eval.max_iters},
               {"grad_tol", cfg.eval.grad_tol}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

std::uint64_t model_seed(const ExperimentConfig& cfg) {
  return std::visit([](const auto& m) { return m.seed; }, cfg.model);
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const Reader r(root, "config");
  r.allow({"dataset", "model", "embedding", "eval", "output_dir"});
  ExperimentConfig cfg;
  try {
    cfg.dataset = read_dataset(r.at("dataset"));
    cfg.model = read_model(r.at("model"));
    cfg.embedding = read_embedding(r.at("embedding"));
    cfg.eval = r.has("eval") ? read_eval(r.at("eval")) : EvalConfig{};
    cfg.output_dir = r.string("output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(text);
  const auto base = path.parent_path();
  auto resolve = [&base](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.dataset.train);
  resolve(cfg.dataset.valid);
  resolve(cfg.dataset.test);
  resolve(cfg.dataset.path);
  resolve(cfg.output_dir);
  return cfg;
}

std::string serialize_experiment_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

void override_seeds(ExperimentConfig& cfg, std::uint64_t seed) {
  std::visit([seed](auto& m) { m.seed = seed; }, cfg.model);
  cfg.embedding.seed = seed;
  cfg.dataset.split_seed = seed;
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  if ((d.width == 0) != (d.height == 0)) throw ConfigError("dataset: width and height must be given together");
  if (!d.presplit()) {
    const double total = d.split[0] + d.split[1] + d.split[2];
    if (std::any_of(d.split.begin(), d.split.end(), [](double f) { return !(f > 0.0); }) ||
        std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("dataset.split: fractions must be positive and sum to 1");
    }
  }
  if (const auto* spn = std::get_if<SpnModelConfig>(&cfg.model)) {
    if (spn->m < 1 || !(spn->rho > 0.0) || !(spn->alpha >= 0.0) || spn->cluster_max_iters < 1 ||
        spn->cluster_restarts < 1) {
      throw ConfigError("model.spn: need m >= 1, rho > 0, alpha >= 0, positive cluster settings");
    }
  } else {
    const auto& mt = std::get<MtModelConfig>(cfg.model);
    if (mt.components < 1 || mt.iters < 1 || !(mt.tol >= 0.0) || !(mt.alpha >= 0.0)) {
      throw ConfigError("model.mt: need C >= 1, iters >= 1, tol >= 0, alpha >= 0");
    }
  }
  const auto& e = cfg.embedding;
  if (e.mode == EmbeddingMode::kQuery) {
    if (d.width == 0) throw ConfigError("embedding: query mode needs dataset width/height");
    if (e.min_side < 1 || e.min_side > e.max_side || e.max_side > std::min(d.width, d.height)) {
      throw ConfigError("embedding: need 1 <= min_side <= max_side <= min(width, height)");
    }
  } else if (e.s < 1 || e.d < 1 || e.stride < 1) {
    throw ConfigError("embedding: patch mode needs s, d, stride >= 1");
  }
  if (cfg.eval.c_grid.empty() ||
      std::any_of(cfg.eval.c_grid.begin(), cfg.eval.c_grid.end(), [](double c) { return !(c > 0.0); })) {
    throw ConfigError("eval.C_grid: needs at least one positive value");
  }
  if (cfg.eval.step < 1 || cfg.eval.max_iters < 1 || !(cfg.eval.grad_tol > 0.0)) {
    throw ConfigError("eval: need step >= 1, max_iters >= 1, grad_tol > 0");
  }
}

std::string artifact::embedding(std::string_view split) { return "embed." + std::string(split) + ".csv"; }

std::unique_ptr<MarginalEvaluator> load_model(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::size_t start = text.find_first_not_of(" \t\r\n");
  if (start != std::string::npos && text.compare(start, 3, "MT ") == 0) {
    return std::make_unique<MixtureOfTrees>(parse_mixture(text));
  }
  return std::make_unique<Spn>(parse_spn(text));
}

namespace {

class Run {
 public:
  Run(const ExperimentConfig& cfg, const RunOptions& options, std::filesystem::path out)
      : cfg_(cfg), options_(options), out_(std::move(out)) {}

  void stage(const std::string& name) {
    if (name == "fit") return fit();
    if (name == "genqueries") return genqueries();
    if (name == "embed") return embed();
    if (name == "eval") return evaluate();
  }

  std::vector<std::filesystem::path>& written() { return written_; }
  std::optional<CurveResult>& curve() { return curve_; }
  json& notes() { return notes_; }

 private:
  std::filesystem::path path(const std::string& name) const { return out_ / name; }

  void emit(const std::string& name, const std::string& text) {
    write_file(path(name), text);
    if (std::find(written_.begin(), written_.end(), path(name)) == written_.end()) written_.push_back(path(name));
  }

  BinaryDataset with_geometry(BinaryDataset ds) const {
    if (cfg_.dataset.width > 0) return ds.with_geometry({cfg_.dataset.width, cfg_.dataset.height});
    return ds;
  }

  // Split files live either where the config points or, for single-file
  // datasets, in the output directory (written by the fit stage).
  DatasetSplits splits(bool write_generated) {
    const auto& d = cfg_.dataset;
    if (d.presplit()) {
      return {with_geometry(load_binary_dataset(d.train, d.format).with_split_tag(SplitTag::kTrain)),
              with_geometry(load_binary_dataset(d.valid, d.format).with_split_tag(SplitTag::kValid)),
              with_geometry(load_binary_dataset(d.test, d.format).with_split_tag(SplitTag::kTest))};
    }
    if (write_generated) {
      const BinaryDataset all = load_binary_dataset(d.path, d.format).with_name(d.name);
      DatasetSplits parts = split_dataset(all, d.split, d.split_seed);
      emit(d.name + ".train.csv", format_binary_dataset(parts.train));
      emit(d.name + ".valid.csv", format_binary_dataset(parts.valid));
      emit(d.name + ".test.csv", format_binary_dataset(parts.test));
      return {with_geometry(parts.train), with_geometry(parts.valid), with_geometry(parts.test)};
    }
    return {with_geometry(load_binary_dataset(path(d.name + ".train.csv"), d.format).with_split_tag(SplitTag::kTrain)),
            with_geometry(load_binary_dataset(path(d.name + ".valid.csv"), d.format).with_split_tag(SplitTag::kValid)),
            with_geometry(load_binary_dataset(path(d.name + ".test.csv"), d.format).with_split_tag(SplitTag::kTest))};
  }

  void fit() {
    const DatasetSplits parts = splits(true);
    BinaryDataset data = parts.train;
    if (cfg_.embedding.mode == EmbeddingMode::kPatch) {
      data = extract_random_patches(parts.train, cfg_.embedding.s, cfg_.embedding.d, cfg_.embedding.seed);
      emit(artifact::kPatches, format_binary_dataset(data));
    }
    std::ostringstream log;
    if (const auto* spn = std::get_if<SpnModelConfig>(&cfg_.model)) {
      LearnSpnParams params;
      params.m_min_instances = spn->m;
      params.rho = spn->rho;
      params.alpha = spn->alpha;
      params.cluster_max_iters = spn->cluster_max_iters;
      params.cluster_restarts = spn->cluster_restarts;
      params.seed = spn->seed;
      const Spn model = learn_spn_b(data, params, &log);
      emit(artifact::kModel, format_spn(model));
      notes_["model_nodes"] = model.num_nodes();
    } else {
      const auto& mt = std::get<MtModelConfig>(cfg_.model);
      MixtureEmOptions opts;
      opts.components = mt.components;
      opts.max_iters = mt.iters;
      opts.tol = mt.tol;
      opts.alpha = mt.alpha;
      opts.seed = mt.seed;
      opts.workers = options_.workers;
      const MixtureEmResult fit = fit_mixture_em(data, opts, &log);
      emit(artifact::kModel, format_mixture(fit.model));
      notes_["em_iterations"] = fit.log_likelihoods.size();
      notes_["em_stopped_on_decrease"] = fit.stopped_on_decrease;
    }
    emit(artifact::kFitLog, log.str());
  }

  void genqueries() {
    if (cfg_.embedding.mode != EmbeddingMode::kQuery) return;
    const auto& e = cfg_.embedding;
    const QuerySet qs = gen_rect_queries({cfg_.dataset.width, cfg_.dataset.height}, e.k, e.min_side, e.max_side, e.seed);
    emit(artifact::kQueries, format_query_set(qs));
  }

  void embed() {
    const DatasetSplits parts = splits(false);
    const std::string model_text = read_file(path(artifact::kModel));
    const auto model = load_model(path(artifact::kModel));
    EmbedOptions opts;
    opts.scale = cfg_.embedding.scale;
    opts.workers = options_.workers;
    opts.provenance.model_id = model->kind() + ":" + fnv1a_hex(model_text);
    opts.provenance.seed = cfg_.embedding.seed;
    const std::array<std::pair<const char*, const BinaryDataset*>, 3> named{
        {{"train", &parts.train}, {"valid", &parts.valid}, {"test", &parts.test}}};
    if (cfg_.embedding.mode == EmbeddingMode::kQuery) {
      const std::string qs_text = read_file(path(artifact::kQueries));
      QuerySet qs = parse_query_set(qs_text);
      opts.provenance.source_id = "queries:" + fnv1a_hex(qs_text);
      for (const auto& [split, ds] : named) {
        const EmbeddingMatrix e = rand_query_embedding(*model, *ds, qs, opts);
        emit_embedding(split, e, &qs);
      }
    } else {
      opts.provenance.source_id = "patch-model:" + fnv1a_hex(model_text);
      for (const auto& [split, ds] : named) {
        const EmbeddingMatrix e = rand_patch_embedding(*model, *ds, cfg_.embedding.d, cfg_.embedding.stride, opts);
        emit_embedding(split, e, nullptr);
      }
    }
  }

  void emit_embedding(const std::string& split, const EmbeddingMatrix& e, const QuerySet* qs) {
    const auto csv = path(artifact::embedding(split));
    save_embedding(e, csv, qs);
    for (auto p : {csv, std::filesystem::path(csv.string() + ".meta.json")}) {
      if (std::find(written_.begin(), written_.end(), p) == written_.end()) written_.push_back(p);
    }
  }

  void evaluate() {
    const DatasetSplits parts = splits(false);
    for (const auto* ds : {&parts.train, &parts.valid, &parts.test}) {
      if (!ds->has_labels()) throw ArgumentError("evaluation needs labeled splits (csv_labeled)");
    }
    const EmbeddingMatrix train = load_embedding(path(artifact::embedding("train")));
    const EmbeddingMatrix valid = load_embedding(path(artifact::embedding("valid")));
    const EmbeddingMatrix test = load_embedding(path(artifact::embedding("test")));
    if (train.provenance.model_id != valid.provenance.model_id || train.provenance.model_id != test.provenance.model_id ||
        train.provenance.source_id != valid.provenance.source_id || train.provenance.source_id != test.provenance.source_id) {
      throw ArgumentError("embedding splits come from different models or query sets");
    }
    const Matrix raw_train = parts.train.to_matrix();
    const Matrix raw_valid = parts.valid.to_matrix();
    const Matrix raw_test = parts.test.to_matrix();
    CurveInputs in{{&train.values, parts.train.labels()}, {&valid.values, parts.valid.labels()},
                   {&test.values, parts.test.labels()},   {&raw_train, parts.train.labels()},
                   {&raw_valid, parts.valid.labels()},    {&raw_test, parts.test.labels()}};
    OptimizerOptions opt;
    opt.max_iters = cfg_.eval.max_iters;
    opt.grad_tol = cfg_.eval.grad_tol;
    curve_ = feature_curve(in, cfg_.eval.step, cfg_.eval.c_grid, opt, options_.workers);
    emit(artifact::kCurve, format_curve_csv(*curve_));
  }

  const ExperimentConfig& cfg_;
  const RunOptions& options_;
  std::filesystem::path out_;
  std::vector<std::filesystem::path> written_;
  std::optional<CurveResult> curve_;
  json notes_ = json::object();
};

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  validate_experiment_config(cfg);
  std::vector<std::string> stages = kStages;
  if (options.stage) {
    if (std::find(kStages.begin(), kStages.end(), *options.stage) == kStages.end()) {
      throw ConfigError("unknown stage '" + *options.stage + "'");
    }
    stages = {*options.stage};
  }
  const std::filesystem::path out = options.out_dir.value_or(std::filesystem::path(cfg.output_dir));
  std::filesystem::create_directories(out);

  json meta;
  meta["config_hash"] = config_hash(cfg);
  meta["config"] = to_json(cfg);
  meta["seeds"] = {{"model", model_seed(cfg)}, {"embedding", cfg.embedding.seed}, {"split", cfg.dataset.split_seed}};
  meta["stages"] = stages;
  meta["workers"] = options.workers;
  meta["kernels"] = std::string(kernels::isa_name(kernels::active_isa()));

  Run run(cfg, options, out);
  for (const auto& stage : stages) {
    try {
      run.stage(stage);
    } catch (const std::exception& e) {
      for (const auto& p : run.written()) {
        std::error_code ec;
        std::filesystem::remove(p, ec);
      }
      meta["status"] = "failed";
      meta["failed_stage"] = stage;
      meta["error"] = e.what();
      write_file(out / artifact::kMetadata, meta.dump(2) + "\n");
      throw StageError(stage, e.what());
    }
  }
  meta["status"] = "ok";
  meta["notes"] = run.notes();
  std::vector<std::string> files;
  for (const auto& p : run.written()) files.push_back(p.filename().string());
  meta["files"] = files;
  write_file(out / artifact::kMetadata, meta.dump(2) + "\n");

  RunArtifacts artifacts;
  artifacts.out_dir = out;
  artifacts.files = run.written();
  artifacts.files.push_back(out / artifact::kMetadata);
  artifacts.curve = run.curve();
  return artifacts;
}

}  // namespace tpm
