#include "tpm/embed.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace tpm {

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

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p += ".meta.json";
  return p;
}

// Evaluates a column of features: `configs` is row-major (m x q). With
// memoization, distinct configurations are evaluated once in a batch and
// scattered back in sample order.
void evaluate_column(const MarginalEvaluator& model, std::span<const std::uint32_t> scope,
                     const std::vector<std::uint8_t>& configs, std::size_t m, bool memoize,
                     std::vector<double>& out) {
  const std::size_t q = scope.size();
  out.resize(m);
  if (!memoize) {
    std::vector<std::uint32_t> vars(scope.begin(), scope.end());
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<std::uint8_t> values(configs.begin() + static_cast<std::ptrdiff_t>(i * q),
                                       configs.begin() + static_cast<std::ptrdiff_t>((i + 1) * q));
      out[i] = model.log_marginal(PartialEvidence(vars, std::move(values)));
    }
    return;
  }
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> slot(m);
  std::vector<std::uint8_t> unique;
  std::string key(q, '\0');
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t* row = configs.data() + i * q;
    for (std::size_t j = 0; j < q; ++j) key[j] = static_cast<char>(row[j]);
    const auto [it, inserted] = index.try_emplace(key, index.size());
    if (inserted) unique.insert(unique.end(), row, row + q);
    slot[i] = it->second;
  }
  std::vector<double> values(index.size());
  model.log_marginal_batch(scope, unique, values);
  for (std::size_t i = 0; i < m; ++i) out[i] = values[slot[i]];
}

void apply_scale(FeatureScale scale, std::vector<double>& column) {
  if (scale == FeatureScale::kLinear) {
    for (double& v : column) v = std::exp(v);
  }
}

std::string format_double(double v) {
  if (v == kNegInf) return "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view feature_scale_name(FeatureScale scale) { return scale == FeatureScale::kLog ? "log" : "linear"; }

FeatureScale parse_feature_scale(std::string_view text) {
  if (text == "log") return FeatureScale::kLog;
  if (text == "linear") return FeatureScale::kLinear;
  throw ArgumentError("unknown feature scale '" + std::string(text) + "'");
}

QuerySet gen_rect_queries(ImageGeometry geometry, std::size_t k, std::size_t min_side, std::size_t max_side,
                          std::uint64_t seed) {
  if (geometry.width == 0 || geometry.height == 0) throw ArgumentError("geometry must be positive");
  if (min_side < 1 || min_side > max_side) throw ArgumentError("need 1 <= min_side <= max_side");
  if (max_side > geometry.width || max_side > geometry.height) {
    throw ArgumentError("max_side " + std::to_string(max_side) + " exceeds image dimensions " +
                        std::to_string(geometry.width) + "x" + std::to_string(geometry.height));
  }
  QuerySet qs;
  qs.geometry = geometry;
  qs.min_side = min_side;
  qs.max_side = max_side;
  qs.seed = seed;
  qs.scopes.reserve(k);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> side(min_side, max_side);
  for (std::size_t q = 0; q < k; ++q) {
    const std::size_t rw = side(rng);
    const std::size_t rh = side(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, geometry.width - rw)(rng);
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, geometry.height - rh)(rng);
    std::vector<std::uint32_t> scope;
    scope.reserve(rw * rh);
    for (std::size_t y = y0; y < y0 + rh; ++y) {
      for (std::size_t x = x0; x < x0 + rw; ++x) scope.push_back(static_cast<std::uint32_t>(y * geometry.width + x));
    }
    qs.scopes.push_back(std::move(scope));
  }
  return qs;
}

EmbeddingMatrix rand_query_embedding(const MarginalEvaluator& model, const BinaryDataset& ds, const QuerySet& qs,
                                     const EmbedOptions& options) {
  const std::size_t m = ds.num_samples();
  const std::size_t n = ds.num_vars();
  if (model.num_vars() != n) throw DimensionError("model and dataset disagree on the variable count");
  for (const auto& scope : qs.scopes) {
    if (scope.empty()) throw ArgumentError("query scopes must be non-empty");
    for (std::size_t i = 0; i < scope.size(); ++i) {
      if (scope[i] >= n) throw ScopeError("query variable " + std::to_string(scope[i]) + " outside dataset");
      if (i > 0 && scope[i - 1] >= scope[i]) throw ArgumentError("query scopes must be strictly increasing");
    }
  }
  EmbeddingMatrix result;
  result.values = Matrix(m, qs.size());
  result.scale = options.scale;
  result.provenance = options.provenance;
  parallel_for(qs.size(), options.workers, [&](std::size_t j) {
    const auto& scope = qs.scopes[j];
    const std::size_t q = scope.size();
    std::vector<std::uint8_t> configs(m * q);
    for (std::size_t i = 0; i < m; ++i) {
      const auto s = ds.sample(i);
      for (std::size_t t = 0; t < q; ++t) configs[i * q + t] = s[scope[t]];
    }
    std::vector<double> column;
    evaluate_column(model, scope, configs, m, options.memoize, column);
    apply_scale(options.scale, column);
    for (std::size_t i = 0; i < m; ++i) result.values(i, j) = column[i];
  });
  return result;
}

BinaryDataset extract_random_patches(const BinaryDataset& ds, std::size_t s, std::size_t d, std::uint64_t seed) {
  const std::size_t m = ds.num_samples();
  const std::size_t n = ds.num_vars();
  if (d < 1 || d > n) throw ArgumentError("patch length must lie in [1, n]");
  if (s < 1) throw ArgumentError("need at least one patch");
  if (m == 0) throw EmptyDatasetError("cannot extract patches from an empty dataset");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_row(0, m - 1);
  std::uniform_int_distribution<std::size_t> pick_offset(0, n - d);
  std::vector<std::uint8_t> patches;
  patches.reserve(s * d);
  for (std::size_t p = 0; p < s; ++p) {
    const std::size_t row = pick_row(rng);
    const std::size_t offset = pick_offset(rng);
    const auto sample = ds.sample(row);
    patches.insert(patches.end(), sample.begin() + static_cast<std::ptrdiff_t>(offset),
                   sample.begin() + static_cast<std::ptrdiff_t>(offset + d));
  }
  return BinaryDataset(d, std::move(patches), std::nullopt, ds.name() + ".patches");
}

std::size_t window_count(std::size_t n, std::size_t d, std::size_t stride) {
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  if (d < 1 || d > n) throw DimensionError("window length must lie in [1, n]");
  return (n - d) / stride + 1;
}

EmbeddingMatrix rand_patch_embedding(const MarginalEvaluator& patch_model, const BinaryDataset& ds, std::size_t d,
                                     std::size_t stride, const EmbedOptions& options) {
  if (patch_model.num_vars() != d) {
    throw DimensionError("patch model covers " + std::to_string(patch_model.num_vars()) + " variables, expected " +
                         std::to_string(d));
  }
  const std::size_t m = ds.num_samples();
  const std::size_t w = window_count(ds.num_vars(), d, stride);
  std::vector<std::uint32_t> full(d);
  for (std::uint32_t v = 0; v < d; ++v) full[v] = v;
  EmbeddingMatrix result;
  result.values = Matrix(m, w);
  result.scale = options.scale;
  result.provenance = options.provenance;
  parallel_for(w, options.workers, [&](std::size_t h) {
    const std::size_t offset = h * stride;
    std::vector<std::uint8_t> configs(m * d);
    for (std::size_t i = 0; i < m; ++i) {
      const auto s = ds.sample(i);
      std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(offset), d, configs.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<double> column;
    evaluate_column(patch_model, full, configs, m, options.memoize, column);
    apply_scale(options.scale, column);
    for (std::size_t i = 0; i < m; ++i) result.values(i, h) = column[i];
  });
  return result;
}

std::string format_query_set(const QuerySet& qs) {
  std::string out;
  for (const auto& scope : qs.scopes) {
    for (std::size_t i = 0; i < scope.size(); ++i) {
      if (i) out.push_back(' ');
      out += std::to_string(scope[i]);
    }
    out.push_back('\n');
  }
  return out;
}

QuerySet parse_query_set(std::string_view text) {
  QuerySet qs;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::uint32_t> scope;
    for (std::string tok; fields >> tok;) {
      std::uint32_t v = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError(line_no, "bad index '" + tok + "'");
      if (!scope.empty() && scope.back() >= v) throw ParseError(line_no, "indices must be strictly increasing");
      scope.push_back(v);
    }
    if (scope.empty()) throw ParseError(line_no, "empty query");
    qs.scopes.push_back(std::move(scope));
  }
  return qs;
}

void save_query_set(const QuerySet& qs, const std::filesystem::path& path) { write_file(path, format_query_set(qs)); }

QuerySet load_query_set(const std::filesystem::path& path) { return parse_query_set(read_file(path)); }

std::string format_embedding_csv(const EmbeddingMatrix& e) {
  std::string out;
  for (std::size_t i = 0; i < e.values.rows; ++i) {
    for (std::size_t j = 0; j < e.values.cols; ++j) {
      if (j) out.push_back(',');
      out += format_double(e.values(i, j));
    }
    out.push_back('\n');
  }
  return out;
}

EmbeddingMatrix parse_embedding_csv(std::string_view text, FeatureScale scale) {
  EmbeddingMatrix e;
  e.scale = scale;
  std::vector<double> data;
  std::size_t cols = 0, rows = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++rows;
    std::size_t count = 0;
    std::size_t start = 0;
    if (line.empty()) {
      // m x 0 matrices serialize as empty lines.
    } else {
      for (;;) {
        const std::size_t comma = line.find(',', start);
        const std::string tok = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        double v = 0.0;
        if (tok == "-inf") {
          v = kNegInf;
        } else {
          const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
          if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError(rows, "bad value '" + tok + "'");
        }
        data.push_back(v);
        ++count;
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
    if (rows == 1) cols = count;
    if (count != cols) throw ParseError(rows, "ragged embedding row");
  }
  e.values.rows = rows;
  e.values.cols = cols;
  e.values.data = std::move(data);
  return e;
}

void save_embedding(const EmbeddingMatrix& e, const std::filesystem::path& csv_path, const QuerySet* qs) {
  write_file(csv_path, format_embedding_csv(e));
  nlohmann::ordered_json meta;
  meta["rows"] = e.values.rows;
  meta["cols"] = e.values.cols;
  meta["scale"] = feature_scale_name(e.scale);
  meta["model_id"] = e.provenance.model_id;
  meta["source_id"] = e.provenance.source_id;
  meta["seed"] = e.provenance.seed;
  if (qs) meta["queries"] = qs->scopes;
  write_file(sidecar_path(csv_path), meta.dump(2) + "\n");
}

EmbeddingMatrix load_embedding(const std::filesystem::path& csv_path) {
  const auto meta = nlohmann::json::parse(read_file(sidecar_path(csv_path)));
  EmbeddingMatrix e = parse_embedding_csv(read_file(csv_path), parse_feature_scale(meta.at("scale").get<std::string>()));
  e.provenance.model_id = meta.at("model_id").get<std::string>();
  e.provenance.source_id = meta.at("source_id").get<std::string>();
  e.provenance.seed = meta.at("seed").get<std::uint64_t>();
  if (e.values.rows != meta.at("rows").get<std::size_t>() || e.values.cols != meta.at("cols").get<std::size_t>()) {
    throw ParseError(0, "embedding shape differs from its metadata");
  }
  return e;
}

}  // namespace tpm
