#include "tpm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace tpm {

std::string_view split_tag_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain:
      return "train";
    case SplitTag::kValid:
      return "valid";
    case SplitTag::kTest:
      return "test";
    case SplitTag::kUnsplit:
      return "unsplit";
  }
  return "unsplit";
}

DatasetFormat parse_dataset_format(std::string_view text) {
  if (text == "csv_labeled") return DatasetFormat::kCsvLabeled;
  if (text == "csv_unlabeled") return DatasetFormat::kCsvUnlabeled;
  throw ArgumentError("unknown dataset format '" + std::string(text) + "'");
}

std::string_view dataset_format_name(DatasetFormat format) {
  return format == DatasetFormat::kCsvLabeled ? "csv_labeled" : "csv_unlabeled";
}

BinaryDataset::BinaryDataset(std::size_t num_vars, std::vector<std::uint8_t> samples,
                             std::optional<std::vector<std::uint32_t>> labels, std::string name)
    : num_vars_(num_vars), samples_(std::move(samples)), labels_(std::move(labels)),
      name_(std::move(name)) {
  if (num_vars_ == 0 && !samples_.empty()) throw ArgumentError("samples given for zero variables");
  if (num_vars_ != 0 && samples_.size() % num_vars_ != 0) {
    throw ArgumentError("sample buffer is not a multiple of the variable count");
  }
  for (std::uint8_t v : samples_) {
    if (v > 1) throw ArgumentError("sample entries must be 0 or 1");
  }
  if (labels_) {
    if (labels_->size() != num_samples()) throw ArgumentError("label count differs from sample count");
    for (std::uint32_t l : *labels_) num_classes_ = std::max<std::size_t>(num_classes_, l + 1);
  }
}

std::span<const std::uint32_t> BinaryDataset::labels() const {
  if (!labels_) throw ArgumentError("dataset '" + name_ + "' has no labels");
  return *labels_;
}

BinaryDataset BinaryDataset::with_geometry(ImageGeometry geometry) const {
  if (geometry.width == 0 || geometry.height == 0) throw DimensionError("geometry must be positive");
  if (geometry.width * geometry.height != num_vars_) {
    throw DimensionError("geometry " + std::to_string(geometry.width) + "x" +
                         std::to_string(geometry.height) + " does not cover " +
                         std::to_string(num_vars_) + " variables");
  }
  BinaryDataset out = *this;
  out.geometry_ = geometry;
  return out;
}

BinaryDataset BinaryDataset::with_split_tag(SplitTag tag) const {
  BinaryDataset out = *this;
  out.split_tag_ = tag;
  return out;
}

BinaryDataset BinaryDataset::with_name(std::string name) const {
  BinaryDataset out = *this;
  out.name_ = std::move(name);
  return out;
}

BinaryDataset BinaryDataset::select_rows(std::span<const std::size_t> rows) const {
  BinaryDataset out = *this;
  out.samples_.clear();
  out.samples_.reserve(rows.size() * num_vars_);
  if (labels_) out.labels_->clear();
  for (std::size_t r : rows) {
    if (r >= num_samples()) throw ArgumentError("row index out of range");
    const auto s = sample(r);
    out.samples_.insert(out.samples_.end(), s.begin(), s.end());
    if (labels_) out.labels_->push_back((*labels_)[r]);
  }
  return out;
}

Matrix BinaryDataset::to_matrix() const {
  Matrix out(num_samples(), num_vars_);
  std::transform(samples_.begin(), samples_.end(), out.data.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return out;
}

PartialEvidence::PartialEvidence(std::vector<std::uint32_t> scope, std::vector<std::uint8_t> values)
    : scope_(std::move(scope)), values_(std::move(values)) {
  if (scope_.size() != values_.size()) throw ArgumentError("evidence scope/value length mismatch");
  for (std::size_t i = 1; i < scope_.size(); ++i) {
    if (scope_[i - 1] >= scope_[i]) throw ArgumentError("evidence scope must be strictly increasing");
  }
  for (std::uint8_t v : values_) {
    if (v > 1) throw ArgumentError("evidence values must be 0 or 1");
  }
}

PartialEvidence PartialEvidence::restrict(std::span<const std::uint8_t> sample,
                                          std::span<const std::uint32_t> scope) {
  std::vector<std::uint8_t> values;
  values.reserve(scope.size());
  for (std::uint32_t v : scope) {
    if (v >= sample.size()) throw ScopeError("variable " + std::to_string(v) + " outside sample");
    values.push_back(sample[v]);
  }
  return PartialEvidence({scope.begin(), scope.end()}, std::move(values));
}

BinaryDataset parse_binary_dataset(std::string_view text, DatasetFormat format, std::string name) {
  const bool labeled = format == DatasetFormat::kCsvLabeled;
  std::vector<std::uint8_t> samples;
  std::vector<std::uint32_t> labels;
  std::size_t arity = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      // Trailing blank lines are tolerated; interior ones are not.
      if (text.find_first_not_of("\r\n", pos) == std::string_view::npos) break;
      throw ParseError(line_no, "empty row");
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (arity == 0) {
      arity = fields.size();
      if (labeled && arity < 2) throw ParseError(line_no, "labeled rows need at least one variable");
    } else if (fields.size() != arity) {
      throw ParseError(line_no, "expected " + std::to_string(arity) + " fields, found " +
                                    std::to_string(fields.size()));
    }
    const std::size_t num_vars = labeled ? arity - 1 : arity;
    for (std::size_t f = 0; f < num_vars; ++f) {
      if (fields[f] == "0") {
        samples.push_back(0);
      } else if (fields[f] == "1") {
        samples.push_back(1);
      } else {
        throw ParseError(line_no, "non-binary entry '" + std::string(fields[f]) + "' in column " +
                                      std::to_string(f + 1));
      }
    }
    if (labeled) {
      const std::string_view field = fields.back();
      std::uint32_t label = 0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
      if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw ParseError(line_no, "label '" + std::string(field) + "' is not a nonnegative integer");
      }
      labels.push_back(label);
    }
  }
  if (samples.empty()) throw EmptyDatasetError("dataset '" + name + "' is empty");
  const std::size_t num_vars = labeled ? arity - 1 : arity;
  if (labeled) return BinaryDataset(num_vars, std::move(samples), std::move(labels), std::move(name));
  return BinaryDataset(num_vars, std::move(samples), std::nullopt, std::move(name));
}

BinaryDataset load_binary_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_binary_dataset(buffer.str(), format, path.stem().string());
}

std::string format_binary_dataset(const BinaryDataset& ds) {
  std::string out;
  const std::size_t n = ds.num_vars();
  out.reserve(ds.num_samples() * (2 * n + 4));
  for (std::size_t i = 0; i < ds.num_samples(); ++i) {
    const auto s = ds.sample(i);
    for (std::size_t v = 0; v < n; ++v) {
      if (v) out.push_back(',');
      out.push_back(static_cast<char>('0' + s[v]));
    }
    if (ds.has_labels()) {
      out.push_back(',');
      out += std::to_string(ds.labels()[i]);
    }
    out.push_back('\n');
  }
  return out;
}

void write_binary_dataset(const BinaryDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path.string());
  out << format_binary_dataset(ds);
}

BinaryDataset attach_geometry(const BinaryDataset& ds, std::size_t width, std::size_t height) {
  return ds.with_geometry({width, height});
}

DatasetSplits split_dataset(const BinaryDataset& ds, std::array<double, 3> fractions,
                            std::uint64_t seed) {
  const std::size_t m = ds.num_samples();
  if (m < 3) throw ArgumentError("splitting needs at least 3 samples");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ArgumentError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("split fractions must sum to 1");
  const auto count = [m](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(m) + 1e-9));
  };
  const std::size_t n_train = count(fractions[0]);
  const std::size_t n_valid = count(fractions[1]);
  if (n_train == 0 || n_valid == 0 || n_train + n_valid >= m) {
    throw ArgumentError("split fractions leave an empty part for " + std::to_string(m) + " samples");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::span<const std::size_t> all(order);
  const std::string& base = ds.name();
  return DatasetSplits{
      ds.select_rows(all.subspan(0, n_train)).with_split_tag(SplitTag::kTrain).with_name(base + ".train"),
      ds.select_rows(all.subspan(n_train, n_valid)).with_split_tag(SplitTag::kValid).with_name(base + ".valid"),
      ds.select_rows(all.subspan(n_train + n_valid)).with_split_tag(SplitTag::kTest).with_name(base + ".test"),
  };
}

void write_splits(const DatasetSplits& splits, const std::filesystem::path& dir,
                  const std::string& name) {
  write_binary_dataset(splits.train, dir / (name + ".train.csv"));
  write_binary_dataset(splits.valid, dir / (name + ".valid.csv"));
  write_binary_dataset(splits.test, dir / (name + ".test.csv"));
}

}  // namespace tpm
