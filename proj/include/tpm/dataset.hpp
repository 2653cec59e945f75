#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpm/common.hpp"

namespace tpm {

enum class SplitTag { kTrain, kValid, kTest, kUnsplit };
enum class DatasetFormat { kCsvLabeled, kCsvUnlabeled };

std::string_view split_tag_name(SplitTag tag);
DatasetFormat parse_dataset_format(std::string_view text);
std::string_view dataset_format_name(DatasetFormat format);

struct ImageGeometry {
  std::size_t width = 0;
  std::size_t height = 0;
  bool operator==(const ImageGeometry&) const = default;
};

// m x n matrix of binary observations with optional labels and geometry.
// Immutable once constructed; the transforming operations return copies.
class BinaryDataset {
 public:
  BinaryDataset() = default;
  // Throws ArgumentError if samples.size() != m * n, an entry is not 0/1, or
  // labels have the wrong length.
  BinaryDataset(std::size_t num_vars, std::vector<std::uint8_t> samples,
                std::optional<std::vector<std::uint32_t>> labels = std::nullopt,
                std::string name = "dataset");

  std::size_t num_samples() const { return num_vars_ == 0 ? 0 : samples_.size() / num_vars_; }
  std::size_t num_vars() const { return num_vars_; }
  std::span<const std::uint8_t> sample(std::size_t i) const {
    return {samples_.data() + i * num_vars_, num_vars_};
  }
  std::uint8_t at(std::size_t i, std::size_t v) const { return samples_[i * num_vars_ + v]; }
  std::span<const std::uint8_t> raw() const { return samples_; }

  bool has_labels() const { return labels_.has_value(); }
  std::span<const std::uint32_t> labels() const;
  // 1 + max(label); 0 when unlabeled.
  std::size_t num_classes() const { return num_classes_; }

  const std::optional<ImageGeometry>& geometry() const { return geometry_; }
  const std::string& name() const { return name_; }
  SplitTag split_tag() const { return split_tag_; }

  BinaryDataset with_geometry(ImageGeometry geometry) const;
  BinaryDataset with_split_tag(SplitTag tag) const;
  BinaryDataset with_name(std::string name) const;
  // Rows in the given order (duplicates allowed).
  BinaryDataset select_rows(std::span<const std::size_t> rows) const;

  // Row i as doubles; used by the classifier baseline.
  Matrix to_matrix() const;

  bool operator==(const BinaryDataset&) const = default;

 private:
  std::size_t num_vars_ = 0;
  std::vector<std::uint8_t> samples_;
  std::optional<std::vector<std::uint32_t>> labels_;
  std::size_t num_classes_ = 0;
  std::optional<ImageGeometry> geometry_;
  std::string name_ = "dataset";
  SplitTag split_tag_ = SplitTag::kUnsplit;
};

// Evidence over a strictly increasing subset of variables.
class PartialEvidence {
 public:
  PartialEvidence() = default;
  // Throws ArgumentError on unsorted/duplicate scope, length mismatch, or a
  // value other than 0/1.
  PartialEvidence(std::vector<std::uint32_t> scope, std::vector<std::uint8_t> values);

  // Restriction of `sample` to `scope`.
  static PartialEvidence restrict(std::span<const std::uint8_t> sample,
                                  std::span<const std::uint32_t> scope);

  const std::vector<std::uint32_t>& scope() const { return scope_; }
  const std::vector<std::uint8_t>& values() const { return values_; }
  std::size_t size() const { return scope_.size(); }
  bool empty() const { return scope_.empty(); }

 private:
  std::vector<std::uint32_t> scope_;
  std::vector<std::uint8_t> values_;
};

// Canonical text format: comma-separated 0/1 per row, optional trailing
// integer label column, '\n' line endings.
BinaryDataset load_binary_dataset(const std::filesystem::path& path, DatasetFormat format);
BinaryDataset parse_binary_dataset(std::string_view text, DatasetFormat format,
                                   std::string name = "dataset");
std::string format_binary_dataset(const BinaryDataset& ds);
void write_binary_dataset(const BinaryDataset& ds, const std::filesystem::path& path);

BinaryDataset attach_geometry(const BinaryDataset& ds, std::size_t width, std::size_t height);

struct DatasetSplits {
  BinaryDataset train;
  BinaryDataset valid;
  BinaryDataset test;
};

// Seeded shuffle, then floor(frac * m) rows for train and valid; the rest go
// to test.
DatasetSplits split_dataset(const BinaryDataset& ds, std::array<double, 3> fractions,
                            std::uint64_t seed);

// Writes <dir>/<name>.{train,valid,test}.csv.
void write_splits(const DatasetSplits& splits, const std::filesystem::path& dir,
                  const std::string& name);

}  // namespace tpm
