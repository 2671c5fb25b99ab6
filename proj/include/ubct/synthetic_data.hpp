#pragma once

#include "ubct/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ubct {

/// Parameters of a synthetic class-structured dataset. Class centers live
/// on the unit sphere of a latent space; samples are pushed through a fixed
/// random nonlinear map into the input space.
struct DatasetSpec {
  int num_classes = 50;
  int samples_per_class = 80;
  int input_dim = 48;
  int latent_dim = 16;
  double intra_class_noise = 0.14;
  /// Norm of the latent offset added to every class center for new-only
  /// samples in the open-data and open-class allocations.
  double domain_shift = 0.2;
  std::uint64_t seed = 666;

  /// Throws ConfigError naming the first violated field.
  void validate() const;
};

/// A labeled sample matrix. `sample_ids` identify rows across subsets so
/// split invariants can be checked with set operations.
struct LabeledDataset {
  Matrix inputs;
  Labels labels;
  std::vector<std::uint64_t> sample_ids;
  std::map<ClassId, std::vector<std::size_t>> class_index;
  /// Same noise draws under domain-shifted centers; present only on
  /// generated datasets with a nonzero shift.
  std::optional<Matrix> shifted_inputs;

  std::size_t size() const noexcept { return labels.size(); }
  int input_dim() const noexcept { return static_cast<int>(inputs.cols()); }
  std::vector<ClassId> classes() const;

  /// Rows in the given order; `use_shifted` takes rows from `shifted_inputs`.
  LabeledDataset subset(const std::vector<std::size_t>& rows, bool use_shifted = false) const;

  /// Rebuilds `class_index` from `labels`.
  void reindex();

  /// Checks shapes and that `class_index` partitions the rows exactly.
  void validate() const;

  bool operator==(const LabeledDataset& other) const;
};

enum class Scenario { ExtendedData, OpenData, ExtendedClass, OpenClass, IdenticalData };

inline constexpr Scenario kAllScenarios[] = {Scenario::ExtendedData, Scenario::OpenData,
                                             Scenario::ExtendedClass, Scenario::OpenClass,
                                             Scenario::IdenticalData};

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);

/// Old and new training sets share every class.
bool is_close_set(Scenario s);
/// New-only samples are drawn from shifted centers.
bool is_open_split(Scenario s);

struct DataSplit {
  Scenario scenario = Scenario::ExtendedData;
  LabeledDataset old_set;
  LabeledDataset new_set;
};

/// Deterministic generator bound to one DatasetSpec. Samples are drawn around
/// fixed latent class centers and mapped to input space by a fixed transform.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(const DatasetSpec& spec);

  const DatasetSpec& spec() const noexcept { return spec_; }
  const Matrix& centers() const noexcept { return centers_; }
  const Vector& shift() const noexcept { return shift_; }

  /// The training corpus: samples_per_class rows per class.
  LabeledDataset training_set() const;

  /// Fresh samples from the unshifted distribution, independent of the
  /// training corpus. `stream` selects an independent noise stream.
  LabeledDataset draw(const std::vector<ClassId>& classes, int per_class,
                      std::uint64_t stream) const;

  /// Maps latent rows to input rows.
  Matrix transform(const Matrix& latent) const;

 private:
  DatasetSpec spec_;
  Matrix centers_;
  Vector shift_;
  Matrix mix_;     // input_dim x latent_dim
  Vector offset_;  // input_dim
};

LabeledDataset generate_dataset(const DatasetSpec& spec);

inline constexpr std::uint64_t kDefaultSplitSeed = 666;

/// Partitions `data` into old and new training sets for `scenario`.
/// Class-based scenarios sample classes; data-based scenarios sample rows
/// within every class. Throws AllocationError when a side would be empty.
DataSplit allocate_split(const LabeledDataset& data, Scenario scenario, double old_fraction = 0.3,
                         std::uint64_t seed = kDefaultSplitSeed);

}  // namespace ubct
