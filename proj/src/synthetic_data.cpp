#include "ubct/synthetic_data.hpp"

#include "ubct/errors.hpp"
#include "ubct/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace ubct {
namespace {

enum Stream : std::uint64_t {
  kCenters = 1,
  kShifts = 2,
  kTransform = 3,
  kTrainingNoise = 4,
  kDrawBase = 1000,
};

Vector random_unit(Rng& rng, int dim) {
  Vector v(dim);
  double n = 0.0;
  do {
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
    n = v.norm();
  } while (n < 1e-12);
  return v / n;
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  if (samples_per_class < 2) throw ConfigError("samples_per_class", "must be >= 2");
  if (latent_dim < 1) throw ConfigError("latent_dim", "must be positive");
  if (input_dim < latent_dim) throw ConfigError("input_dim", "must be >= latent_dim");
  if (!(intra_class_noise >= 0.0) || !std::isfinite(intra_class_noise))
    throw ConfigError("intra_class_noise", "must be a finite nonnegative std-dev");
  if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift))
    throw ConfigError("domain_shift", "must be finite and nonnegative");
}

std::vector<ClassId> LabeledDataset::classes() const {
  std::vector<ClassId> out;
  out.reserve(class_index.size());
  for (const auto& [c, rows] : class_index) {
    if (!rows.empty()) out.push_back(c);
  }
  return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows,
                                      bool use_shifted) const {
  const Matrix& source = (use_shifted && shifted_inputs) ? *shifted_inputs : inputs;
  LabeledDataset out;
  out.inputs = gather_rows(source, rows);
  out.labels.reserve(rows.size());
  out.sample_ids.reserve(rows.size());
  for (auto r : rows) {
    out.labels.push_back(labels.at(r));
    out.sample_ids.push_back(sample_ids.at(r));
  }
  out.reindex();
  return out;
}

void LabeledDataset::reindex() {
  class_index.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) class_index[labels[i]].push_back(i);
}

void LabeledDataset::validate() const {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size())
    throw ShapeError("dataset has " + std::to_string(inputs.rows()) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  if (sample_ids.size() != labels.size()) throw ShapeError("sample_ids length mismatch");
  std::vector<int> seen(labels.size(), 0);
  for (const auto& [c, rows] : class_index) {
    for (auto r : rows) {
      if (r >= labels.size() || labels[r] != c)
        throw ShapeError("class_index entry for class " + std::to_string(c) + " is inconsistent");
      ++seen[r];
    }
  }
  for (int s : seen) {
    if (s != 1) throw ShapeError("class_index does not partition dataset rows");
  }
}

bool LabeledDataset::operator==(const LabeledDataset& other) const {
  return inputs.rows() == other.inputs.rows() && inputs.cols() == other.inputs.cols() &&
         inputs == other.inputs && labels == other.labels && sample_ids == other.sample_ids;
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::ExtendedData: return "extended-data";
    case Scenario::OpenData: return "open-data";
    case Scenario::ExtendedClass: return "extended-class";
    case Scenario::OpenClass: return "open-class";
    case Scenario::IdenticalData: return "identical-data";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view name) {
  for (Scenario s : kAllScenarios) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("scenario", "unknown scenario '" + std::string(name) + "'");
}

bool is_close_set(Scenario s) {
  return s == Scenario::ExtendedData || s == Scenario::IdenticalData;
}

bool is_open_split(Scenario s) { return s == Scenario::OpenData || s == Scenario::OpenClass; }

SyntheticWorld::SyntheticWorld(const DatasetSpec& spec) : spec_(spec) {
  spec_.validate();
  const int C = spec_.num_classes;
  const int L = spec_.latent_dim;
  const int D = spec_.input_dim;

  Rng center_rng(derive_seed(spec_.seed, kCenters));
  centers_.resize(C, L);
  for (int c = 0; c < C; ++c) centers_.row(c) = random_unit(center_rng, L).transpose();

  Rng shift_rng(derive_seed(spec_.seed, kShifts));
  shift_ = spec_.domain_shift * random_unit(shift_rng, L);

  Rng mix_rng(derive_seed(spec_.seed, kTransform));
  mix_.resize(D, L);
  const double gain = 1.5 / std::sqrt(static_cast<double>(L));
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < L; ++j) mix_(i, j) = gain * mix_rng.normal();
  offset_.resize(D);
  for (int i = 0; i < D; ++i) offset_[i] = 0.1 * mix_rng.normal();
}

Matrix SyntheticWorld::transform(const Matrix& latent) const {
  if (latent.cols() != spec_.latent_dim) throw ShapeError("latent rows have wrong width");
  Matrix pre = latent * mix_.transpose();
  pre.rowwise() += offset_.transpose();
  return pre.array().tanh().matrix();
}

LabeledDataset SyntheticWorld::training_set() const {
  const int C = spec_.num_classes;
  const int n = spec_.samples_per_class;
  const int L = spec_.latent_dim;
  const Eigen::Index total = static_cast<Eigen::Index>(C) * n;

  Rng rng(derive_seed(spec_.seed, kTrainingNoise));
  Matrix latent(total, L);
  Matrix shifted(total, L);
  LabeledDataset out;
  out.labels.reserve(total);
  out.sample_ids.reserve(total);
  for (int c = 0; c < C; ++c) {
    for (int k = 0; k < n; ++k) {
      const Eigen::Index r = static_cast<Eigen::Index>(c) * n + k;
      for (int j = 0; j < L; ++j) {
        const double z = spec_.intra_class_noise * rng.normal();
        latent(r, j) = centers_(c, j) + z;
        shifted(r, j) = centers_(c, j) + shift_[j] + z;
      }
      out.labels.push_back(c);
      out.sample_ids.push_back(static_cast<std::uint64_t>(r));
    }
  }
  out.inputs = transform(latent);
  if (spec_.domain_shift > 0.0) out.shifted_inputs = transform(shifted);
  out.reindex();
  return out;
}

LabeledDataset SyntheticWorld::draw(const std::vector<ClassId>& classes, int per_class,
                                    std::uint64_t stream) const {
  if (per_class < 1) throw ConfigError("per_class", "must be positive");
  const int L = spec_.latent_dim;
  Rng rng(derive_seed(spec_.seed, kDrawBase + stream));
  const Eigen::Index total = static_cast<Eigen::Index>(classes.size()) * per_class;
  Matrix latent(total, L);
  LabeledDataset out;
  Eigen::Index r = 0;
  for (ClassId c : classes) {
    if (c < 0 || c >= spec_.num_classes)
      throw ConfigError("classes", "class id " + std::to_string(c) + " out of range");
    for (int k = 0; k < per_class; ++k, ++r) {
      for (int j = 0; j < L; ++j)
        latent(r, j) = centers_(c, j) + spec_.intra_class_noise * rng.normal();
      out.labels.push_back(c);
      // High bits tag the stream so ids never collide with training rows.
      out.sample_ids.push_back(((stream + 1) << 40) | static_cast<std::uint64_t>(r));
    }
  }
  out.inputs = transform(latent);
  out.reindex();
  return out;
}

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  return SyntheticWorld(spec).training_set();
}

DataSplit allocate_split(const LabeledDataset& data, Scenario scenario, double old_fraction,
                         std::uint64_t seed) {
  if (!(old_fraction > 0.0 && old_fraction < 1.0))
    throw ConfigError("old_fraction", "must lie in (0, 1)");
  data.validate();

  Rng rng(seed);
  DataSplit split;
  split.scenario = scenario;

  std::vector<std::size_t> all_rows(data.size());
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});

  const bool class_based =
      scenario == Scenario::ExtendedClass || scenario == Scenario::OpenClass;

  std::vector<std::size_t> old_rows;
  std::vector<std::size_t> new_only_rows;

  if (class_based) {
    std::vector<ClassId> classes = data.classes();
    const auto keep = static_cast<std::size_t>(
        std::lround(old_fraction * static_cast<double>(classes.size())));
    if (keep < 1)
      throw AllocationError("old_fraction " + std::to_string(old_fraction) +
                            " keeps no class out of " + std::to_string(classes.size()));
    if (keep >= classes.size())
      throw AllocationError("old_fraction " + std::to_string(old_fraction) +
                            " leaves no class for the new-only portion");
    rng.shuffle(classes);
    const std::set<ClassId> old_classes(classes.begin(), classes.begin() + keep);
    for (auto r : all_rows) {
      (old_classes.count(data.labels[r]) ? old_rows : new_only_rows).push_back(r);
    }
    for (ClassId c : old_classes) {
      if (data.class_index.at(c).size() < 2)
        throw AllocationError("retained class " + std::to_string(c) + " has fewer than 2 samples");
    }
  } else {
    for (const auto& [c, rows] : data.class_index) {
      std::vector<std::size_t> shuffled = rows;
      rng.shuffle(shuffled);
      const auto keep = static_cast<std::size_t>(
          std::lround(old_fraction * static_cast<double>(rows.size())));
      if (keep < 2)
        throw AllocationError("old_fraction " + std::to_string(old_fraction) + " keeps " +
                              std::to_string(keep) + " samples of class " + std::to_string(c) +
                              " (need >= 2)");
      if (keep >= rows.size())
        throw AllocationError("old_fraction leaves no new-only samples in class " +
                              std::to_string(c));
      old_rows.insert(old_rows.end(), shuffled.begin(), shuffled.begin() + keep);
      new_only_rows.insert(new_only_rows.end(), shuffled.begin() + keep, shuffled.end());
    }
  }
  std::sort(old_rows.begin(), old_rows.end());
  std::sort(new_only_rows.begin(), new_only_rows.end());

  split.old_set = data.subset(old_rows);
  switch (scenario) {
    case Scenario::ExtendedData:
    case Scenario::ExtendedClass:
      split.new_set = data.subset(all_rows);
      break;
    case Scenario::OpenData:
    case Scenario::OpenClass:
      split.new_set = data.subset(new_only_rows, /*use_shifted=*/true);
      break;
    case Scenario::IdenticalData:
      split.new_set = split.old_set;
      break;
  }
  return split;
}

}  // namespace ubct
