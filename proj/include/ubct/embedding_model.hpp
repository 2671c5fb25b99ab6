#pragma once

#include "ubct/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace ubct {

enum class Activation { Relu, Tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct ModelConfig {
  int input_dim = 48;
  std::vector<int> hidden_dims = {128};
  int embed_dim = 32;
  Activation activation = Activation::Tanh;
  std::uint64_t init_seed = 1;

  void validate() const;
};

/// y = W x + b with W stored out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

struct ModelGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  bool all_finite() const;
};

/// Intermediate values of a forward pass, kept for backprop.
struct ForwardPass {
  std::vector<Matrix> layer_inputs;  // input to each dense layer
  std::vector<Matrix> pre_activations;
  Vector raw_norms;
  FeatureMatrix features;
};

/// MLP with `hidden_dims` activated layers and a linear projection to
/// `embed_dim`, followed by row-wise L2 normalization.
class EmbeddingModel {
 public:
  explicit EmbeddingModel(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  int input_dim() const noexcept { return config_.input_dim; }
  int embed_dim() const noexcept { return config_.embed_dim; }

  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  /// Unit-norm features, one row per input row. Throws ShapeError on a
  /// column-count mismatch.
  FeatureMatrix forward(const Matrix& inputs) const;
  ForwardPass forward_train(const Matrix& inputs) const;

  /// Backpropagates d(loss)/d(features) through normalization and the MLP.
  ModelGradients backward(const ForwardPass& pass, const Matrix& grad_features) const;

  std::uint64_t parameter_hash() const;
  std::size_t parameter_count() const;

  // Checkpoint layout, little-endian:
  //   "UBCTMDL1", u32 version(=1), u32 activation(0 relu, 1 tanh),
  //   u64 init_seed, u64 input_dim, u64 embed_dim, u64 layer_count,
  //   per layer: u64 out, u64 in, out*in f64 weights (row-major), out f64 bias.
  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);

  bool operator==(const EmbeddingModel& other) const;

 private:
  ModelConfig config_;
  std::vector<DenseLayer> layers_;
};

/// Per-class unit-norm rows of a cosine classifier. Row i belongs to
/// `class_ids[i]`.
struct PrototypeMatrix {
  Matrix rows;
  std::vector<ClassId> class_ids;
  bool trainable = true;

  static PrototypeMatrix random(std::vector<ClassId> class_ids, int dim, std::uint64_t seed);

  int num_classes() const noexcept { return static_cast<int>(rows.rows()); }
  int dim() const noexcept { return static_cast<int>(rows.cols()); }
  std::optional<int> row_of(ClassId c) const;
  /// Maps dataset labels to row indices; CoverageError if a label is absent.
  std::vector<int> rows_for(const Labels& labels) const;
  bool covers(const std::vector<ClassId>& classes) const;
  std::uint64_t hash() const;

  // "UBCTPRO1", u64 rows, u64 dim, u8 trainable, rows i32 class ids,
  // rows*dim f64 row-major.
  void save(const std::filesystem::path& path) const;
  static PrototypeMatrix load(const std::filesystem::path& path);
};

struct ArcFaceParams {
  double scale = 64.0;
  double margin = 0.5;

  void validate() const;
};

/// Target cosines are clamped to [-1 + kCosineClamp, 1 - kCosineClamp]
/// before the angular margin is added.
inline constexpr double kCosineClamp = 1e-7;

struct ArcFaceResult {
  double loss = 0.0;
  Matrix grad_features;
  std::optional<Matrix> grad_prototypes;  // only for trainable prototypes
};

/// Batch-mean additive angular margin loss over cosine logits
/// <prototype_j, feature>. `targets` are prototype row indices.
ArcFaceResult arcface_loss(const FeatureMatrix& features, std::span<const int> targets,
                           const PrototypeMatrix& prototypes, const ArcFaceParams& params);

struct SgdParams {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v.
/// Holds one momentum buffer per parameter tensor.
class SgdOptimizer {
 public:
  /// Updates `model`, and `prototypes` when trainable (rows are then
  /// renormalized). Throws NumericalError before touching anything if a
  /// gradient is non-finite.
  void step(EmbeddingModel& model, const ModelGradients& grads, PrototypeMatrix* prototypes,
            const Matrix* prototype_grad, const SgdParams& params);

 private:
  std::vector<Matrix> weight_velocity_;
  std::vector<Vector> bias_velocity_;
  Matrix prototype_velocity_;
};

}  // namespace ubct
