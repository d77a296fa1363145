#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "shortcutlab/augment.hpp"
#include "shortcutlab/numerics.hpp"
#include "shortcutlab/synth.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Model: shared MLP extractor with one or more classification heads and an
// optional distributional-shift head. Plain ERM uses a single head; the
// ensemble trainer keys one head per augmentation kind; domain-invariance
// keys one head per shortcut domain.
// ---------------------------------------------------------------------------

struct ModelShape {
  std::size_t input_dim = 3 * 32 * 32;
  std::vector<std::size_t> hidden = {128, 64};
  std::size_t classes = 2;
  std::size_t num_heads = 1;
  bool with_shift_head = false;  // shift head output dim = num_heads

  std::size_t feature_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
  void validate() const;
};

struct ModelParams {
  std::vector<LayerParams> extractor;
  std::vector<LayerParams> heads;
  LayerParams shift_head;  // empty matrices when absent
};

// Initialization draws from per-layer streams of the seed, so models that
// share a prefix (extractor, first head) get bit-identical values for it
// regardless of how many heads follow.
ModelParams init_model(const ModelShape& shape, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activation per extractor layer
  std::vector<Matrix> post;  // post-ReLU per extractor layer
};

Matrix extract_features(const ModelParams& p, const Matrix& input, ForwardCache* cache = nullptr);
Matrix head_logits(const ModelParams& p, std::size_t head, const Matrix& features);
Matrix shift_logits(const ModelParams& p, const Matrix& features);

// Backpropagates d_features through the extractor, returning per-layer grads.
std::vector<LayerParams> extractor_backward(const ModelParams& p, const Matrix& input,
                                            const ForwardCache& cache, const Matrix& d_features);

// Flattens samples into a [N x C*H*W] batch.
Matrix batch_matrix(const std::vector<Sample>& pool, const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// Last-layer-ensemble training step
// ---------------------------------------------------------------------------

struct LleStepOptions {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double lambda_shift = 1.0;
  bool target_loss_enabled = true;
};

struct LleStepStats {
  double target_loss = 0.0;
  double shift_loss = 0.0;
  std::vector<std::size_t> routed;  // examples per head
};

// One SGD step: each example draws an augmentation kind uniformly (identity
// included), is transformed, and is routed to that kind's head. The target
// loss is the mean over heads that received examples of each head's mean
// cross-entropy. The shift head is trained to classify the drawn kind from
// the features with a stop gradient: its loss never updates the extractor.
// Parameter blocks that receive no gradient in a step are left untouched.
LleStepStats lle_training_step(ModelParams& params, const DatasetConfig& cfg,
                               const std::vector<Sample>& pool,
                               const std::vector<std::size_t>& batch,
                               const std::vector<AugmentationKind>& kinds, RngStream& rng,
                               const LleStepOptions& opts);

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

enum class AggregationMode {
  dynamic,  // heads weighted by the shift head's softmax posterior
  mean,     // uniform 1/H weights
  single,   // one selected head
  sum,      // unit weight per head (domain-invariance inference)
};

const char* aggregation_name(AggregationMode m);
AggregationMode aggregation_from_name(std::string_view name);

Matrix aggregate_logits(const ModelParams& p, const Matrix& input, AggregationMode mode,
                        std::size_t single_head = 0);

std::vector<int> predict_classes(const Matrix& logits);

// ---------------------------------------------------------------------------
// Checkpoints: "shortcutlab-ckpt-v1", a JSON header line followed by a
// little-endian float64 payload of all parameter blocks in declaration order.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::vector<std::string> head_names = {"identity"};
  std::string method = "erm";
  std::uint64_t seed = 0;
  std::size_t selected_epoch = 0;
  std::string dataset_hash;  // hex64 of the dataset config
  std::string aggregation = "single";  // eval-time head combination
  std::size_t eval_head = 0;
};

struct LoadedCheckpoint {
  ModelParams params;
  ModelShape shape;
  CheckpointMeta meta;
};

void save_checkpoint(const ModelParams& params, const ModelShape& shape,
                     const CheckpointMeta& meta, const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace shortcutlab
