#include "shortcutlab/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Shape and init
// ---------------------------------------------------------------------------

void ModelShape::validate() const {
  if (input_dim == 0) throw ConfigError("ModelShape: zero input dim");
  if (classes < 2) throw ConfigError("ModelShape: need at least two classes");
  if (num_heads == 0) throw ConfigError("ModelShape: need at least one head");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("ModelShape: zero hidden dim");
}

ModelParams init_model(const ModelShape& shape, std::uint64_t seed) {
  shape.validate();
  ModelParams p;
  std::size_t in = shape.input_dim;
  for (std::size_t l = 0; l < shape.hidden.size(); ++l) {
    RngStream rng(seed, stream_id("model-init/extractor", l));
    p.extractor.push_back(init_layer(in, shape.hidden[l], rng));
    in = shape.hidden[l];
  }
  for (std::size_t h = 0; h < shape.num_heads; ++h) {
    RngStream rng(seed, stream_id("model-init/head", h));
    p.heads.push_back(init_layer(shape.feature_dim(), shape.classes, rng));
  }
  if (shape.with_shift_head) {
    RngStream rng(seed, stream_id("model-init/shift"));
    p.shift_head = init_layer(shape.feature_dim(), shape.num_heads, rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

// pixels arrive in [0, 1]; train on a centered copy so the first layer does
// not have to fight the global-mean direction
Matrix center_pixels(const Matrix& input) {
  Matrix out = input;
  for (double& v : out.data) v -= 0.5;
  return out;
}

}  // namespace

Matrix extract_features(const ModelParams& p, const Matrix& input, ForwardCache* cache) {
  Matrix cur = center_pixels(input);
  for (const LayerParams& layer : p.extractor) {
    Matrix pre = dense_forward(cur, layer);
    Matrix post = relu(pre);
    if (cache) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
    }
    cur = std::move(post);
  }
  return cur;
}

Matrix head_logits(const ModelParams& p, std::size_t head, const Matrix& features) {
  if (head >= p.heads.size()) throw ConfigError("head_logits: head index out of range");
  return dense_forward(features, p.heads[head]);
}

Matrix shift_logits(const ModelParams& p, const Matrix& features) {
  if (p.shift_head.weight.rows == 0) throw ConfigError("shift_logits: model has no shift head");
  return dense_forward(features, p.shift_head);
}

std::vector<LayerParams> extractor_backward(const ModelParams& p, const Matrix& input,
                                            const ForwardCache& cache, const Matrix& d_features) {
  if (cache.pre.size() != p.extractor.size())
    throw ConfigError("extractor_backward: cache does not match extractor depth");
  std::vector<LayerParams> grads(p.extractor.size());
  Matrix x0 = center_pixels(input);
  Matrix d = d_features;
  for (std::size_t l = p.extractor.size(); l-- > 0;) {
    Matrix d_pre = relu_backward(cache.pre[l], d);
    const Matrix& layer_in = l == 0 ? x0 : cache.post[l - 1];
    DenseGrads g = dense_backward(layer_in, p.extractor[l], d_pre);
    grads[l] = std::move(g.d_params);
    d = std::move(g.d_input);
  }
  return grads;
}

Matrix batch_matrix(const std::vector<Sample>& pool, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("batch_matrix: empty index list");
  std::size_t dim = pool.at(indices[0]).image.size();
  Matrix x(indices.size(), dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = pool.at(indices[i]);
    if (s.image.size() != dim) throw DataError("batch_matrix: inconsistent image sizes");
    double* row = x.row(i);
    for (std::size_t k = 0; k < dim; ++k) row[k] = static_cast<double>(s.image[k]);
  }
  return x;
}

// ---------------------------------------------------------------------------
// LLE training step
// ---------------------------------------------------------------------------

namespace {

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.row(i), m.row(rows[i]), m.cols * sizeof(double));
  return out;
}

bool needs_donor(AugmentationKind k) {
  return k == AugmentationKind::background_swap || k == AugmentationKind::coobject_swap;
}

}  // namespace

LleStepStats lle_training_step(ModelParams& params, const DatasetConfig& cfg,
                               const std::vector<Sample>& pool,
                               const std::vector<std::size_t>& batch,
                               const std::vector<AugmentationKind>& kinds, RngStream& rng,
                               const LleStepOptions& opts) {
  std::size_t n_heads = params.heads.size();
  if (kinds.size() != n_heads) throw ConfigError("lle_training_step: kinds/head count mismatch");
  if (params.shift_head.weight.rows != n_heads)
    throw ConfigError("lle_training_step: shift head must have one output per head");
  if (batch.empty()) throw ConfigError("lle_training_step: empty batch");

  std::size_t n = batch.size();
  LleStepStats stats;
  stats.routed.assign(n_heads, 0);

  // Route and transform. Draw order per example: kind, then donor, then any
  // augmentation parameters.
  std::vector<std::size_t> route(n);
  std::vector<Sample> transformed;
  transformed.reserve(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = pool.at(batch[i]);
    std::size_t d = rng.next_index(n_heads);
    route[i] = d;
    stats.routed[d] += 1;
    labels[i] = s.y;
    AugmentationKind kind = kinds[d];
    if (needs_donor(kind)) {
      // a uniform donor leaves the swapped cue uncorrelated with the label,
      // which is the distribution the swap head is meant to be robust to
      const Sample& donor = pool[rng.next_index(pool.size())];
      transformed.push_back(apply_augmentation(kind, cfg, s, &donor, rng));
    } else {
      transformed.push_back(apply_augmentation(kind, cfg, s, nullptr, rng));
    }
  }

  std::size_t dim = transformed[0].image.size();
  Matrix x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = x.row(i);
    for (std::size_t k = 0; k < dim; ++k) row[k] = static_cast<double>(transformed[i].image[k]);
  }

  ForwardCache cache;
  Matrix features = extract_features(params, x, &cache);

  // Target losses per head, averaged over the heads that saw examples.
  Matrix d_features(features.rows, features.cols);
  std::vector<LayerParams> head_grads(n_heads);
  std::vector<bool> head_active(n_heads, false);
  bool extractor_active = false;
  if (opts.target_loss_enabled) {
    std::size_t active = 0;
    for (std::size_t h = 0; h < n_heads; ++h) active += stats.routed[h] > 0;
    for (std::size_t h = 0; h < n_heads; ++h) {
      if (stats.routed[h] == 0) continue;
      std::vector<std::size_t> rows;
      std::vector<int> sub_labels;
      for (std::size_t i = 0; i < n; ++i) {
        if (route[i] != h) continue;
        rows.push_back(i);
        sub_labels.push_back(labels[i]);
      }
      Matrix fsub = take_rows(features, rows);
      Matrix z = dense_forward(fsub, params.heads[h]);
      LossResult ce = softmax_cross_entropy(z, sub_labels);
      stats.target_loss += ce.loss / static_cast<double>(active);
      for (double& v : ce.d_logits.data) v /= static_cast<double>(active);
      DenseGrads g = dense_backward(fsub, params.heads[h], ce.d_logits);
      head_grads[h] = std::move(g.d_params);
      head_active[h] = true;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        double* dst = d_features.row(rows[r]);
        const double* src = g.d_input.row(r);
        for (std::size_t k = 0; k < d_features.cols; ++k) dst[k] += src[k];
      }
    }
    extractor_active = true;
  }

  // Shift loss: classify the drawn kind from the features. The stop gradient
  // is structural: only the head's own parameter gradients are kept.
  std::vector<int> route_labels(n);
  for (std::size_t i = 0; i < n; ++i) route_labels[i] = static_cast<int>(route[i]);
  Matrix zs = dense_forward(features, params.shift_head);
  LossResult shift_ce = softmax_cross_entropy(zs, route_labels);
  stats.shift_loss = shift_ce.loss;
  LayerParams shift_grads;
  bool shift_active = opts.lambda_shift != 0.0;
  if (shift_active) {
    for (double& v : shift_ce.d_logits.data) v *= opts.lambda_shift;
    shift_grads = dense_backward(features, params.shift_head, shift_ce.d_logits).d_params;
  }

  // Apply updates; untouched blocks skip even the weight decay.
  if (extractor_active) {
    std::vector<LayerParams> ext_grads = extractor_backward(params, x, cache, d_features);
    for (std::size_t l = 0; l < params.extractor.size(); ++l)
      sgd_update(params.extractor[l], ext_grads[l], opts.lr, opts.weight_decay);
  }
  for (std::size_t h = 0; h < n_heads; ++h)
    if (head_active[h]) sgd_update(params.heads[h], head_grads[h], opts.lr, opts.weight_decay);
  if (shift_active) sgd_update(params.shift_head, shift_grads, opts.lr, opts.weight_decay);

  return stats;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

const char* aggregation_name(AggregationMode m) {
  switch (m) {
    case AggregationMode::dynamic: return "dynamic";
    case AggregationMode::mean: return "mean";
    case AggregationMode::single: return "single";
    default: return "sum";
  }
}

AggregationMode aggregation_from_name(std::string_view name) {
  for (AggregationMode m : {AggregationMode::dynamic, AggregationMode::mean,
                            AggregationMode::single, AggregationMode::sum})
    if (name == aggregation_name(m)) return m;
  throw ConfigError("aggregation_from_name: unknown mode '" + std::string(name) + "'");
}

Matrix aggregate_logits(const ModelParams& p, const Matrix& input, AggregationMode mode,
                        std::size_t single_head) {
  if (p.heads.empty()) throw ConfigError("aggregate_logits: model has no heads");
  Matrix features = extract_features(p, input);

  if (mode == AggregationMode::single) {
    if (single_head >= p.heads.size())
      throw ConfigError("aggregate_logits: selected head out of range");
    return dense_forward(features, p.heads[single_head]);
  }

  std::size_t n_heads = p.heads.size();
  Matrix weights(input.rows, n_heads);
  switch (mode) {
    case AggregationMode::dynamic:
      weights = softmax(shift_logits(p, features));
      break;
    case AggregationMode::mean:
      for (double& v : weights.data) v = 1.0 / static_cast<double>(n_heads);
      break;
    case AggregationMode::sum:
      for (double& v : weights.data) v = 1.0;
      break;
    default: break;
  }

  Matrix out;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Matrix z = dense_forward(features, p.heads[h]);
    if (h == 0) out = Matrix(z.rows, z.cols);
    for (std::size_t i = 0; i < z.rows; ++i)
      for (std::size_t c = 0; c < z.cols; ++c) out(i, c) += weights(i, h) * z(i, c);
  }
  return out;
}

std::vector<int> predict_classes(const Matrix& logits) {
  std::vector<int> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCkptVersion = "shortcutlab-ckpt-v1";

using nlohmann::json;

void append_doubles(std::vector<unsigned char>& buf, const Matrix& m) {
  for (double v : m.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
}

void read_doubles(const unsigned char*& p, Matrix& m) {
  for (double& v : m.data) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    std::memcpy(&v, &bits, 8);
    p += 8;
  }
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const LayerParams& l : params.extractor) n += l.weight.data.size() + l.bias.data.size();
  for (const LayerParams& l : params.heads) n += l.weight.data.size() + l.bias.data.size();
  n += params.shift_head.weight.data.size() + params.shift_head.bias.data.size();
  return n;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelShape& shape,
                     const CheckpointMeta& meta, const std::string& path) {
  shape.validate();
  if (params.heads.size() != shape.num_heads || meta.head_names.size() != shape.num_heads)
    throw ConfigError("save_checkpoint: head count mismatch");
  if (shape.with_shift_head != (params.shift_head.weight.rows > 0))
    throw ConfigError("save_checkpoint: shift head presence mismatch");

  json header;
  header["format_version"] = kCkptVersion;
  header["input_dim"] = shape.input_dim;
  header["hidden"] = shape.hidden;
  header["classes"] = shape.classes;
  header["head_names"] = meta.head_names;
  header["with_shift_head"] = shape.with_shift_head;
  header["method"] = meta.method;
  header["seed"] = meta.seed;
  header["selected_epoch"] = meta.selected_epoch;
  header["dataset_hash"] = meta.dataset_hash;
  header["aggregation"] = meta.aggregation;
  header["eval_head"] = meta.eval_head;
  header["payload_doubles"] = param_count(params);

  std::vector<unsigned char> payload;
  for (const LayerParams& l : params.extractor) {
    append_doubles(payload, l.weight);
    append_doubles(payload, l.bias);
  }
  for (const LayerParams& l : params.heads) {
    append_doubles(payload, l.weight);
    append_doubles(payload, l.bias);
  }
  if (shape.with_shift_head) {
    append_doubles(payload, params.shift_head.weight);
    append_doubles(payload, params.shift_head.bias);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open '" + path + "'");
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("load_checkpoint: bad header: " + std::string(e.what()));
  }
  if (header.at("format_version").get<std::string>() != kCkptVersion)
    throw DataError("load_checkpoint: unsupported format version");

  LoadedCheckpoint ck;
  ck.shape.input_dim = header.at("input_dim").get<std::size_t>();
  ck.shape.hidden = header.at("hidden").get<std::vector<std::size_t>>();
  ck.shape.classes = header.at("classes").get<std::size_t>();
  ck.meta.head_names = header.at("head_names").get<std::vector<std::string>>();
  ck.shape.num_heads = ck.meta.head_names.size();
  ck.shape.with_shift_head = header.at("with_shift_head").get<bool>();
  ck.meta.method = header.at("method").get<std::string>();
  ck.meta.seed = header.at("seed").get<std::uint64_t>();
  ck.meta.selected_epoch = header.at("selected_epoch").get<std::size_t>();
  ck.meta.dataset_hash = header.at("dataset_hash").get<std::string>();
  ck.meta.aggregation = header.value("aggregation", std::string("single"));
  ck.meta.eval_head = header.value("eval_head", std::size_t(0));
  ck.shape.validate();

  // Allocate parameter blocks, then fill from the payload.
  std::size_t in_dim = ck.shape.input_dim;
  for (std::size_t h : ck.shape.hidden) {
    LayerParams l;
    l.weight = Matrix(h, in_dim);
    l.bias = Matrix(1, h);
    ck.params.extractor.push_back(std::move(l));
    in_dim = h;
  }
  for (std::size_t h = 0; h < ck.shape.num_heads; ++h) {
    LayerParams l;
    l.weight = Matrix(ck.shape.classes, ck.shape.feature_dim());
    l.bias = Matrix(1, ck.shape.classes);
    ck.params.heads.push_back(std::move(l));
  }
  if (ck.shape.with_shift_head) {
    ck.params.shift_head.weight = Matrix(ck.shape.num_heads, ck.shape.feature_dim());
    ck.params.shift_head.bias = Matrix(1, ck.shape.num_heads);
  }

  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
  std::size_t expect = header.at("payload_doubles").get<std::size_t>();
  if (expect != param_count(ck.params) || payload.size() != expect * 8)
    throw DataError("load_checkpoint: payload size mismatch");

  const unsigned char* p = payload.data();
  for (LayerParams& l : ck.params.extractor) {
    read_doubles(p, l.weight);
    read_doubles(p, l.bias);
  }
  for (LayerParams& l : ck.params.heads) {
    read_doubles(p, l.weight);
    read_doubles(p, l.bias);
  }
  if (ck.shape.with_shift_head) {
    read_doubles(p, ck.params.shift_head.weight);
    read_doubles(p, ck.params.shift_head.bias);
  }
  return ck;
}

}  // namespace shortcutlab
