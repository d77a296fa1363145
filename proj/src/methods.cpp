#include "shortcutlab/methods.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Names and specs
// ---------------------------------------------------------------------------

namespace {

struct KindEntry {
  MethodKind kind;
  const char* name;
};

constexpr KindEntry kKinds[] = {
    {MethodKind::erm, "erm"},         {MethodKind::mixup, "mixup"},
    {MethodKind::cutout, "cutout"},   {MethodKind::cutmix, "cutmix"},
    {MethodKind::wmk_aug, "wmk_aug"}, {MethodKind::bg_aug, "bg_aug"},
    {MethodKind::coobj_aug, "coobj_aug"}, {MethodKind::txt_aug, "txt_aug"},
    {MethodKind::gdro, "gdro"},       {MethodKind::di, "di"},
    {MethodKind::subg, "subg"},       {MethodKind::dfr, "dfr"},
    {MethodKind::jtt, "jtt"},         {MethodKind::lff, "lff"},
    {MethodKind::lle, "lle"},
};

}  // namespace

const char* method_name(MethodKind k) {
  for (const KindEntry& e : kKinds)
    if (e.kind == k) return e.name;
  return "?";
}

MethodKind method_from_name(std::string_view name) {
  for (const KindEntry& e : kKinds)
    if (name == e.name) return e.kind;
  throw ConfigError("method_from_name: unknown method '" + std::string(name) + "'");
}

bool uses_shortcut_labels(MethodKind k) {
  return k == MethodKind::gdro || k == MethodKind::di || k == MethodKind::subg ||
         k == MethodKind::dfr;
}

double MethodSpec::param(const std::string& name, double fallback) const {
  auto it = params.find(name);
  return it == params.end() ? fallback : it->second;
}

void MethodSpec::validate(const DatasetConfig& cfg) const {
  if (uses_shortcut_labels(kind)) {
    if (shortcut_labels.empty())
      throw ConfigError(std::string("MethodSpec: ") + method_name(kind) +
                        " requires shortcut labels");
    resolve_cues(cfg, shortcut_labels);
  } else if (!shortcut_labels.empty()) {
    throw ConfigError(std::string("MethodSpec: ") + method_name(kind) +
                      " does not take shortcut labels");
  }
  for (const std::string& name : aug_kinds) augmentation_from_name(name);
  aggregation_from_name(lle_aggregation);
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("TrainConfig: negative weight decay");
  if (batch_size == 0) throw ConfigError("TrainConfig: zero batch size");
  if (eval_every == 0) throw ConfigError("TrainConfig: zero eval cadence");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("TrainConfig: zero hidden dim");
}

// ---------------------------------------------------------------------------
// Prediction helpers
// ---------------------------------------------------------------------------

Matrix predict_probs(const ModelParams& p, const std::vector<Sample>& rows, AggregationMode mode,
                     std::size_t single_head) {
  if (rows.empty()) throw DataError("predict_probs: empty split");
  std::size_t dim = rows[0].image.size();
  std::size_t classes = p.heads.at(0).bias.cols;
  Matrix probs(rows.size(), classes);
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    std::size_t end = std::min(rows.size(), start + chunk);
    Matrix x(end - start, dim);
    for (std::size_t i = start; i < end; ++i) {
      double* row = x.row(i - start);
      for (std::size_t k = 0; k < dim; ++k)
        row[k] = static_cast<double>(rows[i].image[k]);
    }
    Matrix z = softmax(aggregate_logits(p, x, mode, single_head));
    for (std::size_t i = start; i < end; ++i)
      std::memcpy(probs.row(i), z.row(i - start), classes * sizeof(double));
  }
  return probs;
}

PredictionTable predict_table(const DatasetConfig& cfg, const ModelParams& p,
                              const std::vector<Sample>& rows, AggregationMode mode,
                              std::size_t single_head, const std::string& tag) {
  return make_table(cfg, rows, predict_probs(p, rows, mode, single_head), tag);
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

std::vector<std::size_t> resolve_cues(const DatasetConfig& cfg,
                                      const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  if (names.empty()) {
    for (std::size_t c = 0; c < cfg.cues.size(); ++c) out.push_back(c);
    return out;
  }
  for (const std::string& name : names) {
    int idx = cue_index(cfg, name);
    if (idx < 0) throw ConfigError("resolve_cues: unknown cue '" + name + "'");
    out.push_back(static_cast<std::size_t>(idx));
  }
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end())
    throw ConfigError("resolve_cues: duplicate cue name");
  return out;
}

double subset_worst_group(const DatasetConfig& cfg, const GroupStats& gs,
                          const std::vector<std::size_t>& cue_subset) {
  std::size_t k = cfg.cues.size();
  std::size_t s = cue_subset.size();
  std::vector<std::size_t> correct(std::size_t(1) << (s + 1), 0), total(correct.size(), 0);
  for (std::size_t g = 0; g < gs.total.size(); ++g) {
    if (gs.total[g] == 0) continue;
    std::size_t y = g >> k;
    std::size_t key = y << s;
    for (std::size_t j = 0; j < s; ++j) key |= ((g >> cue_subset[j]) & 1) << j;
    correct[key] += gs.correct[g];
    total[key] += gs.total[g];
  }
  double worst = 2.0;
  for (std::size_t key = 0; key < total.size(); ++key) {
    if (total[key] == 0) continue;
    worst = std::min(worst, double(correct[key]) / double(total[key]));
  }
  if (worst > 1.0) throw DataError("subset_worst_group: no populated groups");
  return worst;
}

std::size_t select_early_stop(const DatasetConfig& cfg, const std::vector<EpochRecord>& records,
                              const std::vector<std::size_t>& cue_subset) {
  if (records.empty()) throw ConfigError("select_early_stop: no epochs recorded");
  std::size_t best = 0;
  double best_w = -1.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    double w = subset_worst_group(cfg, records[i].val.groups, cue_subset);
    if (w > best_w) {
      best_w = w;
      best = i;
    }
  }
  return records[best].epoch;
}

// ---------------------------------------------------------------------------
// Shared training loop
// ---------------------------------------------------------------------------

namespace {

std::vector<int> labels_of(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pool[i].y);
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t(0));
  return out;
}

ModelShape shape_for(const Dataset& ds, const TrainConfig& tc, std::size_t heads, bool shift) {
  ModelShape s;
  s.input_dim = ds.config.channels * ds.config.height * ds.config.width;
  s.hidden = tc.hidden;
  s.classes = ds.config.classes;
  s.num_heads = heads;
  s.with_shift_head = shift;
  return s;
}

// One SGD step of weighted cross-entropy on head 0; `frozen` restricts the
// update to the head.
double supervised_step_on(ModelParams& p, const Matrix& x, const std::vector<int>& labels,
                          const std::vector<double>& weights, const TrainConfig& tc,
                          bool frozen) {
  ForwardCache cache;
  Matrix f = extract_features(p, x, &cache);
  Matrix z = dense_forward(f, p.heads[0]);
  LossResult ce = softmax_cross_entropy(z, labels, weights);
  DenseGrads head = dense_backward(f, p.heads[0], ce.d_logits);
  if (!frozen) {
    std::vector<LayerParams> ext = extractor_backward(p, x, cache, head.d_input);
    for (std::size_t l = 0; l < p.extractor.size(); ++l)
      sgd_update(p.extractor[l], ext[l], tc.lr, tc.weight_decay);
  }
  sgd_update(p.heads[0], head.d_params, tc.lr, tc.weight_decay);
  return ce.loss;
}

double mixed_step_on(ModelParams& p, const MixedBatch& mb, const TrainConfig& tc) {
  ForwardCache cache;
  Matrix f = extract_features(p, mb.images, &cache);
  Matrix z = dense_forward(f, p.heads[0]);
  LossResult ce = mixed_cross_entropy(z, mb);
  DenseGrads head = dense_backward(f, p.heads[0], ce.d_logits);
  std::vector<LayerParams> ext = extractor_backward(p, mb.images, cache, head.d_input);
  for (std::size_t l = 0; l < p.extractor.size(); ++l)
    sgd_update(p.extractor[l], ext[l], tc.lr, tc.weight_decay);
  sgd_update(p.heads[0], head.d_params, tc.lr, tc.weight_decay);
  return ce.loss;
}

struct TrainLoop {
  const Dataset& ds;
  const TrainConfig& tc;
  std::string prefix = "train";
  std::vector<std::size_t> pool;        // indices into ds.train
  std::vector<std::size_t> cue_subset;  // early-stop partition
  bool record_val = true;
  std::function<void(std::size_t)> epoch_start;
  std::function<double(ModelParams&, const std::vector<std::size_t>&, std::size_t)> step;

  TrainLoop(const Dataset& d, const TrainConfig& t) : ds(d), tc(t) {
    pool = all_indices(d.train.size());
    for (std::size_t c = 0; c < d.config.cues.size(); ++c) cue_subset.push_back(c);
  }

  RunResult run(const ModelShape& shape, ModelParams params, std::vector<std::string> head_names,
                AggregationMode eval_mode, std::size_t eval_head) {
    tc.validate();
    if (pool.empty()) throw DataError("train loop: empty training pool");
    RunResult rr;
    rr.shape = shape;
    rr.head_names = std::move(head_names);
    rr.eval_mode = eval_mode;
    rr.eval_head = eval_head;

    std::vector<std::size_t> order = pool;
    double best_metric = -1.0;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
      RngStream shuffle_rng(tc.seed, stream_id(prefix + "/shuffle", epoch));
      shuffle_rng.shuffle(order);
      if (epoch_start) epoch_start(epoch);

      double loss_sum = 0.0;
      std::size_t steps = 0;
      for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
        std::size_t end = std::min(order.size(), start + tc.batch_size);
        std::vector<std::size_t> batch(order.begin() + long(start), order.begin() + long(end));
        double loss = step(params, batch, epoch);
        if (!std::isfinite(loss))
          throw TrainingError("train loop: non-finite loss at epoch " +
                              std::to_string(epoch + 1) + ", step " + std::to_string(steps + 1));
        loss_sum += loss;
        ++steps;
      }

      bool eval_now =
          record_val && ((epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs);
      if (eval_now) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / double(steps);
        rec.val = evaluate(ds.config,
                           predict_table(ds.config, params, ds.val, eval_mode, eval_head, "val"));
        double w = subset_worst_group(ds.config, rec.val.groups, cue_subset);
        if (rr.selected_epoch == 0 || w > best_metric) {
          best_metric = w;
          rr.best_params = params;
          rr.selected_epoch = rec.epoch;
        }
        rr.records.push_back(std::move(rec));
      }
    }
    rr.final_params = std::move(params);
    if (rr.selected_epoch == 0) rr.best_params = rr.final_params;
    return rr;
  }
};

bool augmentation_needs_donor(AugmentationKind k) {
  return k == AugmentationKind::background_swap || k == AugmentationKind::coobject_swap;
}

}  // namespace

// ---------------------------------------------------------------------------
// ERM and category-1 trainers
// ---------------------------------------------------------------------------

RunResult train_erm(const Dataset& ds, const TrainConfig& tc) {
  ModelShape shape = shape_for(ds, tc, 1, false);
  TrainLoop loop(ds, tc);
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    return supervised_step_on(p, x, labels_of(ds.train, batch), {}, tc, false);
  };
  return loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
}

namespace {

RunResult train_batch_augmented(
    const Dataset& ds, const TrainConfig& tc,
    const std::function<MixedBatch(const Matrix&, const std::vector<int>&, RngStream&)>& make) {
  ModelShape shape = shape_for(ds, tc, 1, false);
  TrainLoop loop(ds, tc);
  RngStream aug_rng;
  loop.epoch_start = [&](std::size_t epoch) {
    aug_rng = RngStream(tc.seed, stream_id("train/aug", epoch));
  };
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    MixedBatch mb = make(x, labels_of(ds.train, batch), aug_rng);
    return mixed_step_on(p, mb, tc);
  };
  return loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
}

}  // namespace

RunResult train_mixup(const Dataset& ds, const TrainConfig& tc, double alpha) {
  return train_batch_augmented(
      ds, tc, [&](const Matrix& x, const std::vector<int>& labels, RngStream& rng) {
        return mixup_batch(x, labels, alpha, rng);
      });
}

RunResult train_cutout(const Dataset& ds, const TrainConfig& tc, double p) {
  const DatasetConfig& cfg = ds.config;
  return train_batch_augmented(
      ds, tc, [&, p](const Matrix& x, const std::vector<int>& labels, RngStream& rng) {
        return cutout_batch(x, labels, cfg.height, cfg.width, cfg.channels, p, rng);
      });
}

RunResult train_cutmix(const Dataset& ds, const TrainConfig& tc, double alpha) {
  const DatasetConfig& cfg = ds.config;
  return train_batch_augmented(
      ds, tc, [&, alpha](const Matrix& x, const std::vector<int>& labels, RngStream& rng) {
        return cutmix_batch(x, labels, cfg.height, cfg.width, cfg.channels, alpha, rng);
      });
}

// ---------------------------------------------------------------------------
// Targeted augmentation training
// ---------------------------------------------------------------------------

RunResult targeted_aug_training(const Dataset& ds, const TrainConfig& tc,
                                const std::vector<AugmentationKind>& kinds) {
  for (AugmentationKind k : kinds)
    if (k == AugmentationKind::identity)
      throw ConfigError("targeted_aug_training: identity is not a targeted kind");
  const DatasetConfig& cfg = ds.config;
  ModelShape shape = shape_for(ds, tc, 1, false);

  TrainLoop loop(ds, tc);
  RngStream aug_rng;
  loop.epoch_start = [&](std::size_t epoch) {
    aug_rng = RngStream(tc.seed, stream_id("train/aug", epoch));
  };
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    if (kinds.empty()) {
      Matrix x = batch_matrix(ds.train, batch);
      return supervised_step_on(p, x, labels_of(ds.train, batch), {}, tc, false);
    }
    std::size_t n = batch.size();
    std::size_t dim = shape.input_dim;
    Matrix x(n, dim);
    std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const std::vector<float>& img = ds.train[batch[i]].image;
      double* row = x.row(i);
      for (std::size_t k = 0; k < dim; ++k) row[k] = double(img[k]);
    }
    for (std::size_t i = half; i < n; ++i) {
      const Sample& s = ds.train[batch[i]];
      AugmentationKind kind = kinds[aug_rng.next_index(kinds.size())];
      const Sample* donor = nullptr;
      if (augmentation_needs_donor(kind))
        donor = &ds.train[aug_rng.next_index(ds.train.size())];
      Sample aug = apply_augmentation(kind, cfg, s, donor, aug_rng);
      double* row = x.row(i);
      for (std::size_t k = 0; k < dim; ++k) row[k] = double(aug.image[k]);
    }
    return supervised_step_on(p, x, labels_of(ds.train, batch), {}, tc, false);
  };
  return loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
}

// ---------------------------------------------------------------------------
// Group DRO
// ---------------------------------------------------------------------------

RunResult train_gdro(const Dataset& ds, const TrainConfig& tc,
                     const std::vector<std::string>& labels, double eta, double gamma,
                     std::vector<std::vector<double>>* q_trace) {
  if (eta < 0.0) throw ConfigError("train_gdro: negative eta");
  if (gamma < 0.0) throw ConfigError("train_gdro: negative gamma");
  const DatasetConfig& cfg = ds.config;
  std::vector<std::size_t> subset = resolve_cues(cfg, labels);
  std::size_t s = subset.size();
  std::size_t n_q = std::size_t(1) << (s + 1);

  auto key_of = [&](const Sample& sm) {
    std::size_t key = std::size_t(sm.y) << s;
    for (std::size_t j = 0; j < s; ++j)
      key |= std::size_t(sm.cue_labels[subset[j]]) << j;
    return key;
  };

  std::vector<std::size_t> group_sizes(n_q, 0);
  for (const Sample& sm : ds.train) group_sizes[key_of(sm)] += 1;
  std::size_t present = 0;
  for (std::size_t n : group_sizes) present += n > 0;
  if (present == 0) throw DataError("train_gdro: empty training split");

  std::vector<double> adjustment(n_q, 0.0);
  for (std::size_t g = 0; g < n_q; ++g)
    if (group_sizes[g] > 0) adjustment[g] = gamma / std::sqrt(double(group_sizes[g]));

  std::vector<double> q(n_q, 0.0);
  for (std::size_t g = 0; g < n_q; ++g)
    if (group_sizes[g] > 0) q[g] = 1.0 / double(present);

  ModelShape shape = shape_for(ds, tc, 1, false);
  TrainLoop loop(ds, tc);
  loop.cue_subset = subset;
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    std::vector<int> y = labels_of(ds.train, batch);

    ForwardCache cache;
    Matrix f = extract_features(p, x, &cache);
    Matrix z = dense_forward(f, p.heads[0]);
    Matrix probs = softmax(z);

    std::vector<double> loss_sum(n_q, 0.0);
    std::vector<std::size_t> count(n_q, 0);
    std::vector<std::size_t> keys(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      keys[i] = key_of(ds.train[batch[i]]);
      double py = std::max(probs(i, std::size_t(y[i])), 1e-12);
      loss_sum[keys[i]] += -std::log(py);
      count[keys[i]] += 1;
    }
    for (std::size_t g = 0; g < n_q; ++g) {
      if (count[g] == 0) continue;
      double adjusted = loss_sum[g] / double(count[g]) + adjustment[g];
      q[g] *= std::exp(eta * adjusted);
    }
    double q_sum = 0.0;
    for (double v : q) q_sum += v;
    for (double& v : q) v /= q_sum;
    if (q_trace) q_trace->push_back(q);

    std::vector<double> w(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) w[i] = q[keys[i]] / double(count[keys[i]]);
    LossResult ce = softmax_cross_entropy(z, y, w);
    DenseGrads head = dense_backward(f, p.heads[0], ce.d_logits);
    std::vector<LayerParams> ext = extractor_backward(p, x, cache, head.d_input);
    for (std::size_t l = 0; l < p.extractor.size(); ++l)
      sgd_update(p.extractor[l], ext[l], tc.lr, tc.weight_decay);
    sgd_update(p.heads[0], head.d_params, tc.lr, tc.weight_decay);
    return ce.loss;
  };
  return loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
}

// ---------------------------------------------------------------------------
// SUBG and DFR
// ---------------------------------------------------------------------------

std::vector<std::size_t> subsample_groups(const DatasetConfig& cfg,
                                          const std::vector<Sample>& pool,
                                          const std::vector<std::size_t>& cue_subset,
                                          RngStream& rng) {
  std::size_t s = cue_subset.size();
  std::vector<std::vector<std::size_t>> buckets(std::size_t(1) << (s + 1));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    std::size_t key = std::size_t(pool[i].y) << s;
    for (std::size_t j = 0; j < s; ++j)
      key |= std::size_t(pool[i].cue_labels[cue_subset[j]]) << j;
    buckets[key].push_back(i);
  }
  std::size_t min_size = pool.size();
  for (const std::vector<std::size_t>& b : buckets) {
    if (b.empty()) throw DataError("subsample_groups: empty group");
    min_size = std::min(min_size, b.size());
  }
  std::vector<std::size_t> out;
  for (std::vector<std::size_t>& b : buckets) {
    rng.shuffle(b);
    out.insert(out.end(), b.begin(), b.begin() + long(min_size));
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunResult train_subg(const Dataset& ds, const TrainConfig& tc,
                     const std::vector<std::string>& labels) {
  const DatasetConfig& cfg = ds.config;
  std::vector<std::size_t> subset = resolve_cues(cfg, labels);
  RngStream sample_rng(tc.seed, stream_id("subg/sample"));

  ModelShape shape = shape_for(ds, tc, 1, false);
  TrainLoop loop(ds, tc);
  loop.pool = subsample_groups(cfg, ds.train, subset, sample_rng);
  loop.cue_subset = subset;
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    return supervised_step_on(p, x, labels_of(ds.train, batch), {}, tc, false);
  };
  return loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
}

RunResult retrain_dfr(const Dataset& ds, const TrainConfig& tc, const ModelShape& erm_shape,
                      const ModelParams& erm_params, const std::vector<std::string>& labels) {
  if (erm_shape.num_heads != 1 || erm_params.heads.size() != 1)
    throw ConfigError("retrain_dfr: expects a single-head checkpoint");
  const DatasetConfig& cfg = ds.config;
  std::vector<std::size_t> subset = resolve_cues(cfg, labels);
  RngStream sample_rng(tc.seed, stream_id("dfr/sample"));

  ModelParams params;
  params.extractor = erm_params.extractor;
  RngStream head_rng(tc.seed, stream_id("dfr/head-init"));
  params.heads.push_back(init_layer(erm_shape.feature_dim(), erm_shape.classes, head_rng));

  TrainLoop loop(ds, tc);
  loop.pool = subsample_groups(cfg, ds.train, subset, sample_rng);
  loop.cue_subset = subset;
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    return supervised_step_on(p, x, labels_of(ds.train, batch), {}, tc, true);
  };
  return loop.run(erm_shape, std::move(params), {"identity"}, AggregationMode::single, 0);
}

// ---------------------------------------------------------------------------
// Domain invariance
// ---------------------------------------------------------------------------

RunResult train_di(const Dataset& ds, const TrainConfig& tc,
                   const std::vector<std::string>& labels) {
  const DatasetConfig& cfg = ds.config;
  std::vector<std::size_t> subset;
  if (!labels.empty()) subset = resolve_cues(cfg, labels);
  std::size_t s = subset.size();
  std::size_t domains = std::size_t(1) << s;

  auto domain_of = [&](const Sample& sm) {
    std::size_t d = 0;
    for (std::size_t j = 0; j < s; ++j) d |= std::size_t(sm.cue_labels[subset[j]]) << j;
    return d;
  };

  ModelShape shape = shape_for(ds, tc, domains, false);
  std::vector<std::string> head_names;
  for (std::size_t d = 0; d < domains; ++d) head_names.push_back("domain" + std::to_string(d));

  TrainLoop loop(ds, tc);
  loop.cue_subset = subset.empty() ? loop.cue_subset : subset;
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    ForwardCache cache;
    Matrix f = extract_features(p, x, &cache);
    Matrix d_features(f.rows, f.cols);

    double total_loss = 0.0;
    std::vector<LayerParams> head_grads(domains);
    std::vector<bool> head_active(domains, false);
    for (std::size_t d = 0; d < domains; ++d) {
      std::vector<std::size_t> rows;
      std::vector<int> sub_y;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (domain_of(ds.train[batch[i]]) != d) continue;
        rows.push_back(i);
        sub_y.push_back(ds.train[batch[i]].y);
      }
      if (rows.empty()) continue;
      Matrix fsub(rows.size(), f.cols);
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::memcpy(fsub.row(r), f.row(rows[r]), f.cols * sizeof(double));
      Matrix z = dense_forward(fsub, p.heads[d]);
      LossResult ce = softmax_cross_entropy(z, sub_y);
      double scale = double(rows.size()) / double(batch.size());
      total_loss += scale * ce.loss;
      for (double& v : ce.d_logits.data) v *= scale;
      DenseGrads g = dense_backward(fsub, p.heads[d], ce.d_logits);
      head_grads[d] = std::move(g.d_params);
      head_active[d] = true;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        double* dst = d_features.row(rows[r]);
        const double* src = g.d_input.row(r);
        for (std::size_t c = 0; c < f.cols; ++c) dst[c] += src[c];
      }
    }
    std::vector<LayerParams> ext = extractor_backward(p, x, cache, d_features);
    for (std::size_t l = 0; l < p.extractor.size(); ++l)
      sgd_update(p.extractor[l], ext[l], tc.lr, tc.weight_decay);
    for (std::size_t d = 0; d < domains; ++d)
      if (head_active[d]) sgd_update(p.heads[d], head_grads[d], tc.lr, tc.weight_decay);
    return total_loss;
  };
  return loop.run(shape, init_model(shape, tc.seed), head_names, AggregationMode::sum, 0);
}

// ---------------------------------------------------------------------------
// JTT
// ---------------------------------------------------------------------------

RunResult train_jtt(const Dataset& ds, const TrainConfig& tc, std::size_t ref_epochs,
                    double lambda_up) {
  if (ref_epochs < 1) throw ConfigError("train_jtt: need at least one reference epoch");
  if (lambda_up <= 0.0) throw ConfigError("train_jtt: lambda_up must be positive");

  // Phase 1: under-trained reference on its own stream family.
  TrainConfig ref_tc = tc;
  ref_tc.epochs = ref_epochs;
  ref_tc.seed = stream_id("jtt-ref", tc.seed);
  RunResult ref = train_erm(ds, ref_tc);

  Matrix probs = predict_probs(ref.final_params, ds.train, AggregationMode::single, 0);
  std::vector<double> weights(ds.train.size(), 1.0);
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols; ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    if (int(best) != ds.train[i].y) weights[i] = lambda_up;
  }

  // Phase 2: from scratch on the standard streams with upweighted errors.
  ModelShape shape = shape_for(ds, tc, 1, false);
  TrainLoop loop(ds, tc);
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    std::vector<double> w;
    w.reserve(batch.size());
    for (std::size_t i : batch) w.push_back(weights[i]);
    return supervised_step_on(p, x, labels_of(ds.train, batch), w, tc, false);
  };
  return loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
}

// ---------------------------------------------------------------------------
// LfF
// ---------------------------------------------------------------------------

RunResult train_lff(const Dataset& ds, const TrainConfig& tc, double q, double weight_override,
                    ModelParams* bias_out) {
  if (q <= 0.0 || q > 1.0) throw ConfigError("train_lff: q must be in (0, 1]");
  if (weight_override > 1.0) throw ConfigError("train_lff: weight override above 1");

  ModelShape shape = shape_for(ds, tc, 1, false);
  ModelParams bias = init_model(shape, stream_id("lff-bias", tc.seed));

  TrainLoop loop(ds, tc);
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    Matrix x = batch_matrix(ds.train, batch);
    std::vector<int> y = labels_of(ds.train, batch);

    ForwardCache cache_d, cache_b;
    Matrix fd = extract_features(p, x, &cache_d);
    Matrix zd = dense_forward(fd, p.heads[0]);
    Matrix fb = extract_features(bias, x, &cache_b);
    Matrix zb = dense_forward(fb, bias.heads[0]);

    std::vector<double> w(batch.size(), weight_override);
    if (weight_override < 0.0) {
      Matrix pd = softmax(zd);
      Matrix pb = softmax(zb);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t yi = std::size_t(y[i]);
        double lb = -std::log(std::max(pb(i, yi), 1e-12));
        double ld = -std::log(std::max(pd(i, yi), 1e-12));
        w[i] = lb + ld == 0.0 ? 0.5 : lb / (lb + ld);
      }
    }

    LossResult ce = softmax_cross_entropy(zd, y, w);
    DenseGrads head = dense_backward(fd, p.heads[0], ce.d_logits);
    std::vector<LayerParams> ext = extractor_backward(p, x, cache_d, head.d_input);
    for (std::size_t l = 0; l < p.extractor.size(); ++l)
      sgd_update(p.extractor[l], ext[l], tc.lr, tc.weight_decay);
    sgd_update(p.heads[0], head.d_params, tc.lr, tc.weight_decay);

    LossResult gce = generalized_cross_entropy(zb, y, q);
    DenseGrads bias_head = dense_backward(fb, bias.heads[0], gce.d_logits);
    std::vector<LayerParams> bias_ext = extractor_backward(bias, x, cache_b, bias_head.d_input);
    for (std::size_t l = 0; l < bias.extractor.size(); ++l)
      sgd_update(bias.extractor[l], bias_ext[l], tc.lr, tc.weight_decay);
    sgd_update(bias.heads[0], bias_head.d_params, tc.lr, tc.weight_decay);

    return ce.loss;
  };
  RunResult rr =
      loop.run(shape, init_model(shape, tc.seed), {"identity"}, AggregationMode::single, 0);
  if (bias_out) *bias_out = std::move(bias);
  return rr;
}

// ---------------------------------------------------------------------------
// LLE
// ---------------------------------------------------------------------------

RunResult train_lle(const Dataset& ds, const TrainConfig& tc,
                    const std::vector<AugmentationKind>& kinds, double lambda_shift,
                    AggregationMode eval_mode) {
  if (kinds.empty()) throw ConfigError("train_lle: empty augmentation set");
  for (std::size_t i = 0; i < kinds.size(); ++i)
    for (std::size_t j = i + 1; j < kinds.size(); ++j)
      if (kinds[i] == kinds[j]) throw ConfigError("train_lle: duplicate augmentation kind");

  const DatasetConfig& cfg = ds.config;
  ModelShape shape = shape_for(ds, tc, kinds.size(), true);
  std::vector<std::string> head_names;
  for (AugmentationKind k : kinds) head_names.push_back(augmentation_name(k));
  std::size_t eval_head = 0;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == AugmentationKind::identity) eval_head = i;

  TrainLoop loop(ds, tc);
  RngStream aug_rng;
  loop.epoch_start = [&](std::size_t epoch) {
    aug_rng = RngStream(tc.seed, stream_id("train/lle-aug", epoch));
  };
  LleStepOptions opts;
  opts.lr = tc.lr;
  opts.weight_decay = tc.weight_decay;
  opts.lambda_shift = lambda_shift;
  loop.step = [&](ModelParams& p, const std::vector<std::size_t>& batch, std::size_t) {
    LleStepStats stats = lle_training_step(p, cfg, ds.train, batch, kinds, aug_rng, opts);
    return stats.target_loss + lambda_shift * stats.shift_loss;
  };
  return loop.run(shape, init_model(shape, tc.seed), head_names, eval_mode, eval_head);
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

RunResult train_method(const Dataset& ds, const TrainConfig& tc, const MethodSpec& spec) {
  spec.validate(ds.config);
  switch (spec.kind) {
    case MethodKind::erm: return train_erm(ds, tc);
    case MethodKind::mixup: return train_mixup(ds, tc, spec.param("alpha", 0.2));
    case MethodKind::cutout: return train_cutout(ds, tc, spec.param("p", 0.1));
    case MethodKind::cutmix: return train_cutmix(ds, tc, spec.param("alpha", 1.0));
    case MethodKind::wmk_aug:
      return targeted_aug_training(ds, tc, {AugmentationKind::watermark_random});
    case MethodKind::bg_aug:
      return targeted_aug_training(ds, tc, {AugmentationKind::background_swap});
    case MethodKind::coobj_aug:
      return targeted_aug_training(ds, tc, {AugmentationKind::coobject_swap});
    case MethodKind::txt_aug:
      return targeted_aug_training(ds, tc, {AugmentationKind::texture_randomize});
    case MethodKind::gdro:
      return train_gdro(ds, tc, spec.shortcut_labels, spec.param("eta", 0.01),
                        spec.param("gamma", 0.1));
    case MethodKind::di: return train_di(ds, tc, spec.shortcut_labels);
    case MethodKind::subg: return train_subg(ds, tc, spec.shortcut_labels);
    case MethodKind::dfr: {
      RunResult erm = train_erm(ds, tc);
      return retrain_dfr(ds, tc, erm.shape, erm.best_params, spec.shortcut_labels);
    }
    case MethodKind::jtt:
      return train_jtt(ds, tc, std::size_t(spec.param("E", 1.0)),
                       spec.param("lambda_up", 100.0));
    case MethodKind::lff: return train_lff(ds, tc, spec.param("q", 0.7));
    case MethodKind::lle: {
      std::vector<AugmentationKind> kinds;
      if (spec.aug_kinds.empty()) {
        kinds = {AugmentationKind::identity, AugmentationKind::background_swap,
                 AugmentationKind::coobject_swap};
        if (cue_index(ds.config, "watermark") >= 0)
          kinds.push_back(AugmentationKind::watermark_random);
      } else {
        for (const std::string& name : spec.aug_kinds)
          kinds.push_back(augmentation_from_name(name));
      }
      return train_lle(ds, tc, kinds, spec.param("lambda_shift", 1.0),
                       aggregation_from_name(spec.lle_aggregation));
    }
  }
  throw ConfigError("train_method: unknown method kind");
}

}  // namespace shortcutlab
