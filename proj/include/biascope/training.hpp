#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "biascope/annotation.hpp"
#include "biascope/dataset.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/log.hpp"
#include "biascope/rng.hpp"
#include "biascope/vector_ops.hpp"

namespace biascope {

/// Softmax classifier head over frozen embeddings: scores = W x + b.
struct LinearModel {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // classes x dim, row-major
  std::vector<double> bias;

  LinearModel() = default;
  LinearModel(std::size_t c, std::size_t d) : classes(c), dim(d), weights(c * d, 0.0), bias(c, 0.0) {}

  std::span<const double> row(std::size_t k) const { return {weights.data() + k * dim, dim}; }

  std::vector<double> scores(std::span<const double> x) const {
    if (x.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "input has dimension " + std::to_string(x.size()) + ", model expects " + std::to_string(dim));
    }
    std::vector<double> out(classes);
    for (std::size_t k = 0; k < classes; ++k) out[k] = dot(row(k), x) + bias[k];
    return out;
  }

  bool operator==(const LinearModel&) const = default;
};

struct Prediction {
  int label = 0;
  std::vector<double> scores;
};

/// argmax of W x + b, lowest class index on ties.
inline Prediction predict(const LinearModel& model, std::span<const double> x) {
  Prediction p;
  p.scores = model.scores(x);
  for (std::size_t k = 1; k < p.scores.size(); ++k) {
    if (p.scores[k] > p.scores[static_cast<std::size_t>(p.label)]) p.label = static_cast<int>(k);
  }
  return p;
}

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-3;
  int epochs = 100;
  int batch_size = 256;
  double eta_q = 0.01;
  std::vector<double> group_adjustment;  // empty means all zero
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "learning_rate must be > 0");
    if (!(eta_q >= 0.0)) throw Error(ErrorCode::ConfigError, "eta_q must be >= 0");
    if (!(momentum >= 0.0) || !(weight_decay >= 0.0)) throw Error(ErrorCode::ConfigError, "momentum/weight_decay must be >= 0");
    if (epochs < 1 || batch_size < 1) throw Error(ErrorCode::ConfigError, "epochs and batch_size must be >= 1");
    for (double a : group_adjustment) {
      if (!(a >= 0.0)) throw Error(ErrorCode::ConfigError, "group_adjustment entries must be >= 0");
    }
  }

  Json to_json() const {
    return Json{{"learning_rate", learning_rate}, {"momentum", momentum},     {"weight_decay", weight_decay},
                {"epochs", epochs},               {"batch_size", batch_size}, {"eta_q", eta_q},
                {"group_adjustment", group_adjustment}, {"seed", seed}};
  }

  static TrainConfig from_json(const Json& j) { return from_json(j, TrainConfig()); }

  static TrainConfig from_json(const Json& j, TrainConfig base) {
    io::require_only(j, {"learning_rate", "momentum", "weight_decay", "epochs", "batch_size", "eta_q",
                         "group_adjustment", "seed"},
                     "train config");
    try {
      if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
      if (j.contains("momentum")) base.momentum = j.at("momentum").get<double>();
      if (j.contains("weight_decay")) base.weight_decay = j.at("weight_decay").get<double>();
      if (j.contains("epochs")) base.epochs = j.at("epochs").get<int>();
      if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<int>();
      if (j.contains("eta_q")) base.eta_q = j.at("eta_q").get<double>();
      if (j.contains("group_adjustment")) base.group_adjustment = j.at("group_adjustment").get<std::vector<double>>();
      if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("train config: ") + e.what());
    }
    return base;
  }
};

/// A training row as the optimizer sees it.
struct Example {
  std::span<const double> x;
  int label = 0;
  int group = 0;
};

// ---------------------------------------------------------------------------
// Loss and gradient
// ---------------------------------------------------------------------------

struct GroupLosses {
  std::vector<double> mean;          // per group; 0 for groups absent from the batch
  std::vector<std::size_t> count;    // samples per group in the batch
  std::vector<double> sample_loss;   // cross-entropy per example
  std::vector<double> probabilities; // batch x classes softmax
};

inline GroupLosses group_losses(const LinearModel& model, std::span<const Example> batch, std::size_t groups) {
  GroupLosses out;
  out.mean.assign(groups, 0.0);
  out.count.assign(groups, 0);
  out.sample_loss.resize(batch.size());
  out.probabilities.resize(batch.size() * model.classes);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    if (ex.group < 0 || static_cast<std::size_t>(ex.group) >= groups) {
      throw Error(ErrorCode::InvalidGroupId, "group id " + std::to_string(ex.group) + " outside [0, " +
                                                 std::to_string(groups) + ")");
    }
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= model.classes) {
      throw Error(ErrorCode::SchemaError, "label out of range in batch");
    }
    const auto z = model.scores(ex.x);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double lse = zmax + std::log(denom);
    const double loss = lse - z[static_cast<std::size_t>(ex.label)];
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "non-finite cross-entropy; training diverged");
    out.sample_loss[i] = loss;
    for (std::size_t k = 0; k < model.classes; ++k) out.probabilities[i * model.classes + k] = std::exp(z[k] - lse);
    const auto g = static_cast<std::size_t>(ex.group);
    out.mean[g] += loss;
    ++out.count[g];
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (out.count[g]) out.mean[g] /= static_cast<double>(out.count[g]);
  }
  return out;
}

struct Gradient {
  double loss = 0.0;
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Value and gradient of sum_g q_g L_g, where L_g is the mean cross-entropy of
/// the batch rows in group g (absent groups contribute nothing).
inline Gradient weighted_loss_gradient(const LinearModel& model, std::span<const Example> batch,
                                       std::span<const double> q, const GroupLosses& losses) {
  Gradient grad;
  grad.weights.assign(model.weights.size(), 0.0);
  grad.bias.assign(model.classes, 0.0);
  for (std::size_t g = 0; g < q.size(); ++g) {
    if (losses.count[g]) grad.loss += q[g] * losses.mean[g];
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    const auto g = static_cast<std::size_t>(ex.group);
    const double w = q[g] / static_cast<double>(losses.count[g]);
    for (std::size_t k = 0; k < model.classes; ++k) {
      double r = losses.probabilities[i * model.classes + k];
      if (static_cast<int>(k) == ex.label) r -= 1.0;
      const double coef = w * r;
      axpy(coef, ex.x, std::span<double>(grad.weights.data() + k * model.dim, model.dim));
      grad.bias[k] += coef;
    }
  }
  return grad;
}

inline Gradient weighted_loss_gradient(const LinearModel& model, std::span<const Example> batch,
                                       std::span<const double> q) {
  return weighted_loss_gradient(model, batch, q, group_losses(model, batch, q.size()));
}

// ---------------------------------------------------------------------------
// Group-DRO state and step
// ---------------------------------------------------------------------------

struct DROState {
  LinearModel model;
  std::vector<double> q;
  std::vector<double> momentum_weights;
  std::vector<double> momentum_bias;
  std::uint64_t step = 0;
  Rng rng;
};

/// Zero-initialized model, q uniform over `active` groups (inactive groups
/// hold zero mass for the whole run).
inline DROState make_dro_state(std::size_t classes, std::size_t dim, const std::vector<bool>& active,
                               std::uint64_t seed) {
  DROState s;
  s.model = LinearModel(classes, dim);
  s.momentum_weights.assign(classes * dim, 0.0);
  s.momentum_bias.assign(classes, 0.0);
  const auto n_active = static_cast<double>(std::count(active.begin(), active.end(), true));
  if (n_active == 0) throw Error(ErrorCode::EmptyGroup, "no group has training samples");
  s.q.resize(active.size());
  for (std::size_t g = 0; g < active.size(); ++g) s.q[g] = active[g] ? 1.0 / n_active : 0.0;
  s.rng = Rng(seed);
  return s;
}

inline DROState make_dro_state(std::size_t classes, std::size_t dim, std::size_t groups, std::uint64_t seed) {
  return make_dro_state(classes, dim, std::vector<bool>(groups, true), seed);
}

namespace detail {
inline void momentum_update(DROState& state, const std::vector<double>& grad_w, const std::vector<double>& grad_b,
                            const TrainConfig& config);
}  // namespace detail

/// One online Group-DRO step: exponentiated-gradient ascent on q with the
/// batch group losses, then SGD with momentum on sum_g q_g L_g + L2 decay.
/// Returns the batch group losses that drove the q update.
inline GroupLosses dro_step(DROState& state, std::span<const Example> batch, const TrainConfig& config) {
  const std::size_t G = state.q.size();
  if (!config.group_adjustment.empty() && config.group_adjustment.size() != G) {
    throw Error(ErrorCode::ConfigError, "group_adjustment must have one entry per group");
  }
  GroupLosses losses = group_losses(state.model, batch, G);

  double total = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    const double adj = config.group_adjustment.empty() ? 0.0 : config.group_adjustment[g];
    state.q[g] *= std::exp(config.eta_q * (losses.mean[g] + adj));
    total += state.q[g];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorCode::NonFiniteLoss, "group weights overflowed; lower eta_q");
  }
  for (double& qg : state.q) qg /= total;

  const Gradient grad = weighted_loss_gradient(state.model, batch, state.q, losses);
  detail::momentum_update(state, grad.weights, grad.bias, config);
  return losses;
}

namespace detail {

inline void momentum_update(DROState& state, const std::vector<double>& grad_w, const std::vector<double>& grad_b,
                            const TrainConfig& config) {
  LinearModel& m = state.model;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    const double g = grad_w[i] + config.weight_decay * m.weights[i];
    state.momentum_weights[i] = config.momentum * state.momentum_weights[i] + g;
    m.weights[i] -= config.learning_rate * state.momentum_weights[i];
  }
  for (std::size_t k = 0; k < m.classes; ++k) {
    const double g = grad_b[k] + config.weight_decay * m.bias[k];
    state.momentum_bias[k] = config.momentum * state.momentum_bias[k] + g;
    m.bias[k] -= config.learning_rate * state.momentum_bias[k];
  }
  ++state.step;
}

}  // namespace detail

/// Plain mini-batch SGD step on the batch mean cross-entropy. Written
/// independently of dro_step; the two coincide when there is one group.
inline double erm_step(DROState& state, std::span<const Example> batch, const TrainConfig& config) {
  const LinearModel& m = state.model;
  std::vector<double> grad_w(m.weights.size(), 0.0), grad_b(m.classes, 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  std::vector<double> p(m.classes);
  for (const Example& ex : batch) {
    const auto z = m.scores(ex.x);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double lse = zmax + std::log(denom);
    const double loss = lse - z[static_cast<std::size_t>(ex.label)];
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "non-finite cross-entropy; training diverged");
    loss_sum += loss;
    for (std::size_t k = 0; k < m.classes; ++k) {
      double r = std::exp(z[k] - lse);
      if (static_cast<int>(k) == ex.label) r -= 1.0;
      const double coef = inv_n * r;
      axpy(coef, ex.x, std::span<double>(grad_w.data() + k * m.dim, m.dim));
      grad_b[k] += coef;
    }
  }
  detail::momentum_update(state, grad_w, grad_b, config);
  return loss_sum * inv_n;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  std::vector<double> group_losses;
  std::vector<double> q;
  double val_worst_group = 0.0;
  double val_avg = 0.0;
};

struct TrainResult {
  LinearModel model;
  int selected_epoch = 0;
  std::vector<EpochLog> log;
  TrainConfig config;
};

enum class Selection { WorstGroup, Average };
enum class Objective { GroupDRO, ERM };

struct TrainOptions {
  Selection selection = Selection::WorstGroup;
  Objective objective = Objective::GroupDRO;
  // Called after every epoch with the live state (tests inspect trajectories).
  std::function<void(int, const DROState&)> on_epoch;
};

namespace detail {

struct ValScores {
  double worst = 0.0;
  double avg = 0.0;
};

inline ValScores validation_scores(const LinearModel& model, std::span<const Example> val, std::size_t groups) {
  std::vector<std::size_t> correct(groups, 0), total(groups, 0);
  std::size_t all_correct = 0;
  for (const Example& ex : val) {
    const bool ok = predict(model, ex.x).label == ex.label;
    all_correct += ok;
    const auto g = static_cast<std::size_t>(ex.group);
    if (g < groups) {
      correct[g] += ok;
      ++total[g];
    }
  }
  ValScores s;
  s.avg = val.empty() ? 0.0 : static_cast<double>(all_correct) / static_cast<double>(val.size());
  s.worst = 1.0;
  bool any = false;
  for (std::size_t g = 0; g < groups; ++g) {
    if (!total[g]) continue;
    any = true;
    s.worst = std::min(s.worst, static_cast<double>(correct[g]) / static_cast<double>(total[g]));
  }
  if (!any) s.worst = s.avg;
  return s;
}

}  // namespace detail

/// Seeded mini-batch loop over dro_step with best-validation checkpointing
/// (earliest epoch wins ties). Groups with no training rows are dropped from q.
inline TrainResult train_linear(std::size_t classes, std::size_t dim, std::span<const Example> train,
                                std::size_t groups, std::span<const Example> val, const TrainConfig& config,
                                const TrainOptions& options = {}) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::EmptyGroup, "no training samples");
  std::vector<bool> active(groups, false);
  for (const Example& ex : train) {
    if (ex.group < 0 || static_cast<std::size_t>(ex.group) >= groups) {
      throw Error(ErrorCode::InvalidGroupId, "training row has group id " + std::to_string(ex.group));
    }
    active[static_cast<std::size_t>(ex.group)] = true;
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (!active[g]) log::warn("EmptyGroup: group ", g, " has no training samples; dropped from q");
  }

  DROState state = make_dro_state(classes, dim, active, config.seed);
  TrainResult result;
  result.config = config;
  double best = -1.0;
  if (val.empty()) log::warn("no validation rows; the final epoch is selected");

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Example> batch;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    state.rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) batch.push_back(train[order[i]]);
      if (options.objective == Objective::GroupDRO) {
        dro_step(state, batch, config);
      } else {
        erm_step(state, batch, config);
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.group_losses = group_losses(state.model, train, groups).mean;
    entry.q = state.q;
    const auto vs = detail::validation_scores(state.model, val, groups);
    entry.val_worst_group = vs.worst;
    entry.val_avg = vs.avg;
    const double score = val.empty() ? static_cast<double>(epoch)
                                     : (options.selection == Selection::WorstGroup ? vs.worst : vs.avg);
    if (score > best) {
      best = score;
      result.model = state.model;
      result.selected_epoch = epoch;
    }
    result.log.push_back(std::move(entry));
    if (options.on_epoch) options.on_epoch(epoch, state);
  }
  return result;
}

namespace detail {

inline std::vector<Example> examples_for(const Dataset& ds, Split split, const std::vector<int>* groups) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (s.split != split) continue;
    const int g = groups ? (*groups)[i] : 0;
    if (groups && g < 0) {
      if (split == Split::Train) {
        throw Error(ErrorCode::MissingArtifact, "training sample '" + s.id + "' has no group assignment");
      }
      continue;
    }
    out.push_back({s.embedding, s.label, g});
  }
  return out;
}

}  // namespace detail

/// Lg-DRO trainer: pseudo-groups from `ann`, checkpoint chosen by worst-group
/// validation accuracy on the validation split's pseudo-groups.
inline TrainResult train_group_dro(const Dataset& ds, const Annotation& ann, const TrainConfig& config,
                                   TrainOptions options = {}) {
  if (ann.class_names.size() != ds.num_classes()) {
    throw Error(ErrorCode::SchemaError, "group file and dataset disagree on the number of classes");
  }
  const std::vector<int> ids = group_ids_for(ann, ds);
  const auto train = detail::examples_for(ds, Split::Train, &ids);
  const auto val = detail::examples_for(ds, Split::Val, &ids);
  options.selection = Selection::WorstGroup;
  return train_linear(ds.num_classes(), ds.dim, train, ann.num_groups(), val, config, options);
}

/// Plain ERM on the batch mean loss; checkpoint chosen by average validation
/// accuracy. Logged group losses/q cover a single all-samples group.
inline TrainResult train_erm(const Dataset& ds, const TrainConfig& config, TrainOptions options = {}) {
  const auto train = detail::examples_for(ds, Split::Train, nullptr);
  const auto val = detail::examples_for(ds, Split::Val, nullptr);
  options.selection = Selection::Average;
  options.objective = Objective::ERM;
  return train_linear(ds.num_classes(), ds.dim, train, 1, val, config, options);
}

// model.json / training_log.jsonl

inline Json model_to_json(const TrainResult& r) {
  Json rows = Json::array();
  for (std::size_t k = 0; k < r.model.classes; ++k) {
    rows.push_back(std::vector<double>(r.model.row(k).begin(), r.model.row(k).end()));
  }
  return Json{{"dim", r.model.dim},          {"classes", r.model.classes}, {"weights", rows},
              {"bias", r.model.bias},        {"config", r.config.to_json()},
              {"selected_epoch", r.selected_epoch}};
}

inline LinearModel model_from_json(const Json& j, const std::string& where = "model.json") {
  io::require_only(j, {"dim", "classes", "weights", "bias", "config", "selected_epoch"}, where);
  const auto dim = static_cast<std::size_t>(io::require_int(j, "dim", where));
  const auto classes = static_cast<std::size_t>(io::require_int(j, "classes", where));
  LinearModel m(classes, dim);
  const Json& rows = io::require(j, "weights", where);
  if (!rows.is_array() || rows.size() != classes) throw Error(ErrorCode::SchemaError, where + ": weights shape");
  for (std::size_t k = 0; k < classes; ++k) {
    if (!rows[k].is_array() || rows[k].size() != dim) throw Error(ErrorCode::SchemaError, where + ": weights shape");
    for (std::size_t i = 0; i < dim; ++i) {
      if (!rows[k][i].is_number()) throw Error(ErrorCode::SchemaError, where + ": weights must be numbers");
      m.weights[k * dim + i] = rows[k][i].get<double>();
    }
  }
  m.bias = io::require_floats(j, "bias", where);
  if (m.bias.size() != classes) throw Error(ErrorCode::SchemaError, where + ": bias length");
  io::require_int(j, "selected_epoch", where);
  for (double v : m.weights) {
    if (!std::isfinite(v)) throw Error(ErrorCode::SchemaError, where + ": non-finite weight");
  }
  return m;
}

inline std::string serialize_training_log(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  for (const auto& e : log) {
    out << Json{{"epoch", e.epoch},
                {"group_losses", e.group_losses},
                {"q", e.q},
                {"val_worst_group", e.val_worst_group},
                {"val_avg", e.val_avg}}
               .dump()
        << '\n';
  }
  return out.str();
}

}  // namespace biascope
