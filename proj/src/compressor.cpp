#include "sdsc/compressor.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>

#include "sdsc/error.hpp"
#include "sdsc/nn.hpp"
#include "sdsc/ops.hpp"

namespace sdsc {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<Tensor> bits_tensors(Model& model) {
  std::vector<Tensor> out;
  for (QuantizedParam* qp : model.quantized()) out.push_back(qp->bits());
  return out;
}

// Preservation metrics on `pset_data`, optionally with every label shifted.
EvalResult evaluate_pset(Model& model, const Dataset& pset_data, bool corrupt) {
  if (!corrupt) return evaluate_dataset(model, pset_data);
  Dataset bad = pset_data;
  const int k = static_cast<int>(bad.num_classes);
  for (int& y : bad.targets) y = (y + 1) % k;
  return evaluate_dataset(model, bad);
}

}  // namespace

void CompressionConfig::validate() const {
  if (alpha < 0.0 || lambda < 0.0 || (gamma && *gamma < 0.0)) throw ConfigError("alpha, gamma and lambda must be >= 0");
  if (!(learning_rate > 0.0) || !(quant_learning_rate > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_cadence == 0) throw ConfigError("eval_cadence must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (warmup_epochs > epochs) throw ConfigError("warmup_epochs cannot exceed epochs");
  if (freeze_duration < 0) throw ConfigError("freeze_duration must be >= 0");
  if (!(initial_bits >= 0.0f && initial_bits <= kMaxBits)) throw ConfigError("b0 must be in [0, 16]");
  if (restore_threshold && *restore_threshold < 0.0) throw ConfigError("restore_threshold must be >= 0");
  if (preservation_batch == 0) throw ConfigError("preservation_batch must be positive");
  preservation_set_size(1, rho);
  quotas.validate();
}

double CompressionConfig::threshold_for(TaskKind task) const {
  if (restore_threshold) return *restore_threshold;
  return task == TaskKind::kClassification ? 1.0 : 0.05;
}

LossTerms composite_loss(Model& model, const Dataset& train, std::span<const std::size_t> task_ids,
                         std::span<const std::size_t> pset_ids, double alpha, double gamma, double lambda,
                         Mode mode) {
  std::vector<std::size_t> ids(task_ids.begin(), task_ids.end());
  ids.insert(ids.end(), pset_ids.begin(), pset_ids.end());
  Batch b = train.batch(ids);
  Tensor logits = model.forward(b.inputs, mode).logits;

  LossTerms terms;
  Tensor task_loss;
  Tensor pres_loss;
  if (pset_ids.empty()) {
    task_loss = cross_entropy(logits, b.targets);
  } else {
    std::vector<std::size_t> head(task_ids.size());
    std::vector<std::size_t> tail(pset_ids.size());
    for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
    for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = head.size() + i;
    std::span<const int> targets(b.targets);
    task_loss = cross_entropy(gather_rows(logits, head), targets.first(head.size()));
    pres_loss = cross_entropy(gather_rows(logits, tail), targets.subspan(head.size()));
  }
  Tensor total = task_loss;
  terms.task = task_loss.item();
  if (alpha > 0.0) {
    Tensor l1;
    for (const Tensor& w : model.l1_weights()) l1 = l1.defined() ? add(l1, abs_sum(w)) : abs_sum(w);
    Tensor term = scale(l1, static_cast<float>(alpha));
    terms.l1 = term.item();
    total = add(total, term);
  }
  if (gamma > 0.0 && model.quantization_enabled) {
    Tensor term = scale(average_bit_depth(model.size_model(), bits_tensors(model)), static_cast<float>(gamma));
    terms.size = term.item();
    total = add(total, term);
  }
  if (lambda > 0.0 && pres_loss.defined()) {
    Tensor term = scale(pres_loss, static_cast<float>(lambda));
    terms.preservation = term.item();
    total = add(total, term);
  }
  terms.total = total;
  return terms;
}

PruneReport prune_zeroed(Model& model) {
  PruneReport report;
  auto layers = model.quantized();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    QuantizedParam& qp = *layers[l];
    std::vector<std::size_t> candidates;
    for (std::size_t g = 0; g < qp.groups(); ++g) {
      if (qp.live(g) && !qp.frozen(g, model.step) && qp.group_quantizes_to_zero(g)) candidates.push_back(g);
    }
    if (candidates.empty()) continue;
    if (candidates.size() == qp.live_count()) {
      std::size_t keep = candidates.front();
      double best = -1.0;
      for (std::size_t g : candidates) {
        double norm = 0.0;
        for (float w : qp.group_weights(g)) norm += static_cast<double>(w) * w;
        if (norm > best) {
          best = norm;
          keep = g;
        }
      }
      auto bits = qp.bits().data();
      bits[keep] = std::max(bits[keep], 1.0f);
      candidates.erase(std::find(candidates.begin(), candidates.end(), keep));
      report.kept_by_guard.push_back({l, keep});
    }
    for (std::size_t g : candidates) {
      qp.kill_group(g);
      report.pruned.push_back({l, g});
    }
  }
  model.apply_masks();
  return report;
}

Snapshot take_snapshot(const Model& model, double accuracy, double loss, std::int64_t step) {
  Snapshot snap;
  for (const QuantizedParam* qp : model.quantized()) {
    snap.bits.emplace_back(qp->bits().data().begin(), qp->bits().data().end());
    snap.exponents.emplace_back(qp->exponent().data().begin(), qp->exponent().data().end());
  }
  snap.accuracy = accuracy;
  snap.loss = loss;
  snap.step = step;
  return snap;
}

RestoreReport restore_precision(Model& model, const Snapshot* snapshot, std::int64_t step, std::int64_t freeze,
                                float initial_bits) {
  RestoreReport report;
  report.step = step;
  auto layers = model.quantized();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    QuantizedParam& qp = *layers[l];
    auto bits = qp.bits().data();
    for (std::size_t g = 0; g < qp.groups(); ++g) {
      if (!qp.live(g)) continue;
      const float target = snapshot != nullptr ? snapshot->bits.at(l).at(g) : initial_bits;
      if (snapshot != nullptr && !(bits[g] < target)) continue;
      RestoredGroup r{{l, g}, bits[g], target, step + freeze};
      bits[g] = target;
      qp.params().frozen_until[g] = step + freeze;
      report.groups.push_back(r);
    }
  }
  return report;
}

Optimizer::Optimizer(double learning_rate, double quant_learning_rate)
    : lr_(learning_rate), quant_lr_(quant_learning_rate) {}

void Optimizer::update(Tensor& p, Moments& s, double lr, const std::vector<std::uint8_t>* active) {
  if (!p.has_grad()) return;
  auto g = p.grad();
  auto x = p.data();
  if (s.m.empty()) {
    s.m.assign(x.size(), 0.0f);
    s.v.assign(x.size(), 0.0f);
  }
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (active != nullptr && !(*active)[i]) continue;
    const double m = kBeta1 * s.m[i] + (1.0 - kBeta1) * g[i];
    const double v = kBeta2 * s.v[i] + (1.0 - kBeta2) * static_cast<double>(g[i]) * g[i];
    s.m[i] = static_cast<float>(m);
    s.v[i] = static_cast<float>(v);
    x[i] = static_cast<float>(x[i] - lr * (m / c1) / (std::sqrt(v / c2) + kAdamEpsilon));
  }
}

void Optimizer::step(Model& model) {
  ++t_;
  for (NamedTensor& p : model.trainable()) update(p.tensor, moments_[p.name], lr_, nullptr);
  auto layers = model.quantized();
  std::size_t l = 0;
  for (NamedTensor& p : model.state()) {
    if (p.kind != ParamKind::kBits && p.kind != ParamKind::kExponent) continue;
    QuantizedParam& qp = *layers[p.kind == ParamKind::kBits ? l : l++];
    std::vector<std::uint8_t> active(qp.groups());
    for (std::size_t g = 0; g < qp.groups(); ++g) active[g] = qp.live(g) && !qp.frozen(g, model.step);
    update(p.tensor, moments_[p.name], quant_lr_, &active);
  }
  for (NamedTensor& p : model.state()) p.tensor.clear_grad();
  for (QuantizedParam* qp : layers) qp->enforce_invariants();
  model.apply_masks();
}

void write_metrics_header(std::ostream& out) {
  out << "step,train_loss,l1_term,size_term,preservation_loss,test_metric,q_bits,model_bytes,pruned_count,"
         "restored_count,wall_ms\n";
}

void write_metrics_row(std::ostream& out, const MetricsRecord& r) {
  out << r.step << ',' << csv_number(r.train_loss) << ',' << csv_number(r.l1_term) << ',' << csv_number(r.size_term)
      << ',' << csv_number(r.preservation_loss) << ',' << csv_number(r.test_metric) << ',' << csv_number(r.q_bits)
      << ',' << csv_number(r.model_bytes) << ',' << r.pruned_count << ',' << r.restored_count << ','
      << csv_number(std::round(r.wall_ms * 1000.0) / 1000.0) << '\n';
}

double evaluate(Model& model, const Dataset& split) {
  EvalResult r = evaluate_dataset(model, split);
  return model.task() == TaskKind::kClassification ? r.accuracy : r.loss;
}

double current_q(const Model& model) {
  std::vector<std::span<const float>> bits;
  for (const QuantizedParam* qp : model.quantized()) bits.push_back(qp->bits().data());
  return average_bit_depth(model.size_model(), bits);
}

TrainResult train_compress(Model& model, const Dataset& train, const Dataset& test, const CompressionConfig& config,
                           std::optional<PreservationSet> pset, const TrainHooks& hooks) {
  config.validate();
  if (train.size() == 0 || test.size() == 0) throw ConfigError("train and test splits must be non-empty");
  const auto started = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  };

  model.quantization_enabled = config.quantize;
  model.seed = config.seed;
  const bool classifier = model.task() == TaskKind::kClassification;
  const double threshold = config.threshold_for(model.task());
  const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const auto warmup_steps = static_cast<std::int64_t>(per_epoch * config.warmup_epochs);
  const auto total_steps = static_cast<std::int64_t>(per_epoch * config.epochs);

  Rng rng(config.seed);
  Optimizer optimizer(config.learning_rate, config.quant_learning_rate);
  TrainResult result;
  result.pset = std::move(pset);
  Dataset pset_data;
  if (result.pset) pset_data = train.subset(result.pset->indices);

  double gamma = config.gamma.value_or(0.0);
  bool gamma_pending = config.quantize && !config.gamma.has_value();
  if (!config.quantize) gamma = 0.0;
  std::optional<Snapshot> snapshot;
  double best_accuracy = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  bool fault_pending = config.fault_step.has_value();
  std::size_t pruned_total = 0;
  std::size_t restored_total = 0;
  LossTerms last;

  std::vector<std::size_t> order = all_ids(train);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::span<const std::size_t> task_ids(order.data() + start, std::min(config.batch_size, order.size() - start));

      if (config.guard && !result.pset && model.step >= warmup_steps) {
        model.trained = true;
        result.pset = build_preservation_set(model, train, config.rho, config.quotas, config.seed);
        pset_data = train.subset(result.pset->indices);
      }
      std::vector<std::size_t> pset_ids;
      if (config.guard && config.lambda > 0.0 && result.pset && !result.pset->empty()) {
        std::vector<std::size_t> pool = result.pset->indices;
        const std::size_t take = std::min(config.preservation_batch, pool.size());
        for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        pset_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
      }

      Tape tape;
      Tape::Scope scope(tape);
      try {
        if (gamma_pending) {
          // γ is fixed from the first batch so that γ·Q₀ is a tenth of the task loss.
          Tape probe;
          Tape::Scope probe_scope(probe);
          const double q0 = current_q(model);
          LossTerms first = composite_loss(model, train, task_ids, {}, 0.0, 0.0, 0.0, Mode::kEval);
          gamma = q0 > 0.0 ? 0.1 * first.task / q0 : 0.0;
          gamma_pending = false;
        }
        last = composite_loss(model, train, task_ids, pset_ids, config.alpha, gamma,
                              config.guard ? config.lambda : 0.0);
        if (!std::isfinite(last.total.item())) throw DivergenceError("non-finite loss");
        tape.grad(last.total);
      } catch (const DivergenceError&) {
        throw;
      } catch (const ShapeError&) {
        throw;
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw DivergenceError("divergence at step " + std::to_string(model.step) + ": " + e.what() +
                              " (task " + csv_number(last.task) + ", l1 " + csv_number(last.l1) + ", size " +
                              csv_number(last.size) + ", preservation " + csv_number(last.preservation) + ")");
      }
      optimizer.step(model);
      ++model.step;
      if (hooks.on_step) hooks.on_step(StepInfo{model.step, &model});

      const bool final_step = model.step == total_steps;
      if (model.step % static_cast<std::int64_t>(config.eval_cadence) != 0 && !final_step) continue;

      MetricsRecord rec;
      rec.step = model.step;
      rec.train_loss = last.total.item();
      rec.l1_term = last.l1;
      rec.size_term = last.size;
      rec.task_loss = last.task;
      rec.preservation_term = last.preservation;

      const bool past_warmup = model.step > warmup_steps;
      if (config.prune && past_warmup) {
        PruneReport pr = prune_zeroed(model);
        pruned_total += pr.pruned.size();
        if (!pr.pruned.empty() || !pr.kept_by_guard.empty()) result.prunes.push_back(pr);
      }
      if (config.guard && result.pset && !result.pset->empty()) {
        const bool corrupt = fault_pending && snapshot && model.step >= *config.fault_step;
        if (corrupt) fault_pending = false;
        EvalResult pe = evaluate_pset(model, pset_data, corrupt);
        rec.preservation_loss = pe.loss;
        bool pass = true;
        if (snapshot) {
          pass = classifier ? pe.accuracy >= best_accuracy - threshold : pe.loss <= best_loss * (1.0 + threshold);
        }
        if (pass) {
          snapshot = take_snapshot(model, pe.accuracy, pe.loss, model.step);
          best_accuracy = std::max(best_accuracy, pe.accuracy);
          best_loss = std::min(best_loss, pe.loss);
        } else {
          RestoreReport rr = restore_precision(model, &*snapshot, model.step, config.freeze_duration,
                                               config.initial_bits);
          restored_total += rr.groups.size();
          if (hooks.on_restore) hooks.on_restore(rr);
          result.restores.push_back(std::move(rr));
        }
      }

      rec.test_metric = evaluate(model, test);
      rec.q_bits = current_q(model);
      rec.model_bytes = model_bytes(model.byte_inventory());
      rec.pruned_count = pruned_total;
      rec.restored_count = restored_total;
      rec.wall_ms = elapsed_ms();
      result.metrics.push_back(rec);
      if (hooks.on_metrics) hooks.on_metrics(rec);
    }
  }
  model.trained = true;
  result.gamma = gamma;
  result.test_metric = result.metrics.empty() ? evaluate(model, test) : result.metrics.back().test_metric;
  return result;
}

}  // namespace sdsc
