#pragma once

// The self-compression training loop: composite loss, Adam updates of the
// weights and of the per-group (b, e), structural pruning of groups that
// quantize to zero, and precision restoration when the preservation set
// degrades.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdsc/data.hpp"
#include "sdsc/models.hpp"
#include "sdsc/preserve.hpp"

namespace sdsc {

struct CompressionConfig {
  double alpha = 1e-5;
  std::optional<double> gamma;  // unset: γ·Q₀ = 0.1 × initial task loss
  double lambda = 1.0;
  double learning_rate = 1e-3;
  double quant_learning_rate = 0.05;  // Adam step for b and e
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::size_t warmup_epochs = 1;
  std::size_t eval_cadence = 100;
  // Accuracy points for classifiers, relative loss increase for the LM.
  std::optional<double> restore_threshold;
  std::int64_t freeze_duration = 200;
  float initial_bits = 8.0f;
  std::uint64_t seed = 0;
  std::size_t preservation_batch = 64;
  double rho = 0.1;
  Quotas quotas;

  bool quantize = true;  // false: plain float training, Q reported but unused
  bool prune = true;
  bool guard = true;  // preservation evaluation and restoration

  // One-shot fault: the first preservation evaluation at or after this step
  // that has a snapshot to compare against sees labels shifted by one class.
  std::optional<std::int64_t> fault_step;

  void validate() const;
  double threshold_for(TaskKind task) const;
};

struct LossTerms {
  Tensor total;
  double task = 0.0;
  double l1 = 0.0;    // α·Σ|W|
  double size = 0.0;  // γ·Q
  double preservation = 0.0;  // λ·preservation loss on the sub-batch
};

// Λ over one training batch. `pset_ids` are training ids appended to the same
// forward pass; they may be empty.
LossTerms composite_loss(Model& model, const Dataset& train, std::span<const std::size_t> task_ids,
                         std::span<const std::size_t> pset_ids, double alpha, double gamma, double lambda,
                         Mode mode = Mode::kTrain);

struct GroupRef {
  std::size_t layer = 0;
  std::size_t group = 0;
  bool operator==(const GroupRef&) const = default;
};

struct PruneReport {
  std::vector<GroupRef> pruned;
  std::vector<GroupRef> kept_by_guard;  // would have emptied their layer
};

// Marks every group whose quantized weights are all zero (or b <= 0) as dead.
// Groups frozen by a restoration are left alone.
PruneReport prune_zeroed(Model& model);

struct Snapshot {
  std::vector<std::vector<float>> bits;
  std::vector<std::vector<float>> exponents;
  double accuracy = 0.0;
  double loss = 0.0;
  std::int64_t step = 0;
};

Snapshot take_snapshot(const Model& model, double accuracy, double loss, std::int64_t step);

struct RestoredGroup {
  GroupRef ref;
  float old_bits = 0.0f;
  float new_bits = 0.0f;
  std::int64_t frozen_until = 0;
};

struct RestoreReport {
  std::int64_t step = 0;
  std::vector<RestoredGroup> groups;
};

// Raises every live group whose b fell below the snapshot back to the
// snapshot value and freezes its (b, e) until step + freeze. Without a
// snapshot all live groups return to `initial_bits`.
RestoreReport restore_precision(Model& model, const Snapshot* snapshot, std::int64_t step, std::int64_t freeze,
                                float initial_bits);

// Adam over weights and quantization parameters. Frozen and dead groups'
// (b, e) are left untouched, moments included.
class Optimizer {
 public:
  Optimizer(double learning_rate, double quant_learning_rate);
  void step(Model& model);
  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  void update(Tensor& p, Moments& s, double lr, const std::vector<std::uint8_t>* active);

  double lr_;
  double quant_lr_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

struct MetricsRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double l1_term = 0.0;
  double size_term = 0.0;
  double preservation_loss = std::numeric_limits<double>::quiet_NaN();
  double test_metric = 0.0;
  double q_bits = 0.0;
  double model_bytes = 0.0;
  std::size_t pruned_count = 0;    // cumulative
  std::size_t restored_count = 0;  // cumulative
  double wall_ms = 0.0;

  // Not written to CSV: the remaining Λ terms of the same step.
  double task_loss = 0.0;
  double preservation_term = 0.0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRecord& record);

// Test accuracy in percent for classifiers, mean cross-entropy for the LM.
double evaluate(Model& model, const Dataset& split);
double current_q(const Model& model);

struct StepInfo {
  std::int64_t step = 0;
  Model* model = nullptr;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const StepInfo&)> on_step;  // after every optimizer step
  std::function<void(const RestoreReport&)> on_restore;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::vector<RestoreReport> restores;
  std::vector<PruneReport> prunes;
  std::optional<PreservationSet> pset;
  double gamma = 0.0;
  double test_metric = 0.0;
};

// Trains `model` in place. When guarding is on and `pset` is empty, the set is
// built from `train` at the end of warm-up.
TrainResult train_compress(Model& model, const Dataset& train, const Dataset& test, const CompressionConfig& config,
                           std::optional<PreservationSet> pset = std::nullopt, const TrainHooks& hooks = {});

}  // namespace sdsc
