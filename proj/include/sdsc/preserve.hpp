#pragma once

// Preservation set: training samples that guard the model's critical
// behaviour during compression. Selected by Grad-CAM concentration,
// predictive entropy and k-means medoids over penultimate features.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdsc/data.hpp"
#include "sdsc/models.hpp"

namespace sdsc {

enum class Provenance { kSaliency, kUncertainty, kDiversity };

const char* provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);

struct PreservationSet {
  std::vector<std::size_t> indices;  // sorted, unique
  std::vector<Provenance> provenance;
  double rho = 0.1;
  std::uint64_t seed = 0;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  std::size_t count(Provenance p) const;
};

struct Quotas {
  double saliency = 0.4;
  double uncertainty = 0.3;
  double diversity = 0.3;

  void validate() const;
};

// ceil(rho·n), rejecting rho outside (0, 1].
std::size_t preservation_set_size(std::size_t n, double rho);

// Grad-CAM concentration per sample, in id order. The model must be trained.
std::vector<double> saliency_scores(Model& model, const Dataset& data, std::size_t batch = 128);
// Predictive entropy in nats per sample. For the decoder, the mean over
// window positions.
std::vector<double> uncertainty_scores(Model& model, const Dataset& data, std::size_t batch = 128);
// Features feeding the output layer, one row per sample.
std::vector<std::vector<float>> penultimate_features(Model& model, const Dataset& data,
                                                     std::span<const std::size_t> ids, std::size_t batch = 128);

// k-means medoids of `features` (row i belongs to ids[i]). Returns the chosen
// ids in ascending order; the result does not depend on the order of `ids`.
std::vector<std::size_t> diversity_medoids(std::span<const std::size_t> ids,
                                           const std::vector<std::vector<float>>& features, std::size_t k, Rng& rng);

PreservationSet build_preservation_set(Model& model, const Dataset& data, double rho, const Quotas& quotas,
                                       std::uint64_t seed);

struct EvalResult {
  double loss = 0.0;      // mean cross-entropy, nats
  double accuracy = 0.0;  // top-1, percent
};

// Evaluation-mode loss and accuracy over a whole dataset.
EvalResult evaluate_dataset(Model& model, const Dataset& data, std::size_t batch = 256);

// Differentiable mean cross-entropy over the given samples.
Tensor preservation_loss(Model& model, const Dataset& data, std::span<const std::size_t> ids,
                         Mode mode = Mode::kEval);
double preservation_accuracy(Model& model, const Dataset& data, const PreservationSet& pset);

void save_preservation_set(const PreservationSet& pset, const std::filesystem::path& path);
PreservationSet load_preservation_set(const std::filesystem::path& path);

}  // namespace sdsc
