#include "sdsc/preserve.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "sdsc/error.hpp"
#include "sdsc/nn.hpp"
#include "sdsc/ops.hpp"

namespace sdsc {

namespace {

// Runs `fn(ids_of_batch)` over consecutive id chunks.
template <class Fn>
void for_batches(std::size_t n, std::size_t batch, Fn&& fn) {
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < n; start += batch) {
    ids.resize(std::min(batch, n - start));
    std::iota(ids.begin(), ids.end(), start);
    fn(std::span<const std::size_t>(ids));
  }
}

double entropy_of_row(const float* row, std::size_t k) {
  double mx = row[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
  const double lse = mx + std::log(z);
  double h = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double logp = row[j] - lse;
    h -= std::exp(logp) * logp;
  }
  return std::max(h, 0.0);
}

double top_fraction_mean(std::vector<double>& values) {
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * values.size())));
  std::partial_sort(values.begin(), values.begin() + k, values.end(), std::greater<>());
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += values[i];
  return total / static_cast<double>(k);
}

// Per-position targets of a decoder window: the next token inside the window,
// and the sample's own target at the last position.
std::vector<int> window_targets(const Batch& batch) {
  const std::size_t b = batch.inputs.dim(0);
  const std::size_t t = batch.inputs.dim(1);
  auto in = batch.inputs.data();
  std::vector<int> out(b * t);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t p = 0; p + 1 < t; ++p) out[i * t + p] = static_cast<int>(in[i * t + p + 1]);
    out[i * t + t - 1] = batch.targets[i];
  }
  return out;
}

Tensor one_hot(std::span<const int> targets, std::size_t classes) {
  Tensor t(Shape{targets.size(), classes}, 0.0f);
  auto d = t.data();
  for (std::size_t i = 0; i < targets.size(); ++i) d[i * classes + static_cast<std::size_t>(targets[i])] = 1.0f;
  return t;
}

double squared_distance(const std::vector<float>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

double squared_distance(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = static_cast<double>(a[j]) - b[j];
    s += d * d;
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kSaliency: return "saliency";
    case Provenance::kUncertainty: return "uncertainty";
    case Provenance::kDiversity: return "diversity";
  }
  return "?";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "saliency") return Provenance::kSaliency;
  if (name == "uncertainty") return Provenance::kUncertainty;
  if (name == "diversity") return Provenance::kDiversity;
  throw FormatError(FormatError::Kind::kMalformed, "unknown provenance tag '" + std::string(name) + "'");
}

std::size_t PreservationSet::count(Provenance p) const {
  return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), p));
}

void Quotas::validate() const {
  if (saliency < 0.0 || uncertainty < 0.0 || diversity < 0.0) throw ConfigError("preservation quotas must be >= 0");
  if (std::abs(saliency + uncertainty + diversity - 1.0) > 1e-9) {
    throw ConfigError("preservation quotas must sum to 1, got " + format_double(saliency + uncertainty + diversity));
  }
}

std::size_t preservation_set_size(std::size_t n, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("preservation fraction rho must be in (0, 1]");
  const auto m = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(m, n == 0 ? 0 : 1, n);
}

std::vector<double> saliency_scores(Model& model, const Dataset& data, std::size_t batch) {
  if (!model.trained) throw Error("saliency_scores: model has not been trained");
  std::vector<double> scores(data.size());
  auto* decoder = dynamic_cast<Decoder*>(&model);
  for_batches(data.size(), batch, [&](std::span<const std::size_t> ids) {
    Batch b = data.batch(ids);
    Tensor activation = model.forward(b.inputs, Mode::kEval).target.clone();
    activation.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss;
    if (decoder != nullptr) {
      Tensor logits = decoder->logits_from_hidden(activation);
      loss = sum(mul(logits, one_hot(window_targets(b), logits.dim(1))));
    } else {
      Tensor logits = model.head(activation);
      loss = sum(mul(logits, one_hot(b.targets, logits.dim(1))));
    }
    tape.grad(loss);
    auto act = activation.data();
    auto grad = activation.grad();
    const std::size_t per_sample = activation.numel() / ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const float* a = act.data() + i * per_sample;
      const float* g = grad.empty() ? nullptr : grad.data() + i * per_sample;
      // CNN maps are [C, S] with S spatial cells; decoder maps are [T, C].
      const std::size_t channels = decoder != nullptr ? activation.dim(2) : activation.dim(1);
      const std::size_t cells = per_sample / channels;
      auto at = [&](const float* base, std::size_t c, std::size_t s) {
        return decoder != nullptr ? base[s * channels + c] : base[c * cells + s];
      };
      std::vector<double> weights(channels, 0.0);
      if (g != nullptr) {
        for (std::size_t c = 0; c < channels; ++c) {
          double total = 0.0;
          for (std::size_t s = 0; s < cells; ++s) total += at(g, c, s);
          weights[c] = total / static_cast<double>(cells);
        }
      }
      std::vector<double> map(cells, 0.0);
      for (std::size_t s = 0; s < cells; ++s) {
        double v = 0.0;
        for (std::size_t c = 0; c < channels; ++c) v += weights[c] * at(a, c, s);
        map[s] = std::max(v, 0.0);
      }
      scores[ids[i]] = top_fraction_mean(map);
    }
  });
  return scores;
}

std::vector<double> uncertainty_scores(Model& model, const Dataset& data, std::size_t batch) {
  std::vector<double> scores(data.size());
  auto* decoder = dynamic_cast<Decoder*>(&model);
  for_batches(data.size(), batch, [&](std::span<const std::size_t> ids) {
    Batch b = data.batch(ids);
    Tensor logits = decoder != nullptr ? decoder->logits_all_positions(b.inputs)
                                       : model.forward(b.inputs, Mode::kEval).logits;
    const std::size_t k = logits.dim(1);
    const std::size_t rows_per_sample = logits.dim(0) / ids.size();
    auto l = logits.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double total = 0.0;
      for (std::size_t r = 0; r < rows_per_sample; ++r) {
        total += entropy_of_row(l.data() + (i * rows_per_sample + r) * k, k);
      }
      scores[ids[i]] = total / static_cast<double>(rows_per_sample);
    }
  });
  return scores;
}

std::vector<std::vector<float>> penultimate_features(Model& model, const Dataset& data,
                                                     std::span<const std::size_t> ids, std::size_t batch) {
  std::vector<std::vector<float>> out;
  out.reserve(ids.size());
  for (std::size_t start = 0; start < ids.size(); start += batch) {
    auto chunk = ids.subspan(start, std::min(batch, ids.size() - start));
    Tensor f = model.forward(data.batch(chunk).inputs, Mode::kEval).penultimate;
    const std::size_t width = f.numel() / chunk.size();
    auto d = f.data();
    for (std::size_t i = 0; i < chunk.size(); ++i) out.emplace_back(d.begin() + i * width, d.begin() + (i + 1) * width);
  }
  return out;
}

std::vector<std::size_t> diversity_medoids(std::span<const std::size_t> ids,
                                           const std::vector<std::vector<float>>& features, std::size_t k, Rng& rng) {
  if (k < 1) throw ConfigError("diversity_medoids: k must be at least 1");
  if (ids.size() != features.size()) throw ShapeError("diversity_medoids: one feature row per id required");
  const std::size_t n = ids.size();
  if (k > n) throw ConfigError("diversity_medoids: k exceeds the number of samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::vector<std::size_t> sid(n);
  std::vector<const std::vector<float>*> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    sid[i] = ids[order[i]];
    x[i] = &features[order[i]];
  }
  const std::size_t dim = n == 0 ? 0 : x[0]->size();

  std::vector<std::size_t> seeds(n);
  std::iota(seeds.begin(), seeds.end(), 0);
  rng.shuffle(seeds);
  std::vector<std::vector<double>> centroids(k);
  for (std::size_t c = 0; c < k; ++c) centroids[c].assign(x[seeds[c]]->begin(), x[seeds[c]]->end());

  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 50; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(*x[i], centroids[c]);
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i]][j] += (*x[i])[j];
    }
    bool moved = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = sums[c][j] / static_cast<double>(counts[c]);
        moved = moved || v != centroids[c][j];
        centroids[c][j] = v;
      }
    }
    if (!moved && iter > 0) break;
  }

  std::vector<std::uint8_t> chosen(n, 0);
  std::vector<std::size_t> medoids;
  for (std::size_t c = 0; c < k; ++c) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != c || chosen[i]) continue;
      const double d = squared_distance(*x[i], centroids[c]);
      if (d < best) {
        best = d;
        pick = i;
      }
    }
    if (pick < n) {
      chosen[pick] = 1;
      medoids.push_back(pick);
    }
  }
  // Empty clusters: take the samples farthest from every chosen medoid.
  while (medoids.size() < k) {
    double far = -1.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t m : medoids) nearest = std::min(nearest, squared_distance(*x[i], *x[m]));
      if (nearest > far) {
        far = nearest;
        pick = i;
      }
    }
    chosen[pick] = 1;
    medoids.push_back(pick);
  }
  std::vector<std::size_t> out;
  for (std::size_t m : medoids) out.push_back(sid[m]);
  std::sort(out.begin(), out.end());
  return out;
}

PreservationSet build_preservation_set(Model& model, const Dataset& data, double rho, const Quotas& quotas,
                                       std::uint64_t seed) {
  quotas.validate();
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("build_preservation_set: empty dataset");
  const std::size_t m = preservation_set_size(n, rho);
  const auto n_sal = static_cast<std::size_t>(std::floor(quotas.saliency * static_cast<double>(m) + 1e-9));
  const auto n_unc = std::min(m - n_sal, static_cast<std::size_t>(
                                             std::floor(quotas.uncertainty * static_cast<double>(m) + 1e-9)));
  const std::size_t n_div = m - n_sal - n_unc;

  std::vector<int> tag(n, -1);
  auto take_top = [&](const std::vector<double>& scores, std::size_t count, Provenance p) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (tag[i] < 0) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t i = 0; i < count; ++i) tag[order[i]] = static_cast<int>(p);
  };
  if (n_sal > 0) take_top(saliency_scores(model, data), n_sal, Provenance::kSaliency);
  if (n_unc > 0) take_top(uncertainty_scores(model, data), n_unc, Provenance::kUncertainty);
  if (n_div > 0) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (tag[i] < 0) rest.push_back(i);
    }
    Rng rng(seed);
    auto features = penultimate_features(model, data, rest);
    for (std::size_t id : diversity_medoids(rest, features, n_div, rng)) tag[id] = static_cast<int>(Provenance::kDiversity);
  }

  PreservationSet pset;
  pset.rho = rho;
  pset.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (tag[i] < 0) continue;
    pset.indices.push_back(i);
    pset.provenance.push_back(static_cast<Provenance>(tag[i]));
  }
  return pset;
}

EvalResult evaluate_dataset(Model& model, const Dataset& data, std::size_t batch) {
  if (data.size() == 0) throw Error("evaluate: empty split");
  double loss = 0.0;
  std::size_t correct = 0;
  for_batches(data.size(), batch, [&](std::span<const std::size_t> ids) {
    Batch b = data.batch(ids);
    Tensor logits = model.forward(b.inputs, Mode::kEval).logits;
    loss += static_cast<double>(cross_entropy(logits, b.targets).item()) * static_cast<double>(ids.size());
    const std::size_t k = logits.dim(1);
    auto l = logits.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const float* row = l.data() + i * k;
      const auto arg = static_cast<int>(std::max_element(row, row + k) - row);
      if (arg == b.targets[i]) ++correct;
    }
  });
  const auto n = static_cast<double>(data.size());
  return EvalResult{loss / n, 100.0 * static_cast<double>(correct) / n};
}

Tensor preservation_loss(Model& model, const Dataset& data, std::span<const std::size_t> ids, Mode mode) {
  if (ids.empty()) throw Error("preservation_loss: empty preservation set");
  Batch b = data.batch(ids);
  return cross_entropy(model.forward(b.inputs, mode).logits, b.targets);
}

double preservation_accuracy(Model& model, const Dataset& data, const PreservationSet& pset) {
  if (pset.empty()) throw Error("preservation_accuracy: empty preservation set");
  return evaluate_dataset(model, data.subset(pset.indices)).accuracy;
}

void save_preservation_set(const PreservationSet& pset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "rho=" << format_double(pset.rho) << ",seed=" << pset.seed << "\n";
  for (std::size_t i = 0; i < pset.size(); ++i) {
    out << pset.indices[i] << "," << provenance_name(pset.provenance[i]) << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

PreservationSet load_preservation_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("rho=", 0) != 0) {
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": missing 'rho=...,seed=...' header");
  }
  PreservationSet pset;
  const auto comma = line.find(",seed=");
  if (comma == std::string::npos) throw FormatError(FormatError::Kind::kMalformed, path.string() + ": bad header");
  try {
    pset.rho = std::stod(line.substr(4, comma - 4));
    pset.seed = std::stoull(line.substr(comma + 6));
  } catch (const std::exception&) {
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": bad header values");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sep = line.find(',');
    if (sep == std::string::npos) throw FormatError(FormatError::Kind::kMalformed, path.string() + ": bad line " + line);
    std::size_t index = 0;
    auto res = std::from_chars(line.data(), line.data() + sep, index);
    if (res.ec != std::errc() || res.ptr != line.data() + sep) {
      throw FormatError(FormatError::Kind::kMalformed, path.string() + ": bad index in " + line);
    }
    if (!pset.indices.empty() && index <= pset.indices.back()) {
      throw FormatError(FormatError::Kind::kMalformed, path.string() + ": indices must be strictly increasing");
    }
    pset.indices.push_back(index);
    pset.provenance.push_back(parse_provenance(std::string_view(line).substr(sep + 1)));
  }
  return pset;
}

}  // namespace sdsc
