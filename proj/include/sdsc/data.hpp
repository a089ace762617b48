#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdsc/tensor.hpp"

namespace sdsc {

enum class TaskKind { kClassification, kLanguageModel };

struct Batch {
  Tensor inputs;
  std::vector<int> targets;
};

// Samples are addressed by id 0..n-1. Images are stored as floats in [0, 1];
// token windows as token ids held in floats.
struct Dataset {
  Shape sample_shape;
  std::vector<float> inputs;
  std::vector<int> targets;
  std::size_t num_classes = 0;
  TaskKind task = TaskKind::kClassification;
  std::string split = "train";

  std::size_t size() const { return targets.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }
  std::span<const float> sample(std::size_t id) const;
  Batch batch(std::span<const std::size_t> ids) const;
  Dataset subset(std::span<const std::size_t> ids) const;
};

std::vector<std::size_t> all_ids(const Dataset& data);

// IDX (big-endian): images magic 0x00000803 with dims (n, rows, cols) of
// unsigned bytes scaled to [0,1]; labels magic 0x00000801 with n bytes in 0..9.
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

// Character vocabulary: '.' is the boundary token 0, 'a'..'z' are 1..26.
constexpr std::size_t kNamesVocab = 27;

std::string normalize_name(std::string_view raw);
std::vector<int> tokenize(std::string_view name);
std::string detokenize(std::span<const int> tokens);

// Each name is padded with `context` leading boundary tokens and one trailing
// one; every window of `context` tokens is paired with the token after it.
Dataset names_dataset(std::span<const std::string> names, std::size_t context);
std::vector<std::string> read_names(const std::filesystem::path& path);
Dataset load_names_corpus(const std::filesystem::path& path, std::size_t context);

// 10-class 28×28 images: classes 0-4 carry a horizontal bar in rows 6c..6c+2,
// classes 5-9 a vertical bar in columns 6(c-5)..6(c-5)+2, over background
// noise and a faint distractor blob. `label_noise` of the labels are
// replaced by a different class.
Dataset synthetic_vision(std::size_t n, std::uint64_t seed, double label_noise = 0.05);

// Names drawn from a character bigram table built from an embedded list.
std::vector<std::string> synthetic_names(std::size_t n, std::uint64_t seed);
Dataset synthetic_text(std::size_t n_names, std::uint64_t seed, std::size_t context = 16);

}  // namespace sdsc
