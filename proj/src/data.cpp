#include "sdsc/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <iterator>

#include "sdsc/error.hpp"

namespace sdsc {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& file) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(FormatError::Kind::kTruncated, file + ": truncated IDX header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Source of the order-2 character table behind synthetic_names().
constexpr const char* kSeedNames[] = {
    "emma",     "olivia",  "ava",     "isabella", "sophia",  "charlotte", "mia",      "amelia",   "harper",
    "evelyn",   "abigail", "emily",   "elizabeth", "mila",   "ella",      "avery",    "sofia",    "camila",
    "aria",     "scarlett", "victoria", "madison", "luna",   "grace",     "chloe",    "penelope", "layla",
    "riley",    "zoey",    "nora",    "lily",     "eleanor", "hannah",    "lillian",  "addison",  "aubrey",
    "ellie",    "stella",  "natalie", "zoe",      "leah",    "hazel",     "violet",   "aurora",   "savannah",
    "audrey",   "brooklyn", "bella",  "claire",   "skylar",  "lucy",      "paisley",  "everly",   "anna",
    "caroline", "nova",    "genesis", "emilia",   "kennedy", "samantha",  "maya",     "willow",   "kinsley",
    "naomi",    "aaliyah", "elena",   "sarah",    "ariana",  "allison",   "gabriella", "alice",   "madelyn",
    "cora",     "ruby",    "eva",     "serenity", "autumn",  "adeline",   "hailey",   "gianna",   "valentina",
    "isla",     "eliana",  "quinn",   "nevaeh",   "ivy",     "sadie",     "piper",    "lydia",    "alexa",
    "josephine", "emery",  "julia",   "delilah",  "arianna", "vivian",    "kaylee",   "sophie",   "brielle",
    "madeline", "liam",    "noah",    "william",  "james",   "oliver",    "benjamin", "elijah",   "lucas",
    "mason",    "logan",   "alexander", "ethan",  "jacob",   "michael",   "daniel",   "henry",    "jackson",
    "sebastian", "aiden",  "matthew", "samuel",   "david",   "joseph",    "carter",   "owen",     "wyatt",
    "john",     "jack",    "luke",    "jayden",   "dylan",   "grayson",   "levi",     "isaac",    "gabriel",
    "julian",   "mateo",   "anthony", "jaxon",    "lincoln", "joshua",    "christopher", "andrew", "theodore",
    "caleb",    "ryan",    "asher",   "nathan",   "thomas",  "leo",       "isaiah",   "charles",  "josiah",
    "hudson",   "christian", "hunter", "connor",  "eli",     "ezra",      "aaron",    "landon",   "adrian",
    "jonathan", "nolan",   "jeremiah", "easton",  "elias",   "colton",    "cameron",  "carson",
};

// counts[a][b][c]: how often c follows the pair (a, b); 0 pads the start and
// marks the end. Two characters of context give the names structure that a
// single previous token cannot explain.
using TrigramTable = std::array<std::array<std::array<std::uint32_t, kNamesVocab>, kNamesVocab>, kNamesVocab>;

const TrigramTable& trigram_table() {
  static const TrigramTable table = [] {
    TrigramTable counts{};
    for (const char* name : kSeedNames) {
      int a = 0, b = 0;
      for (int token : tokenize(name)) {
        ++counts[a][b][token];
        a = b;
        b = token;
      }
      ++counts[a][b][0];
    }
    return counts;
  }();
  return table;
}

}  // namespace

std::span<const float> Dataset::sample(std::size_t id) const {
  if (id >= size()) throw Error("sample id " + std::to_string(id) + " out of range");
  return std::span<const float>(inputs).subspan(id * sample_numel(), sample_numel());
}

Batch Dataset::batch(std::span<const std::size_t> ids) const {
  if (ids.empty()) throw Error("empty batch");
  Shape shape{ids.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  std::vector<float> values;
  values.reserve(ids.size() * sample_numel());
  std::vector<int> labels;
  labels.reserve(ids.size());
  for (std::size_t id : ids) {
    auto s = sample(id);
    values.insert(values.end(), s.begin(), s.end());
    labels.push_back(targets[id]);
  }
  return Batch{Tensor(std::move(shape), std::move(values)), std::move(labels)};
}

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.num_classes = num_classes;
  out.task = task;
  out.split = split;
  for (std::size_t id : ids) {
    auto s = sample(id);
    out.inputs.insert(out.inputs.end(), s.begin(), s.end());
    out.targets.push_back(targets[id]);
  }
  return out;
}

std::vector<std::size_t> all_ids(const Dataset& data) {
  std::vector<std::size_t> ids(data.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_file(images);
  const auto label_bytes = read_file(labels);
  const std::string image_name = images.filename().string();
  const std::string label_name = labels.filename().string();

  const std::uint32_t image_magic = read_be32(image_bytes, 0, image_name);
  if (image_magic != kIdxImagesMagic) {
    throw FormatError(FormatError::Kind::kWrongMagic,
                      image_name + ": wrong IDX image magic " + std::to_string(image_magic));
  }
  const std::uint32_t label_magic = read_be32(label_bytes, 0, label_name);
  if (label_magic != kIdxLabelsMagic) {
    throw FormatError(FormatError::Kind::kWrongMagic,
                      label_name + ": wrong IDX label magic " + std::to_string(label_magic));
  }
  const std::size_t n = read_be32(image_bytes, 4, image_name);
  const std::size_t rows = read_be32(image_bytes, 8, image_name);
  const std::size_t cols = read_be32(image_bytes, 12, image_name);
  const std::size_t n_labels = read_be32(label_bytes, 4, label_name);
  if (n != n_labels) {
    throw FormatError(FormatError::Kind::kCountMismatch,
                      std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(FormatError::Kind::kMalformed, image_name + ": empty image dimensions");
  }
  if (image_bytes.size() < 16 + n * rows * cols) {
    throw FormatError(FormatError::Kind::kTruncated, image_name + ": truncated pixel payload");
  }
  if (label_bytes.size() < 8 + n) {
    throw FormatError(FormatError::Kind::kTruncated, label_name + ": truncated label payload");
  }

  Dataset data;
  data.sample_shape = {1, rows, cols};
  data.num_classes = 10;
  data.task = TaskKind::kClassification;
  data.inputs.resize(n * rows * cols);
  for (std::size_t i = 0; i < data.inputs.size(); ++i) data.inputs[i] = image_bytes[16 + i] / 255.0f;
  data.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = label_bytes[8 + i];
    if (label > 9) {
      throw FormatError(FormatError::Kind::kMalformed, label_name + ": label " + std::to_string(label) + " > 9");
    }
    data.targets[i] = label;
  }
  return data;
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (rows == 0 || cols == 0 || pixels.size() % (rows * cols) != 0) {
    throw Error("write_idx_images: pixel count is not a multiple of rows·cols");
  }
  std::vector<std::uint8_t> bytes;
  append_be32(bytes, kIdxImagesMagic);
  append_be32(bytes, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
  append_be32(bytes, static_cast<std::uint32_t>(rows));
  append_be32(bytes, static_cast<std::uint32_t>(cols));
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_file(path, bytes);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> bytes;
  append_be32(bytes, kIdxLabelsMagic);
  append_be32(bytes, static_cast<std::uint32_t>(labels.size()));
  bytes.insert(bytes.end(), labels.begin(), labels.end());
  write_file(path, bytes);
}

std::string normalize_name(std::string_view raw) {
  std::string out;
  for (char c : raw) {
    const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower >= 'a' && lower <= 'z') out.push_back(lower);
  }
  return out;
}

std::vector<int> tokenize(std::string_view name) {
  std::vector<int> tokens;
  for (char c : normalize_name(name)) tokens.push_back(c - 'a' + 1);
  return tokens;
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (t < 0 || t >= static_cast<int>(kNamesVocab)) throw Error("detokenize: token " + std::to_string(t));
    out.push_back(t == 0 ? '.' : static_cast<char>('a' + t - 1));
  }
  return out;
}

Dataset names_dataset(std::span<const std::string> names, std::size_t context) {
  if (context == 0) throw Error("names_dataset: context must be at least 1");
  Dataset data;
  data.sample_shape = {context};
  data.num_classes = kNamesVocab;
  data.task = TaskKind::kLanguageModel;
  for (const std::string& name : names) {
    const std::vector<int> body = tokenize(name);
    if (body.empty()) continue;
    std::vector<int> padded(context, 0);
    padded.insert(padded.end(), body.begin(), body.end());
    padded.push_back(0);
    for (std::size_t start = 0; start + context < padded.size(); ++start) {
      for (std::size_t t = 0; t < context; ++t) data.inputs.push_back(static_cast<float>(padded[start + t]));
      data.targets.push_back(padded[start + context]);
    }
  }
  if (data.targets.empty()) throw Error("names corpus is empty");
  return data;
}

std::vector<std::string> read_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    std::string name = normalize_name(line);
    if (!name.empty()) names.push_back(std::move(name));
  }
  if (names.empty()) throw Error(path.string() + ": names corpus is empty");
  return names;
}

Dataset load_names_corpus(const std::filesystem::path& path, std::size_t context) {
  const auto names = read_names(path);
  return names_dataset(names, context);
}

Dataset synthetic_vision(std::size_t n, std::uint64_t seed, double label_noise) {
  if (n < 10) throw Error("synthetic_vision: need at least 10 samples");
  constexpr std::size_t kSide = 28;
  Rng rng(seed);
  Dataset data;
  data.sample_shape = {1, kSide, kSide};
  data.num_classes = 10;
  data.task = TaskKind::kClassification;
  data.inputs.assign(n * kSide * kSide, 0.0f);
  data.targets.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    float* img = data.inputs.data() + s * kSide * kSide;
    const int cls = static_cast<int>(rng.below(10));
    for (std::size_t p = 0; p < kSide * kSide; ++p) img[p] = static_cast<float>(rng.uniform(0.0, 0.15));

    const std::size_t band = 6 * static_cast<std::size_t>(cls % 5);
    const std::size_t start = rng.below(8);
    const std::size_t length = 14 + rng.below(7);
    const float intensity = static_cast<float>(rng.uniform(0.6, 1.0));
    for (std::size_t across = band; across < band + 3; ++across) {
      for (std::size_t along = start; along < std::min(kSide, start + length); ++along) {
        const std::size_t y = cls < 5 ? across : along;
        const std::size_t x = cls < 5 ? along : across;
        img[y * kSide + x] = intensity;
      }
    }
    const std::size_t by = rng.below(kSide - 2);
    const std::size_t bx = rng.below(kSide - 2);
    const float faint = static_cast<float>(rng.uniform(0.2, 0.4));
    for (std::size_t y = by; y < by + 3; ++y) {
      for (std::size_t x = bx; x < bx + 3; ++x) img[y * kSide + x] = std::max(img[y * kSide + x], faint);
    }

    // Both draws always happen so the images do not depend on the noise rate.
    const double flip = rng.uniform();
    const auto shift = rng.below(9);
    const int label = flip < label_noise ? static_cast<int>((cls + 1 + shift) % 10) : cls;
    data.targets[s] = label;
  }
  return data;
}

std::vector<std::string> synthetic_names(std::size_t n, std::uint64_t seed) {
  constexpr std::size_t kMaxLength = 12;
  const TrigramTable& table = trigram_table();
  Rng rng(seed);
  std::vector<std::string> names;
  names.reserve(n);
  while (names.size() < n) {
    std::string name;
    int a = 0, b = 0;
    while (name.size() < kMaxLength) {
      const auto& row = table[a][b];
      std::uint64_t total = 0;
      for (std::uint32_t c : row) total += c;
      std::uint64_t draw = rng.below(total);
      int next = 0;
      while (draw >= row[next]) draw -= row[next++];
      if (next == 0) break;
      name.push_back(static_cast<char>('a' + next - 1));
      a = b;
      b = next;
    }
    if (!name.empty()) names.push_back(std::move(name));
  }
  return names;
}

Dataset synthetic_text(std::size_t n_names, std::uint64_t seed, std::size_t context) {
  if (n_names < 10) throw Error("synthetic_text: need at least 10 names");
  const auto names = synthetic_names(n_names, seed);
  return names_dataset(names, context);
}

}  // namespace sdsc
