#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sdsc/data.hpp"
#include "sdsc/error.hpp"

using namespace sdsc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::current_path() / "scratch_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Big-endian IDX header built by hand.
std::vector<std::uint8_t> header(std::uint32_t magic, std::vector<std::uint32_t> dims) {
  std::vector<std::uint8_t> out;
  dims.insert(dims.begin(), magic);
  for (std::uint32_t v : dims)
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
  return out;
}

FormatError::Kind load_error(const fs::path& img, const fs::path& lbl) {
  try {
    load_idx_images(img, lbl);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("expected a format error");
  return FormatError::Kind::kMalformed;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("hand built IDX pair") {
    auto img = header(0x803, {2, 2, 2});
    for (std::uint8_t v : {51, 0, 255, 17, 1, 2, 3, 4}) img.push_back(v);
    auto lbl = header(0x801, {2});
    lbl.push_back(3);
    lbl.push_back(9);
    write_bytes(scratch("a-images"), img);
    write_bytes(scratch("a-labels"), lbl);
    Dataset d = load_idx_images(scratch("a-images"), scratch("a-labels"));
    CHECK(d.size() == 2);
    CHECK(d.sample_shape == Shape{1, 2, 2});
    CHECK(d.sample(0)[0] == 51.0f / 255.0f);
    CHECK(d.sample(0)[2] == 1.0f);
    CHECK(d.sample(1)[3] == 4.0f / 255.0f);
    CHECK(d.targets == std::vector<int>{3, 9});
    CHECK(d.num_classes == 10);
  }

  TEST_CASE("IDX errors are distinct") {
    auto lbl = header(0x801, {1});
    lbl.push_back(0);
    write_bytes(scratch("l1"), lbl);

    auto bad = header(0x802, {1, 2, 2});
    bad.resize(bad.size() + 4, 0);
    write_bytes(scratch("bad-magic"), bad);
    CHECK(load_error(scratch("bad-magic"), scratch("l1")) == FormatError::Kind::kWrongMagic);

    auto three = header(0x803, {3, 2, 2});
    three.resize(three.size() + 12, 7);
    auto two = header(0x801, {2});
    two.push_back(1);
    two.push_back(2);
    write_bytes(scratch("three"), three);
    write_bytes(scratch("two"), two);
    CHECK(load_error(scratch("three"), scratch("two")) == FormatError::Kind::kCountMismatch);

    auto short_img = header(0x803, {1, 2, 2});
    short_img.push_back(1);
    write_bytes(scratch("short"), short_img);
    CHECK(load_error(scratch("short"), scratch("l1")) == FormatError::Kind::kTruncated);

    write_bytes(scratch("stub"), {0, 0, 8});
    CHECK(load_error(scratch("stub"), scratch("l1")) == FormatError::Kind::kTruncated);
  }

  TEST_CASE("IDX round trip") {
    Rng rng(4);
    std::vector<std::uint8_t> pixels(5 * 28 * 28), labels(5);
    for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.below(256));
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(10));
    write_idx_images(scratch("rt-images"), 28, 28, pixels);
    write_idx_labels(scratch("rt-labels"), labels);
    Dataset d = load_idx_images(scratch("rt-images"), scratch("rt-labels"));
    REQUIRE(d.inputs.size() == pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
      CHECK(static_cast<std::uint8_t>(std::lround(d.inputs[i] * 255.0f)) == pixels[i]);
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(d.targets[i] == labels[i]);
  }

  TEST_CASE("names windows") {
    std::vector<std::string> names{"ab"};
    Dataset d = names_dataset(names, 3);
    REQUIRE(d.size() == 3);
    std::vector<std::string> windows;
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<int> toks;
      for (float v : d.sample(i)) toks.push_back(static_cast<int>(v));
      windows.push_back(detokenize(toks));
    }
    CHECK(windows == std::vector<std::string>{"...", "..a", ".ab"});
    CHECK(d.targets == std::vector<int>{1, 2, 0});
    CHECK(d.num_classes == 27);
    CHECK(d.task == TaskKind::kLanguageModel);
  }

  TEST_CASE("names corpus file") {
    {
      std::ofstream out(scratch("names.txt"));
      out << "Anna\nbo-b\n\n  Zed9\n";
    }
    auto names = read_names(scratch("names.txt"));
    CHECK(names == std::vector<std::string>{"anna", "bob", "zed"});
    Dataset d = load_names_corpus(scratch("names.txt"), 4);
    CHECK(d.size() == 5 + 4 + 4);
    CHECK(d.num_classes == kNamesVocab);
    { std::ofstream out(scratch("empty.txt")); }
    CHECK_THROWS_AS(load_names_corpus(scratch("empty.txt"), 4), Error);
  }

  TEST_CASE("tokenizer inverse") {
    for (const std::string& raw : {"Mary-Jane", "o'brien", "x", "ZZ top"}) {
      CHECK(detokenize(tokenize(raw)) == normalize_name(raw));
    }
    for (const std::string& name : synthetic_names(200, 5)) CHECK(detokenize(tokenize(name)) == name);
  }

  TEST_CASE("synthetic vision is deterministic and class bands hold") {
    Dataset a = synthetic_vision(300, 12, 0.0);
    Dataset b = synthetic_vision(300, 12, 0.0);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK(synthetic_vision(300, 13, 0.0).inputs != a.inputs);
    std::size_t zeros = 0;
    for (std::size_t s = 0; s < a.size(); ++s) {
      if (a.targets[s] != 0) continue;
      ++zeros;
      auto img = a.sample(s);
      for (std::size_t row = 0; row < 3; ++row) {
        std::size_t bright = 0;
        for (std::size_t x = 0; x < 28; ++x) bright += img[row * 28 + x] >= 0.6f;
        CHECK(bright >= 14);
      }
    }
    CHECK(zeros > 0);
    for (float v : a.inputs) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("synthetic vision label noise rate") {
    Dataset clean = synthetic_vision(4000, 3, 0.0);
    Dataset noisy = synthetic_vision(4000, 3, 0.05);
    CHECK(clean.inputs == noisy.inputs);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) changed += clean.targets[i] != noisy.targets[i];
    CHECK(changed > 120);
    CHECK(changed < 280);
    CHECK_THROWS_AS(synthetic_vision(5, 1), Error);
  }

  TEST_CASE("synthetic text") {
    Dataset a = synthetic_text(50, 9, 16);
    Dataset b = synthetic_text(50, 9, 16);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK(a.sample_shape == Shape{16});
    for (int t : a.targets) {
      CHECK(t >= 0);
      CHECK(t < 27);
    }
  }

  TEST_CASE("batches and subsets") {
    Dataset d = synthetic_vision(20, 1);
    std::vector<std::size_t> ids{3, 7};
    Batch batch = d.batch(ids);
    CHECK(batch.inputs.shape() == Shape{2, 1, 28, 28});
    CHECK(batch.targets == std::vector<int>{d.targets[3], d.targets[7]});
    Dataset sub = d.subset(ids);
    CHECK(sub.size() == 2);
    CHECK(sub.sample(1)[100] == d.sample(7)[100]);
    CHECK_THROWS_AS(d.sample(20), Error);
  }
}
