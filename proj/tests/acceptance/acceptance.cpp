// One PASS/FAIL line per acceptance criterion. `acceptance N` runs criterion
// N; without an argument all ten run in order.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdsc/checkpoint.hpp"
#include "sdsc/compressor.hpp"
#include "sdsc/error.hpp"
#include "sdsc/experiment.hpp"
#include "sdsc/nn.hpp"
#include "sdsc/ops.hpp"
#include "sdsc/preserve.hpp"
#include "sdsc/quant.hpp"
#include "support/oracles.hpp"

using namespace sdsc;
namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::current_path() / "scratch_acceptance";

// Failures accumulate here; a criterion passes when none were recorded.
struct Verdict {
  std::vector<std::string> failures;
  std::ostringstream notes;

  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 20) failures.push_back(what);
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------- 1

void quantizer_suite(Verdict& v) {
  const auto t0 = Clock::now();
  v.expect(quantize_value(0.3f, 4, -2) == 0.25f, "q(0.3, 4, -2) != 0.25");
  v.expect(quantize_value(100.0f, 4, 0) == 7.0f, "q(100, 4, 0) != 7");
  v.expect(quantize_value(-0.3f, 4, -2) == -0.5f, "q(-0.3, 4, -2) != -0.5");
  for (float b : {1.0f, 3.0f, 8.0f, 16.0f})
    for (float e : {-9.0f, -1.0f, 0.0f, 5.0f}) v.expect(quantize_value(0.0f, b, e) == 0.0f, "q(0, b, e) != 0");

  Rng rng(2024);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    const float b = static_cast<float>(1 + rng.below(16));
    const float e = static_cast<float>(static_cast<int>(rng.below(21)) - 10);
    const float x = static_cast<float>((2.0 * rng.uniform() - 1.0) * std::exp2(e + b + 1.0));
    const float q = quantize_value(x, b, e);
    const double k = q / std::exp2(e);
    const double half = std::exp2(b - 1.0);
    const std::string at = "x=" + std::to_string(x) + " b=" + std::to_string(b) + " e=" + std::to_string(e);
    v.expect(k == std::floor(k) && k >= -half && k <= half - 1.0, "off grid at " + at);
    v.expect(std::abs(q) <= std::exp2(e) * half, "saturation bound at " + at);
    v.expect(quantize_value(q, b, e) == q, "not idempotent at " + at);
    // Floor, up to the 2^-22 relative snap that absorbs float rounding near a grid point.
    v.expect(q <= x + std::abs(x) * std::exp2(-21.0) || k == -half, "rounds up at " + at);
    const float x2 = x + static_cast<float>(rng.uniform() * std::exp2(e + 2.0));
    v.expect(quantize_value(x2, b, e) >= q, "not monotone at " + at);
  }
  const double secs = seconds_since(t0);
  v.expect(secs < 5.0, "took " + std::to_string(secs) + " s");
  v.notes << trials << " random (x, b, e) and 4 hand examples in " << secs << " s";
}

// ---------------------------------------------------------------- 2

// The surrogate 2^e·clamp(2^-e·x, -2^(b-1), 2^(b-1)-1), in double.
double surrogate(double x, double b, double e) {
  if (b <= 0.0) return 0.0;
  const double half = std::exp2(b - 1.0);
  return std::exp2(e) * std::min(std::max(std::exp2(-e) * x, -half), half - 1.0);
}

AttentionBlock random_block(std::size_t d, std::size_t heads, std::size_t ff, Rng& rng) {
  AttentionBlock b;
  b.d_model = d;
  b.n_heads = heads;
  b.d_head = d / heads;
  b.heads = oracle::uniform(Shape{heads, 4, d, d / heads}, rng, -0.5, 0.5, true);
  b.out_bias = oracle::uniform(Shape{d}, rng, -0.1, 0.1, true);
  b.ln1_gamma = oracle::uniform(Shape{d}, rng, 0.8, 1.2, true);
  b.ln1_beta = oracle::uniform(Shape{d}, rng, -0.1, 0.1, true);
  b.ln2_gamma = oracle::uniform(Shape{d}, rng, 0.8, 1.2, true);
  b.ln2_beta = oracle::uniform(Shape{d}, rng, -0.1, 0.1, true);
  b.ff_w1 = oracle::uniform(Shape{d, ff}, rng, -0.5, 0.5, true);
  b.ff_b1 = oracle::uniform(Shape{ff}, rng, -0.1, 0.1, true);
  b.ff_w2 = oracle::uniform(Shape{ff, d}, rng, -0.5, 0.5, true);
  b.ff_b2 = oracle::uniform(Shape{d}, rng, -0.1, 0.1, true);
  b.head_live.assign(heads, 1);
  return b;
}

// Single-head causal attention over q, k, v[B,T,dh], in double.
std::vector<double> causal_attention_ref(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t B = q.dim(0), T = q.dim(1), D = q.dim(2);
  std::vector<double> out(B * T * D, 0.0);
  auto at = [&](const Tensor& t, std::size_t b, std::size_t i, std::size_t d) {
    return static_cast<double>(t.data()[(b * T + i) * D + d]);
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> s(i + 1);
      double m = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double dotp = 0.0;
        for (std::size_t d = 0; d < D; ++d) dotp += at(q, b, i, d) * at(k, b, j, d);
        s[j] = dotp / std::sqrt(static_cast<double>(D));
        m = std::max(m, s[j]);
      }
      double z = 0.0;
      for (double& x : s) z += (x = std::exp(x - m));
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t d = 0; d < D; ++d) out[(b * T + i) * D + d] += s[j] / z * at(v, b, j, d);
    }
  return out;
}

void gradient_suite(Verdict& v) {
  const auto t0 = Clock::now();
  const int seeds = 20;
  const double rel = 1e-2, abs = 1e-4, h = 1e-3;
  std::size_t checks = 0;
  auto record = [&](const char* name, std::uint64_t seed, const oracle::GradCheck& r) {
    ++checks;
    v.expect(r.ok, std::string(name) + " seed " + std::to_string(seed) + ": " + r.worst);
  };
  auto dot = [](const std::vector<double>& a, const Tensor& p) { return oracle::dot(a, p); };

  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    Rng rng(7000 + seed);
    // Elementwise and reductions; relu and abs inputs stay clear of zero.
    Tensor a = oracle::signed_uniform(Shape{3, 4}, rng, 0.05, 1.0, true);
    Tensor b = oracle::uniform(Shape{3, 4}, rng, -1, 1, true);
    Tensor p = oracle::uniform(Shape{3, 4}, rng, -1, 1);
    record("add", seed, oracle::gradcheck([&] { return oracle::project(add(a, b), p); }, {a, b}, h, rel, abs));
    record("sub", seed, oracle::gradcheck([&] { return oracle::project(sub(a, b), p); }, {a, b}, h, rel, abs));
    record("mul", seed, oracle::gradcheck([&] { return oracle::project(mul(a, b), p); }, {a, b}, h, rel, abs));
    record("scale", seed, oracle::gradcheck([&] { return oracle::project(scale(a, -1.7f), p); }, {a}, h, rel, abs));
    record("relu", seed, oracle::gradcheck([&] { return oracle::project(relu(a), p); }, {a}, h, rel, abs));
    record("sum", seed, oracle::gradcheck([&] { return scale(sum(mul(a, b)), 0.5f); }, {a, b}, h, rel, abs));
    record("mean", seed, oracle::gradcheck([&] { return mean(mul(a, b)); }, {a, b}, h, rel, abs));
    record("abs_sum", seed, oracle::gradcheck([&] { return abs_sum(a); }, {a}, h, rel, abs));
    Tensor p62 = oracle::uniform(Shape{6, 2}, rng, -1, 1);
    record("reshape", seed,
           oracle::gradcheck([&] { return oracle::project(reshape(a, Shape{6, 2}), p62); }, {a}, h, rel, abs));
    Tensor p5 = oracle::uniform(Shape{5}, rng, -1, 1);
    record("slice", seed, oracle::gradcheck([&] { return oracle::project(slice(a, 3, Shape{5}), p5); }, {a}, h, rel, abs));
    const std::vector<std::size_t> rows{2, 0, 2};
    Tensor pr = oracle::uniform(Shape{3, 4}, rng, -1, 1);
    record("gather_rows", seed,
           oracle::gradcheck([&] { return oracle::project(gather_rows(a, rows), pr); }, {a}, h, rel, abs));

    Tensor m1 = oracle::uniform(Shape{3, 5}, rng, -1, 1, true);
    Tensor m2 = oracle::uniform(Shape{5, 2}, rng, -1, 1, true);
    Tensor bias = oracle::uniform(Shape{2}, rng, -1, 1, true);
    Tensor pm = oracle::uniform(Shape{3, 2}, rng, -1, 1);
    record("matmul", seed, oracle::gradcheck([&] { return oracle::project(matmul(m1, m2), pm); }, {m1, m2}, h, rel, abs));
    record("linear", seed,
           oracle::gradcheck([&] { return oracle::project(linear(m1, m2, bias), pm); }, {m1, m2, bias}, h, rel, abs));
    Tensor xb = oracle::uniform(Shape{3, 2}, rng, -1, 1, true);
    record("add_bias", seed,
           oracle::gradcheck([&] { return oracle::project(add_bias(xb, bias), pm); }, {xb, bias}, h, rel, abs));
    Tensor sc = oracle::uniform(Shape{2, 3, 2, 2}, rng, -1, 1, true);
    Tensor psc = oracle::uniform(Shape{2, 3, 2, 2}, rng, -1, 1);
    const std::vector<float> factors{0.5f, 0.0f, -2.0f};
    record("scale_channels", seed,
           oracle::gradcheck([&] { return oracle::project(scale_channels(sc, factors), psc); }, {sc}, h, rel, abs));

    // Layers, differenced against double-precision references.
    Tensor x = oracle::uniform(Shape{2, 2, 4, 4}, rng, -1, 1, true);
    Tensor w = oracle::uniform(Shape{3, 2, 3, 3}, rng, -1, 1, true);
    Tensor cb = oracle::uniform(Shape{3}, rng, -1, 1, true);
    Tensor pc = oracle::uniform(Shape{2, 3, 4, 4}, rng, -1, 1);
    record("conv2d", seed,
           oracle::gradcheck([&] { return oracle::project(conv2d(x, w, cb, 1, 1), pc); }, {x, w, cb}, h, rel, abs,
                             [&] { return dot(oracle::conv2d(x, w, cb, 1, 1), pc); }));

    Tensor bx = oracle::uniform(Shape{4, 2, 2, 2}, rng, -1, 1, true);
    Tensor g = oracle::uniform(Shape{2}, rng, 0.5, 1.5, true);
    Tensor be = oracle::uniform(Shape{2}, rng, -0.5, 0.5, true);
    Tensor pb = oracle::uniform(Shape{4, 2, 2, 2}, rng, -1, 1);
    RunningStats stats(2);
    record("batchnorm", seed,
           oracle::gradcheck([&] { return oracle::project(batchnorm(bx, g, be, stats, Mode::kTrain), pb); },
                             {bx, g, be}, h, rel, abs, [&] { return dot(oracle::batchnorm_train(bx, g, be), pb); }));

    Tensor mx = oracle::uniform(Shape{1, 2, 4, 4}, rng, -1, 1, true);
    Tensor pp = oracle::uniform(Shape{1, 2, 2, 2}, rng, -1, 1);
    record("maxpool2x2", seed,
           oracle::gradcheck([&] { return oracle::project(maxpool2x2(mx), pp); }, {mx}, h, rel, abs,
                             [&] { return dot(oracle::maxpool2x2(mx), pp); }));

    Tensor lx = oracle::uniform(Shape{3, 5}, rng, -1, 1, true);
    Tensor lg = oracle::uniform(Shape{5}, rng, 0.5, 1.5, true);
    Tensor lb = oracle::uniform(Shape{5}, rng, -0.5, 0.5, true);
    Tensor pl = oracle::uniform(Shape{3, 5}, rng, -1, 1);
    record("layernorm", seed,
           oracle::gradcheck([&] { return oracle::project(layernorm(lx, lg, lb), pl); }, {lx, lg, lb}, h, rel, abs,
                             [&] { return dot(oracle::layernorm(lx, lg, lb), pl); }));

    Tensor logits = oracle::uniform(Shape{4, 6}, rng, -2, 2, true);
    const std::vector<int> y{0, 5, 2, 3};
    record("cross_entropy", seed,
           oracle::gradcheck([&] { return cross_entropy(logits, y); }, {logits}, h, rel, abs,
                             [&] { return oracle::cross_entropy(logits, y); }));

    Tensor table = oracle::uniform(Shape{5, 3}, rng, -1, 1, true);
    const std::vector<int> ids{4, 1, 1, 0};
    Tensor pe = oracle::uniform(Shape{4, 3}, rng, -1, 1);
    record("embedding", seed,
           oracle::gradcheck([&] { return oracle::project(embedding(table, ids), pe); }, {table}, h, rel, abs));

    Tensor q = oracle::uniform(Shape{2, 3, 4}, rng, -1, 1, true);
    Tensor k = oracle::uniform(Shape{2, 3, 4}, rng, -1, 1, true);
    Tensor val = oracle::uniform(Shape{2, 3, 4}, rng, -1, 1, true);
    Tensor pa = oracle::uniform(Shape{2, 3, 4}, rng, -1, 1);
    record("causal_attention", seed,
           oracle::gradcheck([&] { return oracle::project(causal_attention(q, k, val), pa); }, {q, k, val}, h, rel,
                             abs, [&] { return dot(causal_attention_ref(q, k, val), pa); }));

    // Redraw until the feed-forward ReLU pre-activations sit clear of the kink.
    AttentionBlock blk;
    Tensor ax;
    for (double kink = 0.0; kink < 2e-2;) {
      blk = random_block(4, 2, 8, rng);
      ax = oracle::uniform(Shape{1, 3, 4}, rng, -1, 1, true);
      oracle::attention_block(ax, blk, &kink);
    }
    Tensor pt = oracle::uniform(Shape{1, 3, 4}, rng, -1, 1);
    record("attention_block", seed,
           oracle::gradcheck([&] { return oracle::project(attention_forward(ax, blk, 3), pt); },
                             {ax, blk.heads, blk.out_bias, blk.ln1_gamma, blk.ln1_beta, blk.ln2_gamma, blk.ln2_beta,
                              blk.ff_w1, blk.ff_b1, blk.ff_w2, blk.ff_b2},
                             h, rel, abs, [&] { return dot(oracle::attention_block(ax, blk), pt); }));

    // Tape gradients of quantize() against the differenced surrogate; x stays
    // off the clamp corners where the surrogate has kinks.
    Tensor qb(Shape{2}, {static_cast<float>(2.0 + 3.0 * rng.uniform()), static_cast<float>(2.0 + 3.0 * rng.uniform())});
    Tensor qe(Shape{2}, {static_cast<float>(-2.0 + rng.uniform()), static_cast<float>(-1.0 + rng.uniform())});
    Tensor qx(Shape{2, 6});
    for (std::size_t i = 0; i < 12; ++i) {
      const std::size_t grp = i / 6;
      const double lim = std::exp2(qe.data()[grp] + qb.data()[grp] - 1.0);
      double xv;
      do {
        xv = (2.0 * rng.uniform() - 1.0) * 2.0 * lim;
      } while (std::abs(std::abs(xv) - lim) < 0.1 * lim);
      qx.data()[i] = static_cast<float>(xv);
    }
    qb.set_requires_grad(true);
    qe.set_requires_grad(true);
    qx.set_requires_grad(true);
    Tensor pq = oracle::uniform(Shape{2, 6}, rng, -1, 1);
    record("quantize (surrogate)", seed,
           oracle::gradcheck([&] { return oracle::project(quantize(qx, qb, qe), pq); }, {qx, qb, qe}, h, rel, abs, [&] {
             double s = 0.0;
             for (std::size_t i = 0; i < 12; ++i)
               s += pq.data()[i] * surrogate(qx.data()[i], qb.data()[i / 6], qe.data()[i / 6]);
             return s;
           }));

    SizeModel sm{{ConvSizeDesc{2, 3, 3, 2}, AttentionSizeDesc{4, 2, 2}}};
    Tensor sb0 = oracle::uniform(Shape{2}, rng, 1, 6, true);
    Tensor sb1 = oracle::uniform(Shape{2}, rng, 1, 6, true);
    record("average_bit_depth", seed,
           oracle::gradcheck([&] { return average_bit_depth(sm, std::vector<Tensor>{sb0, sb1}); }, {sb0, sb1}, h, rel,
                             abs, [&] {
                               return (oracle::conv_size_bits(2, 3, 3, std::vector<float>(sb0.data().begin(), sb0.data().end())) +
                                       oracle::attention_size_bits(4, 2, std::vector<float>(sb1.data().begin(), sb1.data().end()))) / 2.0;
                             }));
  }

  // Scalar surrogate partials at 2000 random points, rel 1e-3.
  Rng rng(99);
  std::size_t surrogate_points = 0;
  while (surrogate_points < 2000) {
    const double b = 1.0 + 7.0 * rng.uniform();
    const double e = -4.0 + 8.0 * rng.uniform();
    const double x = (2.0 * rng.uniform() - 1.0) * std::exp2(e + b + 1.0);
    const double s = std::exp2(-e) * x, half = std::exp2(b - 1.0);
    if (std::abs(s - half + 1.0) < 1e-2 || std::abs(s + half) < 1e-2) continue;
    const double d = 1e-6;
    const double ndx = (surrogate(x + d, b, e) - surrogate(x - d, b, e)) / (2 * d);
    const double ndb = (surrogate(x, b + d, e) - surrogate(x, b - d, e)) / (2 * d);
    const double nde = (surrogate(x, b, e + d) - surrogate(x, b, e - d)) / (2 * d);
    const SurrogateGrad gr =
        quantize_surrogate_grad(static_cast<float>(x), static_cast<float>(b), static_cast<float>(e));
    auto near = [](double an, double nu) { return std::abs(an - nu) <= 1e-3 * std::max(std::abs(nu), 1.0); };
    v.expect(near(gr.dx, ndx) && near(gr.db, ndb) && near(gr.de, nde),
             "surrogate at x=" + std::to_string(x) + " b=" + std::to_string(b) + " e=" + std::to_string(e));
    ++surrogate_points;
  }
  const double secs = seconds_since(t0);
  v.expect(secs < 60.0, "took " + std::to_string(secs) + " s");
  v.notes << checks << " primitive checks over " << seeds << " seeds, " << surrogate_points << " surrogate points in "
          << secs << " s";
}

// ---------------------------------------------------------------- 3

std::vector<float> random_bits(std::size_t n, Rng& rng) {
  std::vector<float> b(n);
  for (float& x : b) {
    const double u = rng.uniform();
    x = u < 0.1 ? 0.0f : u < 0.15 ? -static_cast<float>(rng.uniform()) : static_cast<float>(16.0 * rng.uniform());
  }
  return b;
}

void size_oracle(Verdict& v) {
  Rng rng(31);
  std::size_t layers_checked = 0;
  for (int c = 0; c < 100; ++c) {
    // Free-standing size model.
    SizeModel sm;
    std::vector<std::vector<float>> bits;
    std::vector<double> z;
    const std::size_t n_layers = 1 + rng.below(5);
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (rng.uniform() < 0.5) {
        ConvSizeDesc d{1 + rng.below(32), 1 + rng.below(28), 1 + rng.below(28), 1 + rng.below(64)};
        bits.push_back(random_bits(d.out_channels, rng));
        sm.layers.push_back(d);
        z.push_back(oracle::conv_size_bits(d.in_channels, d.out_height, d.out_width, bits.back()));
        v.expect(layer_quantized_size(d, bits.back()) == z.back(), "conv size, case " + std::to_string(c));
      } else {
        AttentionSizeDesc d{1 + rng.below(128), 1 + rng.below(32), 1 + rng.below(8)};
        bits.push_back(random_bits(d.n_heads, rng));
        sm.layers.push_back(d);
        z.push_back(oracle::attention_size_bits(d.d_model, d.d_head, bits.back()));
        v.expect(attention_quantized_size(d, bits.back()) == z.back(), "attention size, case " + std::to_string(c));
      }
      ++layers_checked;
    }
    std::vector<std::span<const float>> spans(bits.begin(), bits.end());
    double total = 0.0;
    for (double zl : z) total += zl;
    v.expect(average_bit_depth(sm, spans) == total / static_cast<double>(n_layers), "Q, case " + std::to_string(c));

    // dQ/db by central differences where Q is linear in b.
    std::vector<Tensor> tb;
    for (auto& b : bits) {
      for (float& x : b) x = std::max(x, 1.0f);
      tb.emplace_back(Shape{b.size()}, b);
      tb.back().set_requires_grad(true);
    }
    Tape tape;
    Tape::Scope scope(tape);
    auto grads = tape.grad(average_bit_depth(sm, tb));
    const std::size_t l = rng.below(n_layers), g = rng.below(bits[l].size());
    const float step = 0.25f;
    auto q_with = [&](float delta) {
      auto copy = bits;
      copy[l][g] += delta;
      std::vector<std::span<const float>> s(copy.begin(), copy.end());
      return average_bit_depth(sm, s);
    };
    const double numeric = (q_with(step) - q_with(-step)) / (2.0 * step);
    const double analytic = grads.at(tb[l].id()).data()[g];
    v.expect(std::abs(analytic - numeric) <= 1e-4 * std::abs(numeric), "dQ/db, case " + std::to_string(c));

    // Bytes of a random inventory.
    ByteInventory inv;
    std::vector<std::size_t> el;
    std::vector<float> gb;
    const std::size_t groups = rng.below(40);
    for (std::size_t i = 0; i < groups; ++i) {
      el.push_back(1 + rng.below(600));
      gb.push_back(random_bits(1, rng)[0]);
      inv.quantized_groups.push_back({el.back(), gb.back()});
    }
    inv.unquantized_elements = rng.below(100000);
    v.expect(model_bytes(inv) == oracle::bytes(el, gb, inv.unquantized_elements), "bytes, case " + std::to_string(c));
  }

  // Whole models: Q from the layer geometry, bytes from a parameter census.
  for (int c = 0; c < 20; ++c) {
    Rng mr(500 + c);
    std::unique_ptr<Model> model;
    std::vector<std::function<double(const std::vector<float>&)>> z_of;
    if (c % 2 == 0) {
      CnnSpec s;
      s.channels.clear();
      const std::size_t n = 1 + mr.below(2);
      for (std::size_t i = 0; i < n; ++i) s.channels.push_back(2 + mr.below(6));
      s.input_size = 8;
      model = build_cnn(s, mr, 8.0f);
      std::size_t in = 1, extent = 8;
      for (std::size_t i = 0; i < n; ++i) {
        z_of.push_back([in, extent](const std::vector<float>& b) { return oracle::conv_size_bits(in, extent, extent, b); });
        in = s.channels[i];
        extent /= 2;
      }
    } else {
      DecoderSpec s;
      s.d_model = 8 * (1 + mr.below(2));
      s.n_heads = 2;
      s.n_blocks = 1 + mr.below(2);
      s.context = 4;
      s.ff_width = 16;
      s.heads_per_block.clear();
      model = build_decoder(s, mr, 8.0f);
      for (std::size_t i = 0; i < s.n_blocks; ++i)
        z_of.push_back([d = s.d_model](const std::vector<float>& b) { return oracle::attention_size_bits(d, d / 2, b); });
    }
    auto layers = model->quantized();
    double total = 0.0;
    std::vector<std::size_t> el;
    std::vector<float> gb;
    std::size_t quantized_elements = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto b = random_bits(layers[l]->groups(), mr);
      if (std::none_of(b.begin(), b.end(), [](float x) { return x > 0.0f; })) b[0] = 3.5f;
      std::copy(b.begin(), b.end(), layers[l]->bits().data().begin());
      layers[l]->enforce_invariants();
      std::vector<float> clamped(layers[l]->bits().data().begin(), layers[l]->bits().data().end());
      total += z_of[l](clamped);
      for (float x : clamped) {
        el.push_back(layers[l]->group_size());
        gb.push_back(x);
      }
      quantized_elements += layers[l]->weights().numel();
    }
    v.expect(current_q(*model) == total / static_cast<double>(layers.size()), "model Q, model " + std::to_string(c));
    // Learned parameters only: running statistics are buffers, and (b, e)
    // are charged per group by the byte formula itself.
    std::size_t all = 0;
    for (const NamedTensor& t : model->state())
      if (t.kind != ParamKind::kBuffer && t.kind != ParamKind::kBits && t.kind != ParamKind::kExponent)
        all += t.tensor.numel();
    const double expect = oracle::bytes(el, gb, all - quantized_elements);
    v.expect(model_bytes(model->byte_inventory()) == expect, "model bytes, model " + std::to_string(c));
  }
  v.notes << "100 random size models (" << layers_checked << " layers), 100 inventories, 20 built models";
}

// ---------------------------------------------------------------- 4

double max_logit_diff(Model& a, Model& b, const Tensor& x) {
  Tensor la = a.forward(x, Mode::kEval).logits, lb = b.forward(x, Mode::kEval).logits;
  double m = 0.0;
  for (std::size_t i = 0; i < la.numel(); ++i) m = std::max(m, double(std::abs(la.data()[i] - lb.data()[i])));
  return m;
}

void prune_equivalence(Verdict& v) {
  double worst = 0.0;
  std::size_t pruned_total = 0;
  for (int c = 0; c < 10; ++c) {
    Rng rng(800 + c);
    std::unique_ptr<Model> model;
    Tensor inputs;
    if (c % 2 == 0) {
      CnnSpec s;
      s.channels = {6, 8};
      s.input_size = 12;
      model = build_cnn(s, rng, 6.0f);
      for (int i = 0; i < 3; ++i) model->forward(oracle::uniform(Shape{8, 1, 12, 12}, rng, 0, 1), Mode::kTrain);
      inputs = oracle::uniform(Shape{100, 1, 12, 12}, rng, 0, 1);
    } else {
      DecoderSpec s;
      s.d_model = 16;
      s.n_heads = 4;
      s.n_blocks = 2;
      s.context = 8;
      s.ff_width = 32;
      s.heads_per_block.clear();
      model = build_decoder(s, rng, 6.0f);
      inputs = Tensor(Shape{100, 8});
      for (float& t : inputs.data()) t = static_cast<float>(rng.below(kNamesVocab));
    }
    // Zero the weights of random groups, never a whole layer.
    std::vector<std::vector<std::size_t>> zeroed;
    for (QuantizedParam* qp : model->quantized()) {
      std::vector<std::size_t> picks;
      for (std::size_t g = 0; g + 1 < qp->groups(); ++g)
        if (rng.uniform() < 0.35) picks.push_back(g);
      if (picks.empty()) picks.push_back(rng.below(qp->groups() - 1));
      for (std::size_t g : picks) {
        auto w = qp->weights().data();
        std::fill(w.begin() + g * qp->group_size(), w.begin() + (g + 1) * qp->group_size(), 0.0f);
      }
      zeroed.push_back(picks);
    }
    // Reference: the same groups switched off through their masks.
    auto masked = model->clone();
    auto ml = masked->quantized();
    for (std::size_t l = 0; l < ml.size(); ++l) {
      auto mask = ml[l]->live_mask();
      for (std::size_t g : zeroed[l]) mask[g] = 0;
      ml[l]->set_live_mask(mask);
    }
    masked->apply_masks();

    const double before = model_bytes(model->byte_inventory());
    PruneReport r = prune_zeroed(*model);
    std::size_t expected = 0;
    for (const auto& z : zeroed) expected += z.size();
    v.expect(r.pruned.size() == expected, "state " + std::to_string(c) + ": pruned " +
                                              std::to_string(r.pruned.size()) + " of " + std::to_string(expected));
    pruned_total += r.pruned.size();
    auto compact = model->compact();
    const double d = max_logit_diff(*compact, *masked, inputs);
    worst = std::max(worst, d);
    v.expect(d <= 1e-5, "state " + std::to_string(c) + ": logits differ by " + std::to_string(d));
    const double after = model_bytes(compact->byte_inventory());
    v.expect(after < before, "state " + std::to_string(c) + ": bytes did not decrease");
    v.expect(after == model_bytes(model->byte_inventory()), "state " + std::to_string(c) + ": compact bytes differ");
  }
  v.notes << "10 states, " << pruned_total << " groups pruned, max |logit diff| " << worst;
}

// ---------------------------------------------------------------- 5

void restoration(Verdict& v) {
  Dataset train = synthetic_vision(400, 1), test = synthetic_vision(100, 2, 0.0);
  CnnSpec spec;
  spec.channels = {6, 8};
  Rng rng(12);
  auto model = build_cnn(spec, rng, 8.0f);
  CompressionConfig c;
  c.epochs = 4;
  c.eval_cadence = 10;
  c.learning_rate = 2e-3;
  c.freeze_duration = 15;
  c.gamma = 5e-4;
  c.fault_step = 20;

  // Snapshot values are the bits at the last passing evaluation: record the
  // bits after every evaluation so the restore can be compared against them.
  struct Watch {
    std::size_t layer, group;
    float bits, exponent;
    std::int64_t from, until;
  };
  std::vector<std::vector<std::vector<float>>> bits_at_eval;
  std::vector<std::int64_t> eval_steps;
  std::vector<Watch> watch;
  std::size_t events = 0, groups_restored = 0, frozen_checks = 0;
  TrainHooks hooks;
  hooks.on_metrics = [&](const MetricsRecord& r) {
    eval_steps.push_back(r.step);
    std::vector<std::vector<float>> snap;
    for (const QuantizedParam* qp : static_cast<const Model&>(*model).quantized())
      snap.emplace_back(qp->bits().data().begin(), qp->bits().data().end());
    bits_at_eval.push_back(snap);
  };
  std::vector<RestoreReport> reports;
  hooks.on_restore = [&](const RestoreReport& rr) {
    ++events;
    reports.push_back(rr);
    for (const RestoredGroup& g : rr.groups) {
      const QuantizedParam& qp = *model->quantized()[g.ref.layer];
      v.expect(qp.bits().data()[g.ref.group] == g.new_bits, "restored bits not applied");
      v.expect(g.frozen_until == rr.step + c.freeze_duration, "freeze window is not F steps");
      watch.push_back({g.ref.layer, g.ref.group, g.new_bits, qp.exponent().data()[g.ref.group], rr.step, g.frozen_until});
      ++groups_restored;
    }
  };
  hooks.on_step = [&](const StepInfo& info) {
    auto layers = info.model->quantized();
    for (const Watch& w : watch) {
      if (info.step > w.until) continue;
      v.expect(layers[w.layer]->bits().data()[w.group] == w.bits, "b moved while frozen");
      v.expect(layers[w.layer]->exponent().data()[w.group] == w.exponent, "e moved while frozen");
      ++frozen_checks;
    }
  };
  TrainResult r = train_compress(*model, train, test, c, std::nullopt, hooks);
  v.expect(events >= 1, "no restore event");
  v.expect(r.metrics.back().restored_count == groups_restored, "metrics restored_count disagrees with events");

  // Each restored group returns to its value at the last evaluation that
  // passed before the event: an evaluation without a restore at that step.
  for (const RestoreReport& rr : reports) {
    std::int64_t snap_idx = -1;
    for (std::size_t i = 0; i < eval_steps.size(); ++i) {
      if (eval_steps[i] >= rr.step) break;
      const bool restored_here = std::any_of(reports.begin(), reports.end(),
                                             [&](const RestoreReport& o) { return o.step == eval_steps[i]; });
      if (!restored_here && !std::isnan(r.metrics[i].preservation_loss)) snap_idx = static_cast<std::int64_t>(i);
    }
    v.expect(snap_idx >= 0, "no passing evaluation precedes the restore at step " + std::to_string(rr.step));
    if (snap_idx < 0) continue;
    for (const RestoredGroup& g : rr.groups)
      v.expect(g.new_bits == bits_at_eval[snap_idx][g.ref.layer][g.ref.group],
               "group (" + std::to_string(g.ref.layer) + ", " + std::to_string(g.ref.group) +
                   ") not returned to its snapshot b");
  }
  v.expect(frozen_checks > 0, "no step fell inside a freeze window");
  v.notes << events << " restore events, " << groups_restored << " groups, " << frozen_checks
          << " frozen-step checks";
}

// ---------------------------------------------------------------- 6 and 7

struct SeedOutcome {
  bool pass = false;
  std::string line;
};

nlohmann::json vision_config(std::uint64_t seed) {
  // Defaults except for a stronger size penalty than the auto-scaled one.
  return {{"task", "vision"},
          {"seed", seed},
          {"out_dir", (kScratch / ("vision_seed" + std::to_string(seed))).string()},
          {"compression", {{"gamma", 5e-6}}}};
}

void vision_table(Verdict& v) {
  int passed = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = Clock::now();
    std::ostringstream log;
    const RunConfig config = parse_run_config(vision_config(seed));
    const auto rows = cmd_compare(config, log);
    const double secs = seconds_since(t0);
    const RunSummary &base = rows[0], &unsafe = rows[1], &safe = rows[2];
    const double ratio = safe.model_bytes / base.model_bytes;
    const bool ok = ratio <= 0.70 && safe.test_metric >= base.test_metric - 0.5 &&
                    safe.test_metric >= unsafe.test_metric && secs <= 600.0;
    passed += ok;
    v.notes << "\n  seed " << seed << (ok ? " ok" : " FAIL") << ": baseline " << base.test_metric << "% "
            << base.model_bytes << " B, unsafe " << unsafe.test_metric << "% " << unsafe.model_bytes << " B, safe "
            << safe.test_metric << "% " << safe.model_bytes << " B (ratio " << ratio << "), " << secs << " s";
  }
  v.expect(passed >= 2, std::to_string(passed) + " of 3 seeds passed");
}

nlohmann::json text_config(std::uint64_t seed) {
  return {{"task", "text"},
          {"seed", seed},
          {"out_dir", (kScratch / ("text_seed" + std::to_string(seed))).string()},
          {"compression", {{"lambda", 0.1}}}};
}

void text_table(Verdict& v) {
  int passed = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = Clock::now();
    std::ostringstream log;
    const RunConfig config = parse_run_config(text_config(seed));
    const auto rows = cmd_compare(config, log);
    const double secs = seconds_since(t0);
    const RunSummary &base = rows[0], &unsafe = rows[1], &safe = rows[2];
    const double ratio = safe.quantized_bytes / base.quantized_bytes;
    const bool ok = ratio <= 0.70 && safe.test_metric <= unsafe.test_metric && secs <= 600.0;
    passed += ok;
    v.notes << "\n  seed " << seed << (ok ? " ok" : " FAIL") << ": baseline " << base.test_metric << " nats "
            << base.quantized_bytes << " attention B, unsafe " << unsafe.test_metric << " nats, safe "
            << safe.test_metric << " nats " << safe.quantized_bytes << " B (ratio " << ratio << "), " << secs << " s";
  }
  v.expect(passed >= 2, std::to_string(passed) + " of 3 seeds passed");
}

// ---------------------------------------------------------------- 8

void pset_determinism(Verdict& v) {
  Rng rng(4242);
  CnnSpec spec;
  spec.channels = {4};
  spec.input_size = 28;
  fs::create_directories(kScratch);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 20 + rng.below(281);
    const double rho = static_cast<double>(1 + rng.below(1000)) / 1000.0;
    const std::uint64_t seed = rng.below(1u << 30);
    const Dataset data = synthetic_vision(n, seed);
    Rng mr(seed);
    auto model = build_cnn(spec, mr, 8.0f);
    model->trained = true;
    const Quotas quotas;
    const PreservationSet a = build_preservation_set(*model, data, rho, quotas, seed);
    const PreservationSet b = build_preservation_set(*model, data, rho, quotas, seed);
    const auto expected = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n)));
    const std::string at = "n=" + std::to_string(n) + " rho=" + std::to_string(rho);
    v.expect(a.size() == expected, at + ": size " + std::to_string(a.size()) + " != " + std::to_string(expected));
    save_preservation_set(a, kScratch / "pset_a.txt");
    save_preservation_set(b, kScratch / "pset_b.txt");
    v.expect(slurp(kScratch / "pset_a.txt") == slurp(kScratch / "pset_b.txt"), at + ": builds differ");
  }
  v.notes << "50 random (n, rho, seed) cases";
}

// ---------------------------------------------------------------- 9

std::vector<std::string> metrics_without_wall(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(line.substr(0, line.rfind(',')));
  return rows;
}

void reproducibility(Verdict& v) {
  for (const char* task : {"vision", "text"}) {
    nlohmann::json j = {{"task", task}, {"seed", 17}, {"compression", {{"epochs", 2}, {"eval_cadence", 10}}}};
    if (std::string(task) == "vision") {
      j["data"] = {{"n_train", 400}, {"n_test", 100}};
    } else {
      j["data"] = {{"n_train", 150}, {"n_test", 40}};
    }
    std::vector<std::vector<std::string>> runs;
    for (int rep = 0; rep < 2; ++rep) {
      j["out_dir"] = (kScratch / (std::string("repro_") + task + std::to_string(rep))).string();
      std::ostringstream log;
      cmd_train(parse_run_config(j), log);
      runs.push_back(metrics_without_wall(fs::path(j["out_dir"].get<std::string>()) / "metrics.csv"));
    }
    v.expect(runs[0].size() > 2, std::string(task) + ": too few metrics rows");
    v.expect(runs[0] == runs[1], std::string(task) + ": metrics differ between runs");
    v.notes << task << " " << runs[0].size() - 1 << " rows identical; ";
  }
}

// ---------------------------------------------------------------- 10

void histogram_contract(Verdict& v) {
  nlohmann::json j = {{"task", "vision"},
                      {"seed", 5},
                      {"out_dir", (kScratch / "hist_run").string()},
                      {"data", {{"n_train", 400}, {"n_test", 100}}},
                      {"compression", {{"epochs", 2}, {"b0", 2.0}}}};
  std::ostringstream log;
  cmd_train(parse_run_config(j), log);
  // Pin every live group to two bits and write the b = 2 checkpoint.
  auto trained = load_checkpoint(kScratch / "hist_run" / "model.ckpt");
  for (QuantizedParam* qp : trained->quantized()) qp->set_bits(2.0f);
  const fs::path ckpt = kScratch / "hist_run" / "b2.ckpt";
  save_checkpoint(*trained, ckpt);

  auto model = load_checkpoint(ckpt);
  std::size_t groups = 0, weights = 0, max_distinct = 0;
  for (const QuantizedParam* qp : static_cast<const Model&>(*model).quantized()) {
    const std::vector<float> values = qp->quantized_values();
    for (std::size_t g = 0; g < qp->groups(); ++g) {
      std::set<float> distinct(values.begin() + g * qp->group_size(), values.begin() + (g + 1) * qp->group_size());
      max_distinct = std::max(max_distinct, distinct.size());
      v.expect(distinct.size() <= 4, qp->name() + " group " + std::to_string(g) + " has " +
                                         std::to_string(distinct.size()) + " values");
      ++groups;
    }
    weights += qp->weights().numel();
  }

  const fs::path csv = kScratch / "hist_run" / "histogram.csv";
  std::ostringstream hlog;
  cmd_hist(ckpt, csv, hlog);
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  std::size_t total = 0, bins = 0;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    total += std::stoul(line.substr(a + 1, b - a - 1));
    ++bins;
  }
  v.expect(bins == 101, std::to_string(bins) + " bins");
  v.expect(total == weights, "counts sum to " + std::to_string(total) + ", expected " + std::to_string(weights));
  v.notes << groups << " groups, at most " << max_distinct << " distinct values, counts " << total << " of "
          << weights << " weights";
}

struct Criterion {
  const char* title;
  std::function<void(Verdict&)> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"quantizer correctness", quantizer_suite},
      {"gradient suite", gradient_suite},
      {"size-model oracle", size_oracle},
      {"prune equivalence", prune_equivalence},
      {"restoration behavior", restoration},
      {"vision compression table", vision_table},
      {"text compression table", text_table},
      {"preservation-set determinism and size", pset_determinism},
      {"reproducibility", reproducibility},
      {"histogram contract", histogram_contract},
  };
  return all;
}

bool run_one(std::size_t n) {
  const Criterion& c = criteria()[n - 1];
  Verdict v;
  const auto t0 = Clock::now();
  try {
    c.run(v);
  } catch (const std::exception& e) {
    v.failures.push_back(std::string("exception: ") + e.what());
  }
  const bool ok = v.failures.empty();
  std::cout << (ok ? "PASS" : "FAIL") << " " << n << " " << c.title << " (" << seconds_since(t0) << " s): "
            << v.notes.str() << "\n";
  for (const std::string& f : v.failures) std::cout << "  - " << f << "\n";
  std::cout.flush();
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::size_t> which;
  if (argc > 1) {
    const long n = std::strtol(argv[1], nullptr, 10);
    if (n < 1 || n > static_cast<long>(criteria().size())) {
      std::cerr << "usage: acceptance [1-" << criteria().size() << "]\n";
      return 2;
    }
    which.push_back(static_cast<std::size_t>(n));
  } else {
    for (std::size_t n = 1; n <= criteria().size(); ++n) which.push_back(n);
  }
  bool all = true;
  for (std::size_t n : which) all = run_one(n) && all;
  return all ? 0 : 1;
}
