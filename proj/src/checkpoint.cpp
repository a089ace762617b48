#include "sdsc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "sdsc/error.hpp"

namespace sdsc {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'D', 'S', 'C'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

FormatError malformed(const std::string& what) { return FormatError(FormatError::Kind::kMalformed, what); }

}  // namespace

json spec_to_json(const ModelSpec& spec) {
  if (const auto* c = std::get_if<CnnSpec>(&spec)) {
    return json{{"type", "cnn"},          {"channels", c->channels}, {"kernel", c->kernel},
                {"in_channels", c->in_channels}, {"input_size", c->input_size}, {"classes", c->classes}};
  }
  const auto& d = std::get<DecoderSpec>(spec);
  return json{{"type", "decoder"},   {"vocab", d.vocab},     {"d_model", d.d_model},
              {"n_heads", d.n_heads}, {"n_blocks", d.n_blocks}, {"context", d.context},
              {"ff_width", d.ff_width}, {"heads_per_block", d.heads_per_block}};
}

ModelSpec spec_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "cnn") {
    CnnSpec c;
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.input_size = j.at("input_size").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    return c;
  }
  if (type == "decoder") {
    DecoderSpec d;
    d.vocab = j.at("vocab").get<std::size_t>();
    d.d_model = j.at("d_model").get<std::size_t>();
    d.n_heads = j.at("n_heads").get<std::size_t>();
    d.n_blocks = j.at("n_blocks").get<std::size_t>();
    d.context = j.at("context").get<std::size_t>();
    d.ff_width = j.at("ff_width").get<std::size_t>();
    d.heads_per_block = j.at("heads_per_block").get<std::vector<std::size_t>>();
    return d;
  }
  throw malformed("unknown model type '" + type + "'");
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  json header;
  header["spec"] = spec_to_json(model.spec());
  header["seed"] = model.seed;
  header["step"] = model.step;
  header["quantization_enabled"] = model.quantization_enabled;
  header["trained"] = model.trained;
  auto state = model.state();
  json tensors = json::array();
  for (const NamedTensor& t : state) tensors.push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  header["tensors"] = tensors;
  json quant = json::array();
  for (const QuantizedParam* qp : static_cast<const Model&>(model).quantized()) {
    auto b = qp->bits().data();
    auto e = qp->exponent().data();
    quant.push_back({{"name", qp->name()},
                     {"bits", std::vector<float>(b.begin(), b.end())},
                     {"exponent", std::vector<float>(e.begin(), e.end())},
                     {"live", qp->live_mask()},
                     {"frozen_until", qp->params().frozen_until}});
  }
  header["quant"] = quant;

  const std::string text = header.dump();
  std::string bytes(kMagic, 4);
  put_u16(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  for (const NamedTensor& t : state) {
    for (float v : t.tensor.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = path.string() + ": ";

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::kWrongMagic, where + "bad magic, not an SDSC checkpoint");
  }
  if (bytes.size() < 10) throw FormatError(FormatError::Kind::kTruncated, where + "truncated preamble");
  const std::uint16_t version = static_cast<std::uint16_t>(p[4] | p[5] << 8);
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, where + "version " + std::to_string(version) +
                                                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::size_t header_len = get_u32(p + 6);
  if (bytes.size() < 10 + header_len) throw FormatError(FormatError::Kind::kTruncated, where + "truncated header");

  json header;
  std::unique_ptr<Model> model;
  std::vector<NamedTensor> state;
  try {
    header = json::parse(bytes.substr(10, header_len));
    Rng rng(0);
    model = build_model(spec_from_json(header.at("spec")), rng, 0.0f);
    model->seed = header.at("seed").get<std::uint64_t>();
    model->step = header.at("step").get<std::int64_t>();
    model->quantization_enabled = header.at("quantization_enabled").get<bool>();
    model->trained = header.at("trained").get<bool>();
  } catch (const json::exception& e) {
    throw malformed(where + "bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw malformed(where + "bad model spec: " + e.what());
  }

  state = model->state();
  const json& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != state.size()) {
    throw FormatError(FormatError::Kind::kCountMismatch,
                      where + std::to_string(tensors.size()) + " tensors in header, model has " +
                          std::to_string(state.size()));
  }
  std::size_t offset = 10 + header_len;
  for (std::size_t i = 0; i < state.size(); ++i) {
    Shape shape;
    std::string name;
    try {
      name = tensors[i].at("name").get<std::string>();
      shape = tensors[i].at("shape").get<Shape>();
    } catch (const json::exception& e) {
      throw malformed(where + "bad tensor entry: " + e.what());
    }
    if (name != state[i].name || shape != state[i].tensor.shape()) {
      throw FormatError(FormatError::Kind::kShapeMismatch, where + "tensor " + name + " " + shape_str(shape) +
                                                               " does not match " + state[i].name + " " +
                                                               shape_str(state[i].tensor.shape()));
    }
    auto dst = state[i].tensor.data();
    if (bytes.size() < offset + 4 * dst.size()) {
      throw FormatError(FormatError::Kind::kTruncated, where + "payload of " + name + " is truncated");
    }
    for (float& v : dst) {
      v = std::bit_cast<float>(get_u32(p + offset));
      offset += 4;
    }
  }
  if (offset != bytes.size()) throw malformed(where + std::to_string(bytes.size() - offset) + " trailing bytes");

  auto layers = model->quantized();
  try {
    const json& quant = header.at("quant");
    if (quant.size() != layers.size()) {
      throw FormatError(FormatError::Kind::kCountMismatch, where + "quantized layer count differs from the model");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto live = quant[l].at("live").get<std::vector<std::uint8_t>>();
      auto frozen = quant[l].at("frozen_until").get<std::vector<std::int64_t>>();
      if (live.size() != layers[l]->groups() || frozen.size() != layers[l]->groups()) {
        throw FormatError(FormatError::Kind::kShapeMismatch, where + "group state of " + layers[l]->name() +
                                                                 " has the wrong length");
      }
      layers[l]->params().frozen_until = frozen;
      layers[l]->set_live_mask(live);
    }
  } catch (const json::exception& e) {
    throw malformed(where + "bad quantization state: " + e.what());
  }
  model->apply_masks();
  return model;
}

}  // namespace sdsc
