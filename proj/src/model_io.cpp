#include "advscope/model_io.hpp"

#include "json.hpp"

namespace advscope {

using nlohmann::json;

namespace {

json layer_to_json(const LayerSpec& layer) {
  json j{{"type", layer_name(layer)}};
  if (const auto* l = std::get_if<Conv2dLayer>(&layer)) {
    j["in_channels"] = l->in_channels;
    j["out_channels"] = l->out_channels;
    j["kernel"] = l->kernel;
    j["stride"] = l->stride;
    j["pad"] = l->pad;
  } else if (const auto* l = std::get_if<BatchNormLayer>(&layer)) {
    j["channels"] = l->channels;
    j["eps"] = l->eps;
    j["momentum"] = l->momentum;
  } else if (const auto* l = std::get_if<MaxPoolLayer>(&layer)) {
    j["kernel"] = l->kernel;
    j["stride"] = l->stride;
  } else if (const auto* l = std::get_if<DenseLayer>(&layer)) {
    j["in"] = l->in;
    j["out"] = l->out;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv2d") {
    return Conv2dLayer{j.at("in_channels"), j.at("out_channels"), j.at("kernel"), j.at("stride"),
                       j.at("pad")};
  }
  if (type == "batchnorm") return BatchNormLayer{j.at("channels"), j.at("eps"), j.at("momentum")};
  if (type == "relu") return ReluLayer{};
  if (type == "maxpool") return MaxPoolLayer{j.at("kernel"), j.at("stride")};
  if (type == "globalavgpool") return GlobalAvgPoolLayer{};
  if (type == "dense") return DenseLayer{j.at("in"), j.at("out")};
  throw FormatError("model header: unknown layer type '" + type + "'");
}

}  // namespace

Bytes encode_model(const Model<float>& model) {
  model.spec.validate();
  json header;
  header["format"] = "MNET1";
  header["input"] = {{"height", model.spec.height},
                     {"width", model.spec.width},
                     {"channels", model.spec.channels}};
  header["class_count"] = model.spec.class_count;
  header["class_names"] = model.spec.class_names;
  header["layers"] = json::array();
  for (const auto& layer : model.spec.layers) header["layers"].push_back(layer_to_json(layer));
  header["blob_bytes"] = 4 * model.parameter_count();
  const std::string text = header.dump();

  Bytes out;
  put_bytes(out, kModelMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  put_bytes(out, text);
  for (const auto& layer : model.params) {
    for (const auto& p : layer) put_f32s(out, p.span());
  }
  return out;
}

Model<float> decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader reader(bytes, "model file");
  reader.expect(kModelMagic);
  const std::uint32_t header_len = reader.u32();
  auto header_bytes = reader.take(header_len);
  json header;
  try {
    header = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }

  Model<float> model;
  std::size_t blob_bytes = 0;
  try {
    ModelSpec& spec = model.spec;
    spec.height = header.at("input").at("height");
    spec.width = header.at("input").at("width");
    spec.channels = header.at("input").at("channels");
    spec.class_count = header.at("class_count");
    spec.class_names = header.at("class_names").get<std::vector<std::string>>();
    for (const auto& layer : header.at("layers")) spec.layers.push_back(layer_from_json(layer));
    blob_bytes = header.at("blob_bytes");
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  try {
    model.spec.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }

  std::size_t expected = 0;
  for (const auto& layer : model.spec.layers) {
    for (const Shape& s : parameter_shapes(layer)) expected += 4 * shape_size(s);
  }
  if (blob_bytes != expected) {
    throw FormatError("model file: declared blob length " + std::to_string(blob_bytes) +
                      " does not match architecture (" + std::to_string(expected) + ")");
  }
  if (reader.remaining() != blob_bytes) {
    throw FormatError("model file: blob is " + std::to_string(reader.remaining()) + " bytes, header declares " +
                      std::to_string(blob_bytes));
  }
  for (const auto& layer : model.spec.layers) {
    std::vector<Tensor<float>> params;
    for (const Shape& s : parameter_shapes(layer)) {
      Tensor<float> t(s);
      reader.f32s(t.span());
      if (!all_finite(t)) throw FormatError("model file: non-finite parameter");
      params.push_back(std::move(t));
    }
    model.params.push_back(std::move(params));
  }
  return model;
}

void save_model(const Model<float>& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
}

Model<float> load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace advscope
