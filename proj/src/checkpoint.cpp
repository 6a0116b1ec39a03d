#include "fracsim/checkpoint.hpp"

#include "detail/binary_io.hpp"
#include "fracsim/serialize.hpp"

#include <fstream>

namespace fracsim {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "fracsim-checkpoint-v1";

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& dir) {
  std::vector<double> flat;
  json tensors = json::array();
  json layers = json::array();
  const auto& spec = net.spec();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerParams& p = net.params()[i];
    const LayerBitwidthState& bits = net.bit_states()[i];
    const auto add_tensor = [&](const std::string& name, const RealTensor& t) {
      tensors.push_back({{"layer", spec.layers[i].name}, {"name", name}, {"shape", t.shape()}, {"offset", flat.size()}});
      flat.insert(flat.end(), t.ptr(), t.ptr() + t.size());
    };
    if (spec.layers[i].has_weights()) {
      for (std::size_t m = 0; m < p.weights.size(); ++m) add_tensor("weight" + std::to_string(m), p.weights[m]);
      add_tensor("bias", p.bias);
    }
    layers.push_back({{"name", spec.layers[i].name},
                      {"n_frac", bits.n_frac},
                      {"bits", bits.n_frozen ? json(*bits.n_frozen) : json(nullptr)},
                      {"weight_max_abs", net.weight_max_abs()[i]},
                      {"activation_scale", net.activation_scales()[i]}});
  }
  std::filesystem::create_directories(dir);
  detail::write_f64_le(dir / "model.bin", flat);
  const json manifest{{"format", kFormat},
                      {"dtype", "float64-le"},
                      {"mode", net.mode() == QuantMode::Float ? "float" : "quantized"},
                      {"model", spec},
                      {"value_count", flat.size()},
                      {"tensors", tensors},
                      {"layers", layers}};
  std::ofstream out(dir / "model.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "model.json").string());
  out << manifest.dump(2) << '\n';
}

Network load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  const json manifest = json::parse(in);
  if (manifest.value("format", "") != kFormat) throw std::runtime_error("unknown checkpoint format in " + dir.string());
  const std::vector<double> flat = detail::read_f64_le(dir / "model.bin");
  if (flat.size() != manifest.at("value_count").get<std::size_t>()) {
    throw std::runtime_error("model.bin holds " + std::to_string(flat.size()) + " values, manifest expects " +
                             manifest.at("value_count").dump());
  }
  Network net(manifest.at("model").get<ModelSpec>(), 0);
  const auto& spec = net.spec();
  std::size_t t = 0;
  const json& tensors = manifest.at("tensors");
  const auto restore = [&](RealTensor& target) {
    const json& entry = tensors.at(t++);
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != target.shape()) throw DimensionError("checkpoint tensor shape " + shape_string(shape) + " does not match model");
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(target.size()) > flat.size()) throw std::runtime_error("checkpoint tensor out of range");
    target.data() = Eigen::Map<const Eigen::VectorXd>(flat.data() + offset, target.size());
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!spec.layers[i].has_weights()) continue;
    for (RealTensor& w : net.params()[i].weights) restore(w);
    restore(net.params()[i].bias);
  }
  std::vector<LayerBitwidthState> bits(spec.layers.size());
  std::vector<std::vector<std::vector<double>>> max_abs(spec.layers.size());
  std::vector<double> act(spec.layers.size(), 1.0);
  const json& layers = manifest.at("layers");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const json& l = layers.at(i);
    bits[i].n_frac = l.at("n_frac").get<double>();
    if (!l.at("bits").is_null()) bits[i].n_frozen = l.at("bits").get<int>();
    max_abs[i] = l.at("weight_max_abs").get<std::vector<std::vector<double>>>();
    act[i] = l.at("activation_scale").get<double>();
  }
  const QuantMode mode = manifest.at("mode").get<std::string>() == "float" ? QuantMode::Float : QuantMode::Quantized;
  net.restore_quantization(mode, std::move(bits), std::move(max_abs), std::move(act));
  return net;
}

}  // namespace fracsim
