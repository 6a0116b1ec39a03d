#include "fracsim/dataset.hpp"

#include "detail/binary_io.hpp"
#include "fracsim/seeding.hpp"
#include "fracsim/serialize.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace fracsim {

void SynthDatasetSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (samples_per_class < 1) throw std::invalid_argument("samples_per_class must be >= 1");
  if (time_frames < 1 || freq_bins < 1) throw std::invalid_argument("time_frames and freq_bins must be positive");
  if (noise_level < 0.0) throw std::invalid_argument("noise_level must be >= 0");
  if (time_jitter < 0) throw std::invalid_argument("time_jitter must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train_fraction must lie in (0,1)");
}

int SynthDatasetSpec::train_per_class() const {
  return static_cast<int>(std::lround(train_fraction * samples_per_class));
}

RealTensor Dataset::gather(std::span<const Index> indices) const {
  const Index per = spec.time_frames * spec.freq_bins;
  RealTensor out(Shape{static_cast<Index>(indices.size()), 1, spec.time_frames, spec.freq_bins});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.data().segment(static_cast<Index>(k) * per, per) = inputs.data().segment(indices[k] * per, per);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const Index> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<std::vector<Index>> Dataset::by_class(std::span<const Index> split) const {
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(spec.num_classes));
  for (Index i : split) groups[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  return groups;
}

namespace {

RealTensor make_prototypes(const SynthDatasetSpec& spec, std::mt19937_64& rng) {
  const Index t_len = spec.time_frames, f_len = spec.freq_bins;
  const double t_max = static_cast<double>(t_len);
  const double f_max = static_cast<double>(f_len);
  RealTensor protos(Shape{spec.num_classes, 1, t_len, f_len});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int component = 0; component < 2; ++component) {
      const double f0 = 1.0 + unit(rng) * (f_max - 2.0);
      const double width = 0.7 + 1.3 * unit(rng);
      const double onset = unit(rng) * 0.5 * t_max;
      const double duration = (0.25 + 0.5 * unit(rng)) * t_max;
      const double chirp = (unit(rng) - 0.5) * 0.4;
      const double rate = unit(rng) * 0.6;
      const double amplitude = component == 0 ? 1.0 : 0.4 + 0.6 * unit(rng);
      for (Index t = 0; t < t_len; ++t) {
        const double tt = static_cast<double>(t);
        if (tt < onset || tt > onset + duration) continue;
        const double envelope = std::sin(M_PI * (tt - onset) / duration) * (0.6 + 0.4 * std::cos(rate * tt));
        const double centre = f0 + chirp * (tt - onset);
        for (Index f = 0; f < f_len; ++f) {
          const double d = (static_cast<double>(f) - centre) / width;
          protos.at(c, 0, t, f) += amplitude * envelope * std::exp(-0.5 * d * d);
        }
      }
    }
  }
  return protos;
}

}  // namespace

Dataset generate_dataset(const SynthDatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  std::mt19937_64 proto_rng(derive_seed(spec.seed, "prototypes"));
  data.prototypes = make_prototypes(spec, proto_rng);

  const Index t_len = spec.time_frames, f_len = spec.freq_bins, per = t_len * f_len;
  const Index total = static_cast<Index>(spec.num_classes) * spec.samples_per_class;
  data.inputs = RealTensor(Shape{total, 1, t_len, f_len});
  data.labels.resize(static_cast<std::size_t>(total));

  std::mt19937_64 rng(derive_seed(spec.seed, "samples"));
  std::uniform_int_distribution<int> shift_dist(-spec.time_jitter, spec.time_jitter);
  std::uniform_real_distribution<double> gain_dist(0.85, 1.15);
  std::normal_distribution<double> noise(0.0, 1.0);
  Index row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      const int shift = shift_dist(rng);
      const double gain = gain_dist(rng);
      for (Index t = 0; t < t_len; ++t) {
        const Index src = t - shift;
        for (Index f = 0; f < f_len; ++f) {
          const double clean = (src >= 0 && src < t_len) ? data.prototypes.at(c, 0, src, f) : 0.0;
          data.inputs[row * per + t * f_len + f] = gain * clean + spec.noise_level * noise(rng);
        }
      }
      data.labels[static_cast<std::size_t>(row)] = c;
    }
  }

  // Stratified split: per class, a shuffled train_fraction goes to training.
  std::mt19937_64 split_rng(derive_seed(spec.seed, "split"));
  const int train_per_class = spec.train_per_class();
  for (int c = 0; c < spec.num_classes; ++c) {
    std::vector<Index> idx(static_cast<std::size_t>(spec.samples_per_class));
    for (int s = 0; s < spec.samples_per_class; ++s) idx[static_cast<std::size_t>(s)] = static_cast<Index>(c) * spec.samples_per_class + s;
    std::shuffle(idx.begin(), idx.end(), split_rng);
    for (int s = 0; s < spec.samples_per_class; ++s) {
      (s < train_per_class ? data.train_indices : data.val_indices).push_back(idx[static_cast<std::size_t>(s)]);
    }
  }
  std::sort(data.train_indices.begin(), data.train_indices.end());
  std::sort(data.val_indices.begin(), data.val_indices.end());
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& stem) {
  std::vector<double> flat(data.inputs.ptr(), data.inputs.ptr() + data.inputs.size());
  detail::write_f64_le(std::filesystem::path(stem).concat(".bin"), flat);
  nlohmann::json meta{{"format", "fracsim-dataset-v1"},
                      {"dtype", "float64-le"},
                      {"shape", data.inputs.shape()},
                      {"labels", data.labels},
                      {"train_indices", data.train_indices},
                      {"val_indices", data.val_indices},
                      {"spec", data.spec}};
  std::ofstream out(std::filesystem::path(stem).concat(".json"));
  if (!out) throw std::runtime_error("cannot write dataset sidecar for " + stem.string());
  out << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& stem) {
  std::ifstream in(std::filesystem::path(stem).concat(".json"));
  if (!in) throw std::runtime_error("cannot read dataset sidecar for " + stem.string());
  const nlohmann::json meta = nlohmann::json::parse(in);
  if (meta.value("format", "") != "fracsim-dataset-v1") throw std::runtime_error("unknown dataset format");
  Dataset data;
  data.spec = meta.at("spec").get<SynthDatasetSpec>();
  const auto values = detail::read_f64_le(std::filesystem::path(stem).concat(".bin"));
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
  data.inputs = RealTensor(meta.at("shape").get<Shape>(), std::move(v));
  data.labels = meta.at("labels").get<std::vector<int>>();
  data.train_indices = meta.at("train_indices").get<std::vector<Index>>();
  data.val_indices = meta.at("val_indices").get<std::vector<Index>>();
  std::mt19937_64 proto_rng(derive_seed(data.spec.seed, "prototypes"));
  data.prototypes = make_prototypes(data.spec, proto_rng);
  if (static_cast<Index>(data.labels.size()) != data.inputs.dim(0)) {
    throw DimensionError("dataset: axis N of inputs does not match label count");
  }
  return data;
}

}  // namespace fracsim
