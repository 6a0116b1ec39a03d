#include "fracsim/tasks.hpp"

#include "fracsim/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fracsim {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void check_alignment(const RealTensor& embeddings, const Episode& episode) {
  expect_rank("prototypical_loss embeddings", embeddings.shape(), 2);
  expect_extent("prototypical_loss", "rows (episode items)", embeddings.dim(0),
                static_cast<Index>(episode.item_count()));
  if (episode.support.size() != static_cast<std::size_t>(episode.n_way * episode.k_shot) ||
      episode.query.size() != static_cast<std::size_t>(episode.n_way * episode.q)) {
    throw DimensionError("prototypical_loss: episode item counts do not match N, K, Q");
  }
}

RowMatrix prototypes_of(const ConstRowMap& e, const Episode& ep) {
  RowMatrix protos = RowMatrix::Zero(ep.n_way, e.cols());
  for (int s = 0; s < ep.n_way * ep.k_shot; ++s) protos.row(ep.support_label(static_cast<std::size_t>(s))) += e.row(s);
  return protos / static_cast<double>(ep.k_shot);
}

struct SoftmaxRows {
  RowMatrix probs;
  double loss = 0.0;
  double accuracy = 0.0;
};

SoftmaxRows softmax_rows(const RowMatrix& logits, const Episode& ep) {
  SoftmaxRows out;
  out.probs.resize(logits.rows(), logits.cols());
  int correct = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int label = ep.query_label(static_cast<std::size_t>(r));
    Index best = 0;
    const double m = logits.row(r).maxCoeff(&best);
    const Eigen::RowVectorXd ex = (logits.row(r).array() - m).exp().matrix();
    const double z = ex.sum();
    out.probs.row(r) = ex / z;
    out.loss += m + std::log(z) - logits(r, label);
    correct += best == label ? 1 : 0;
  }
  out.loss /= static_cast<double>(logits.rows());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows());
  return out;
}

}  // namespace

std::vector<Index> Episode::items() const {
  std::vector<Index> all = support;
  all.insert(all.end(), query.begin(), query.end());
  return all;
}

Episode sample_episode(const Dataset& data, std::span<const Index> split, const EpisodeConfig& config,
                       std::mt19937_64& rng) {
  if (config.n_way < 2 || config.k_shot < 1 || config.q < 1) throw std::invalid_argument("episode needs N>=2, K>=1, Q>=1");
  if (config.overlap_support_query && config.q != config.k_shot) {
    throw std::invalid_argument("overlapping episodes need Q == K");
  }
  const int need = config.overlap_support_query ? config.k_shot : config.k_shot + config.q;
  auto groups = data.by_class(split);
  std::vector<int> eligible;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (static_cast<int>(groups[c].size()) >= need) eligible.push_back(static_cast<int>(c));
  }
  if (static_cast<int>(eligible.size()) < config.n_way) {
    throw std::invalid_argument("episode needs " + std::to_string(config.n_way) + " classes with >= " +
                                std::to_string(need) + " samples, found " + std::to_string(eligible.size()));
  }
  std::shuffle(eligible.begin(), eligible.end(), rng);
  Episode ep{config.n_way, config.k_shot, config.q, {}, {}, {}};
  std::vector<std::vector<Index>> picked;
  for (int w = 0; w < config.n_way; ++w) {
    const int c = eligible[static_cast<std::size_t>(w)];
    ep.classes.push_back(c);
    auto pool = groups[static_cast<std::size_t>(c)];
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(need));
    picked.push_back(std::move(pool));
  }
  for (const auto& pool : picked) ep.support.insert(ep.support.end(), pool.begin(), pool.begin() + config.k_shot);
  for (const auto& pool : picked) {
    if (config.overlap_support_query) {
      ep.query.insert(ep.query.end(), pool.begin(), pool.begin() + config.k_shot);
    } else {
      ep.query.insert(ep.query.end(), pool.begin() + config.k_shot, pool.end());
    }
  }
  return ep;
}

RealTensor prototype_logits(const RealTensor& embeddings, const Episode& episode) {
  check_alignment(embeddings, episode);
  const Index dim = embeddings.dim(1);
  ConstRowMap e(embeddings.ptr(), embeddings.dim(0), dim);
  const RowMatrix protos = prototypes_of(e, episode);
  const Index n_support = static_cast<Index>(episode.support.size());
  const Index n_query = static_cast<Index>(episode.query.size());
  RealTensor logits(Shape{n_query, episode.n_way});
  for (Index r = 0; r < n_query; ++r) {
    for (int c = 0; c < episode.n_way; ++c) {
      logits.at(r, c) = -(e.row(n_support + r) - protos.row(c)).squaredNorm();
    }
  }
  return logits;
}

double prototypical_loss(const RealTensor& embeddings, const Episode& episode) {
  const RealTensor logits = prototype_logits(embeddings, episode);
  return softmax_rows(ConstRowMap(logits.ptr(), logits.dim(0), logits.dim(1)), episode).loss;
}

double nearest_prototype_accuracy(const RealTensor& embeddings, const Episode& episode) {
  const RealTensor logits = prototype_logits(embeddings, episode);
  return softmax_rows(ConstRowMap(logits.ptr(), logits.dim(0), logits.dim(1)), episode).accuracy;
}

NodeId prototypical_loss(Graph& g, NodeId embeddings, const Episode& episode, double* accuracy) {
  const RealTensor& emb = g.value(embeddings);
  const RealTensor logits = prototype_logits(emb, episode);
  SoftmaxRows sm = softmax_rows(ConstRowMap(logits.ptr(), logits.dim(0), logits.dim(1)), episode);
  if (accuracy) *accuracy = sm.accuracy;
  RealTensor out(Shape{}, Eigen::VectorXd::Constant(1, sm.loss));
  return g.emplace(std::move(out), {embeddings}, [embeddings, episode, probs = std::move(sm.probs)](Graph& gr, NodeId self) {
    const RealTensor& value = gr.value(embeddings);
    const Index rows = value.dim(0), dim = value.dim(1);
    ConstRowMap e(value.ptr(), rows, dim);
    const RowMatrix protos = prototypes_of(e, episode);
    const Index n_support = static_cast<Index>(episode.support.size());
    const Index n_query = static_cast<Index>(episode.query.size());
    const double up = gr.grad_buffer(self)[0] / static_cast<double>(n_query);
    Eigen::Map<RowMatrix> de(gr.grad_buffer(embeddings).data(), rows, dim);
    RowMatrix dproto = RowMatrix::Zero(episode.n_way, dim);
    for (Index r = 0; r < n_query; ++r) {
      const int label = episode.query_label(static_cast<std::size_t>(r));
      for (int c = 0; c < episode.n_way; ++c) {
        // d logit / d query = -2 (query - proto); d logit / d proto = +2 (query - proto)
        const double dl = up * (probs(r, c) - (c == label ? 1.0 : 0.0));
        const Eigen::RowVectorXd diff = e.row(n_support + r) - protos.row(c);
        de.row(n_support + r) += -2.0 * dl * diff;
        dproto.row(c) += 2.0 * dl * diff;
      }
    }
    for (Index s = 0; s < n_support; ++s) {
      de.row(s) += dproto.row(episode.support_label(static_cast<std::size_t>(s))) / static_cast<double>(episode.k_shot);
    }
  });
}

EvalResult evaluate_generic(const BatchModel& model, const Dataset& data, int rounds, int samples_per_round,
                            std::uint64_t seed) {
  if (rounds < 1 || samples_per_round < 1) throw std::invalid_argument("evaluation needs rounds >= 1 and samples >= 1");
  if (static_cast<int>(data.val_indices.size()) < samples_per_round) {
    throw std::invalid_argument("validation set has " + std::to_string(data.val_indices.size()) +
                                " samples, need " + std::to_string(samples_per_round));
  }
  // The model is a pure per-sample function, so predictions are computed once.
  const RealTensor logits = model(data.gather(data.val_indices));
  const Index classes = logits.dim(1);
  std::vector<int> predicted(data.val_indices.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    Index best = 0;
    logits.data().segment(static_cast<Index>(i) * classes, classes).maxCoeff(&best);
    predicted[i] = static_cast<int>(best);
  }
  std::vector<double> acc;
  std::vector<std::size_t> order(data.val_indices.size());
  for (int r = 0; r < rounds; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    int correct = 0;
    for (int k = 0; k < samples_per_round; ++k) {
      const std::size_t i = order[static_cast<std::size_t>(k)];
      correct += predicted[i] == data.labels[static_cast<std::size_t>(data.val_indices[i])] ? 1 : 0;
    }
    acc.push_back(static_cast<double>(correct) / samples_per_round);
  }
  EvalResult res;
  res.rounds = rounds;
  res.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / rounds;
  double var = 0.0;
  for (double a : acc) var += (a - res.mean_accuracy) * (a - res.mean_accuracy);
  res.stddev = std::sqrt(var / rounds);
  return res;
}

EvalResult evaluate_fewshot(const BatchModel& model, const Dataset& data, int rounds, const EpisodeConfig& config,
                            std::uint64_t seed) {
  if (rounds < 1) throw std::invalid_argument("evaluation needs rounds >= 1");
  const RealTensor all = model(data.gather(data.val_indices));
  const Index dim = all.dim(1);
  std::vector<Index> position(static_cast<std::size_t>(data.sample_count()), -1);
  for (std::size_t i = 0; i < data.val_indices.size(); ++i) {
    position[static_cast<std::size_t>(data.val_indices[i])] = static_cast<Index>(i);
  }
  std::vector<double> acc;
  for (int r = 0; r < rounds; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    const Episode ep = sample_episode(data, data.val_indices, config, rng);
    const auto items = ep.items();
    RealTensor emb(Shape{static_cast<Index>(items.size()), dim});
    for (std::size_t k = 0; k < items.size(); ++k) {
      emb.data().segment(static_cast<Index>(k) * dim, dim) =
          all.data().segment(position[static_cast<std::size_t>(items[k])] * dim, dim);
    }
    acc.push_back(nearest_prototype_accuracy(emb, ep));
  }
  EvalResult res;
  res.rounds = rounds;
  res.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / rounds;
  double var = 0.0;
  for (double a : acc) var += (a - res.mean_accuracy) * (a - res.mean_accuracy);
  res.stddev = std::sqrt(var / rounds);
  return res;
}

}  // namespace fracsim
