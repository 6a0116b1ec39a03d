#pragma once

#include "fracsim/autodiff.hpp"
#include "fracsim/dataset.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace fracsim {

struct EpisodeConfig {
  int n_way = 12;
  int k_shot = 5;
  int q = 5;
  /// Test harness switch: queries reuse the support items.
  bool overlap_support_query = false;
};

/// N-way K-shot episode. Items are way-major: way i owns support
/// [i*K, (i+1)*K) and query [i*Q, (i+1)*Q); episode labels are way indices.
struct Episode {
  int n_way = 0;
  int k_shot = 0;
  int q = 0;
  std::vector<int> classes;
  std::vector<Index> support;
  std::vector<Index> query;

  std::size_t item_count() const { return support.size() + query.size(); }
  /// Support items followed by query items.
  std::vector<Index> items() const;
  int support_label(std::size_t i) const { return static_cast<int>(i) / k_shot; }
  int query_label(std::size_t i) const { return static_cast<int>(i) / q; }
};

/// Samples classes uniformly without replacement, then K + Q distinct items
/// per class without replacement.
Episode sample_episode(const Dataset& data, std::span<const Index> split, const EpisodeConfig& config,
                       std::mt19937_64& rng);

/// Query logits, -||query - prototype||^2, for embeddings laid out as
/// Episode::items(). Returns [N*Q, N].
RealTensor prototype_logits(const RealTensor& embeddings, const Episode& episode);

/// Mean softmax cross-entropy of the query logits (value only).
double prototypical_loss(const RealTensor& embeddings, const Episode& episode);

/// Graph op form of prototypical_loss. `accuracy`, when given, receives the
/// query accuracy of the nearest-prototype rule.
NodeId prototypical_loss(Graph& g, NodeId embeddings, const Episode& episode, double* accuracy = nullptr);

/// Fraction of queries whose nearest prototype is their own way.
double nearest_prototype_accuracy(const RealTensor& embeddings, const Episode& episode);

struct EvalResult {
  double mean_accuracy = 0.0;
  double stddev = 0.0;
  int rounds = 0;
};

/// Maps a batch [N,1,T,F] to logits or embeddings [N,D].
using BatchModel = std::function<RealTensor(const RealTensor&)>;

/// Mean top-1 accuracy over `rounds` random validation subsets of
/// `samples_per_round` items (without replacement inside a round). Round r
/// draws from derive_seed(seed, r).
EvalResult evaluate_generic(const BatchModel& model, const Dataset& data, int rounds = 100, int samples_per_round = 60,
                            std::uint64_t seed = 0);

/// Mean nearest-prototype query accuracy over `rounds` validation episodes.
EvalResult evaluate_fewshot(const BatchModel& model, const Dataset& data, int rounds = 100,
                            const EpisodeConfig& config = {}, std::uint64_t seed = 0);

}  // namespace fracsim
