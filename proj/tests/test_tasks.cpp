#include "fracsim/model.hpp"
#include "fracsim/tasks.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

using fracsim::Dataset;
using fracsim::Episode;
using fracsim::EpisodeConfig;
using fracsim::Index;
using fracsim::RealTensor;

namespace {

Dataset pool(int classes, int per_class, double noise, std::uint64_t seed = 5) {
  fracsim::SynthDatasetSpec spec;
  spec.num_classes = classes;
  spec.samples_per_class = per_class;
  spec.noise_level = noise;
  spec.seed = seed;
  return fracsim::generate_dataset(spec);
}

Episode fixed_episode(int n, int k, int q) {
  Episode e;
  e.n_way = n;
  e.k_shot = k;
  e.q = q;
  for (int c = 0; c < n; ++c) e.classes.push_back(c);
  for (Index i = 0; i < n * k; ++i) e.support.push_back(i);
  for (Index i = 0; i < n * q; ++i) e.query.push_back(n * k + i);
  return e;
}

// Query rows follow support rows, as in Episode::items().
double formula_loss(const RealTensor& emb, const Episode& e) {
  const Index d = emb.dim(1);
  const auto row = [&](Index r) { return Eigen::VectorXd(emb.data().segment(r * d, d)); };
  std::vector<Eigen::VectorXd> protos(static_cast<std::size_t>(e.n_way), Eigen::VectorXd::Zero(d));
  for (Index s = 0; s < e.n_way * e.k_shot; ++s) protos[static_cast<std::size_t>(s / e.k_shot)] += row(s) / e.k_shot;
  double total = 0.0;
  const Index support = e.n_way * e.k_shot;
  for (Index qi = 0; qi < e.n_way * e.q; ++qi) {
    const Eigen::VectorXd x = row(support + qi);
    double denom = 0.0;
    for (const auto& p : protos) denom += std::exp(-(x - p).squaredNorm());
    const double own = std::exp(-(x - protos[static_cast<std::size_t>(qi / e.q)]).squaredNorm());
    total += -std::log(own / denom);
  }
  return total / static_cast<double>(e.n_way * e.q);
}

}  // namespace

TEST(Episode, TwelveWayFiveShotHasOneHundredTwentyItems) {
  const Dataset d = pool(15, 12, 0.3);
  std::mt19937_64 rng(1);
  const Episode e = fracsim::sample_episode(d, d.train_indices, EpisodeConfig{}, rng);
  EXPECT_EQ(e.item_count(), 120u);
  std::set<Index> support(e.support.begin(), e.support.end());
  for (Index q : e.query) EXPECT_EQ(support.count(q), 0u);
  std::map<int, int> support_hist, query_hist;
  for (std::size_t i = 0; i < e.support.size(); ++i) {
    EXPECT_EQ(d.labels[static_cast<std::size_t>(e.support[i])], e.classes[static_cast<std::size_t>(e.support_label(i))]);
    ++support_hist[e.support_label(i)];
  }
  for (std::size_t i = 0; i < e.query.size(); ++i) {
    EXPECT_EQ(d.labels[static_cast<std::size_t>(e.query[i])], e.classes[static_cast<std::size_t>(e.query_label(i))]);
    ++query_hist[e.query_label(i)];
  }
  EXPECT_EQ(support_hist.size(), 12u);
  for (const auto& [way, count] : support_hist) EXPECT_EQ(count, 5) << way;
  for (const auto& [way, count] : query_hist) EXPECT_EQ(count, 5) << way;
}

TEST(Episode, AllClassesWayUsesEveryClassOnce) {
  const Dataset d = pool(6, 20, 0.3);
  std::mt19937_64 rng(2);
  const Episode e = fracsim::sample_episode(d, d.train_indices, EpisodeConfig{6, 2, 3, false}, rng);
  EXPECT_EQ(std::set<int>(e.classes.begin(), e.classes.end()).size(), 6u);
}

TEST(Episode, SeededSamplingIsDeterministic) {
  const Dataset d = pool(15, 12, 0.3);
  std::mt19937_64 a(3), b(3);
  const Episode x = fracsim::sample_episode(d, d.train_indices, EpisodeConfig{}, a);
  const Episode y = fracsim::sample_episode(d, d.train_indices, EpisodeConfig{}, b);
  EXPECT_EQ(x.classes, y.classes);
  EXPECT_EQ(x.support, y.support);
  EXPECT_EQ(x.query, y.query);
}

TEST(Episode, InsufficientDataIsAnError) {
  const Dataset d = pool(6, 20, 0.3);
  std::mt19937_64 rng(4);
  EXPECT_THROW(fracsim::sample_episode(d, d.train_indices, EpisodeConfig{12, 5, 5, false}, rng), std::invalid_argument);
  EXPECT_THROW(fracsim::sample_episode(d, d.val_indices, EpisodeConfig{3, 5, 5, false}, rng), std::invalid_argument);
}

TEST(PrototypicalLoss, MatchesFormula) {
  std::mt19937_64 rng(5);
  const Episode e = fixed_episode(3, 2, 2);
  const RealTensor emb = RealTensor::normal({12, 5}, rng);
  EXPECT_NEAR(fracsim::prototypical_loss(emb, e), formula_loss(emb, e), 1e-12);
  fracsim::Graph g;
  EXPECT_NEAR(g.value(fracsim::prototypical_loss(g, g.constant(emb), e))[0], formula_loss(emb, e), 1e-12);
}

TEST(PrototypicalLoss, CollapsedDistantClustersGiveZeroLoss) {
  const Episode e = fixed_episode(4, 3, 2);
  RealTensor emb({20, 4});
  const auto put = [&](Index row, int way) { emb.at(row, way) = 50.0; };
  for (Index s = 0; s < 12; ++s) put(s, static_cast<int>(s / 3));
  for (Index q = 0; q < 8; ++q) put(12 + q, static_cast<int>(q / 2));
  EXPECT_LT(fracsim::prototypical_loss(emb, e), 1e-12);
  EXPECT_EQ(fracsim::nearest_prototype_accuracy(emb, e), 1.0);
}

TEST(PrototypicalLoss, IdenticalEmbeddingsGiveLogN) {
  const Episode e = fixed_episode(5, 2, 3);
  const RealTensor emb = RealTensor::constant({25, 3}, 0.25);
  EXPECT_NEAR(fracsim::prototypical_loss(emb, e), std::log(5.0), 1e-12);
}

TEST(PrototypicalLoss, InvariantToSupportOrderWithinAWay) {
  std::mt19937_64 rng(6);
  const Episode e = fixed_episode(3, 3, 2);
  const RealTensor emb = RealTensor::normal({15, 4}, rng);
  RealTensor swapped = emb;
  // Swap support rows 3 and 5 (both way 1).
  swapped.data().segment(3 * 4, 4) = emb.data().segment(5 * 4, 4);
  swapped.data().segment(5 * 4, 4) = emb.data().segment(3 * 4, 4);
  EXPECT_NEAR(fracsim::prototypical_loss(emb, e), fracsim::prototypical_loss(swapped, e), 1e-14);
}

TEST(PrototypicalLoss, MisalignedEmbeddingsAreRejected) {
  const Episode e = fixed_episode(3, 2, 2);
  EXPECT_THROW(fracsim::prototypical_loss(RealTensor({11, 4}), e), fracsim::DimensionError);
}

TEST(EvaluateGeneric, PerfectModelScoresOne) {
  const Dataset d = pool(5, 200, 0.2);
  // Looks up the label of each row by matching it against the dataset.
  const fracsim::BatchModel oracle = [&](const RealTensor& x) {
    const Index per = x.size() / x.dim(0);
    RealTensor logits({x.dim(0), 5});
    for (Index n = 0; n < x.dim(0); ++n) {
      for (Index i : d.val_indices) {
        if (d.inputs.data().segment(i * per, per) == x.data().segment(n * per, per)) {
          logits.at(n, d.labels[static_cast<std::size_t>(i)]) = 1.0;
          break;
        }
      }
    }
    return logits;
  };
  const auto res = fracsim::evaluate_generic(oracle, d, 100, 60, 1);
  EXPECT_EQ(res.mean_accuracy, 1.0);
  EXPECT_EQ(res.stddev, 0.0);
  EXPECT_EQ(res.rounds, 100);
}

TEST(EvaluateGeneric, ConstantModelIsAtChance) {
  const Dataset d = pool(10, 300, 0.4);
  const fracsim::BatchModel constant = [](const RealTensor& x) { return RealTensor::constant({x.dim(0), 10}, 0.5); };
  const auto res = fracsim::evaluate_generic(constant, d, 100, 60, 2);
  // 100 rounds of 60 draws: sigma = sqrt(p (1 - p) / 6000).
  const double sigma = std::sqrt(0.1 * 0.9 / 6000.0);
  EXPECT_NEAR(res.mean_accuracy, 0.1, 3.0 * sigma);
  EXPECT_EQ(fracsim::evaluate_generic(constant, d, 100, 60, 2).mean_accuracy, res.mean_accuracy);
  EXPECT_THROW(fracsim::evaluate_generic(constant, d, 100, 400, 2), std::invalid_argument);
}

TEST(EvaluateFewShot, RandomEncoderOnSignalFreeDataIsAtChance) {
  // Noise swamps the class patterns, so no encoder can beat chance.
  const Dataset d = pool(14, 400, 1000.0);
  const fracsim::Network net(fracsim::build_protonet_analogue(), 7);
  const fracsim::BatchModel model = [&](const RealTensor& x) { return net.infer(x); };
  const auto res = fracsim::evaluate_fewshot(model, d, 100, EpisodeConfig{}, 3);
  const double p = 1.0 / 12.0;
  // Queries are drawn from a finite validation pool and repeat across
  // episodes, so the spread is set by the distinct items, not the 6000 draws.
  const double distinct = static_cast<double>(d.val_indices.size());
  EXPECT_NEAR(res.mean_accuracy, p, 3.0 * std::sqrt(p * (1.0 - p) / distinct));
}

TEST(EvaluateFewShot, OverlapSwitchWithCollapsedClassesScoresOne) {
  const Dataset d = pool(14, 100, 0.5);
  // Embeds each sample at its class one-hot: an injective map of classes.
  const fracsim::BatchModel collapsed = [&](const RealTensor& x) {
    const Index per = x.size() / x.dim(0);
    RealTensor emb({x.dim(0), 14});
    for (Index n = 0; n < x.dim(0); ++n) {
      for (Index i : d.val_indices) {
        if (d.inputs.data().segment(i * per, per) == x.data().segment(n * per, per)) {
          emb.at(n, d.labels[static_cast<std::size_t>(i)]) = 1.0;
          break;
        }
      }
    }
    return emb;
  };
  const auto res = fracsim::evaluate_fewshot(collapsed, d, 20, EpisodeConfig{12, 5, 5, true}, 4);
  EXPECT_EQ(res.mean_accuracy, 1.0);
  // Overlap means each query is a support item.
  std::mt19937_64 rng(5);
  const Episode e = fracsim::sample_episode(d, d.val_indices, EpisodeConfig{12, 5, 5, true}, rng);
  EXPECT_EQ(e.support, e.query);
}
