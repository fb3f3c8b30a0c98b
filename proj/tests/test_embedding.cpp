#include <doctest.h>

#include "creid/embedding.hpp"
#include "test_support.hpp"

using namespace creid;
using creid::testing::fd_wrt;
using creid::testing::grads_agree;
using creid::testing::random_matrix;

namespace {

embedding::ModelConfig vector_config(int input_dim = 6, int d = 4) {
  embedding::ModelConfig cfg;
  cfg.payload = data::PayloadKind::feature;
  cfg.input_dim = input_dim;
  cfg.feature_dim = d;
  cfg.mlp_hidden = 12;
  cfg.map_rows = 2;
  return cfg;
}

embedding::ModelConfig image_config() {
  embedding::ModelConfig cfg;
  cfg.payload = data::PayloadKind::image;
  cfg.image_shape = {16, 8, 1};
  cfg.feature_dim = 4;
  cfg.conv_hidden = 3;
  return cfg;
}

data::DatasetSplit vector_split(int n, int dim, uint64_t seed) {
  Rng rng(seed);
  std::vector<data::Sample> samples;
  for (int i = 0; i < n; ++i) {
    data::Sample s;
    s.payload = testing::random_matrix(rng, dim, 1).col(0);
    s.person_id = i % 3;
    s.camera = i % 2;
    s.source_index = i;
    samples.push_back(std::move(s));
  }
  return data::DatasetSplit(std::move(samples), data::SplitRole::target_train, 2,
                            3, data::PayloadKind::feature);
}

}  // namespace

TEST_CASE("embed produces batch x d matrices and empty batches work") {
  embedding::EmbeddingModel model(vector_config(), 1);
  Rng rng(2);
  const Mat batch = random_matrix(rng, 4, 6);
  const Mat f = model.embed_eval(batch, embedding::Branch::full);
  CHECK(f.rows() == 4);
  CHECK(f.cols() == 4);
  const Mat empty = model.embed_eval(Mat(0, 6), embedding::Branch::full);
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 4);
}

TEST_CASE("evaluation-mode embedding is deterministic") {
  embedding::EmbeddingModel model(image_config(), 5);
  Rng rng(3);
  const Mat batch = random_matrix(rng, 3, 16 * 8);
  const Mat a = model.embed_eval(batch, embedding::Branch::upper);
  const Mat b = model.embed_eval(batch, embedding::Branch::upper);
  CHECK(a == b);
}

TEST_CASE("payload kind mismatch is rejected") {
  embedding::EmbeddingModel model(image_config(), 5);
  const auto split = vector_split(4, 6, 7);
  CHECK_THROWS_AS(model.check_payload(split), Error);
}

TEST_CASE("split_branches: constant map gives equal branches") {
  const ad::MapShape shape{4, 2, 3};
  Mat maps = Mat::Constant(2, shape.size(), 0.7);
  const auto v = embedding::split_branches(maps, shape);
  CHECK((v.full.array() - 0.7).abs().maxCoeff() < 1e-12);
  CHECK((v.upper - v.full).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((v.lower - v.full).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("split_branches: top half a, bottom half b") {
  const ad::MapShape shape{4, 2, 1};
  Mat maps(1, 8);
  maps << 2, 2, 2, 2, 6, 6, 6, 6;  // rows 0-1 = 2, rows 2-3 = 6
  const auto v = embedding::split_branches(maps, shape);
  CHECK(v.upper(0, 0) == doctest::Approx(2.0));
  CHECK(v.lower(0, 0) == doctest::Approx(6.0));
  CHECK(v.full(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("split_branches: full equals the mean of upper and lower") {
  Rng rng(11);
  const ad::MapShape shape{4, 2, 3};
  const Mat maps = random_matrix(rng, 5, shape.size());
  const auto v = embedding::split_branches(maps, shape);
  // Direct arithmetic oracle: halves have equal pixel counts.
  CHECK((v.full - 0.5 * (v.upper + v.lower)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("split_branches rejects odd spatial heights") {
  const ad::MapShape shape{3, 2, 1};
  CHECK_THROWS_AS(embedding::split_branches(Mat::Zero(1, 6), shape), Error);
}

TEST_CASE("finite differences validate embed gradients (vector backbone)") {
  embedding::EmbeddingModel model(vector_config(), 21);
  Rng rng(22);
  const Mat batch = random_matrix(rng, 5, 6);
  auto scalar = [&]() {
    ad::Tape t;
    ad::Var f = model.embed(t, t.input(batch), embedding::Branch::upper);
    return t.value(t.mean_all(t.square(f)))(0, 0);
  };
  for (ad::Parameter* p : model.backbone_parameters()) {
    p->zero_grad();
    ad::Tape t;
    ad::Var f = model.embed(t, t.input(batch), embedding::Branch::upper);
    t.backward(t.mean_all(t.square(f)));
    Rng pick(31);
    for (int trial = 0; trial < 4; ++trial) {
      const auto i = static_cast<Eigen::Index>(pick.uniform_int(0, p->rows() - 1));
      const auto j = static_cast<Eigen::Index>(pick.uniform_int(0, p->cols() - 1));
      CHECK(grads_agree(p->grad(i, j), fd_wrt(scalar, p->value(i, j))));
    }
  }
}

TEST_CASE("finite differences validate embed gradients (conv backbone)") {
  embedding::EmbeddingModel model(image_config(), 23);
  Rng rng(24);
  const Mat batch = random_matrix(rng, 2, 16 * 8, 0.5);
  auto scalar = [&]() {
    ad::Tape t;
    ad::Var f = model.embed(t, t.input(batch), embedding::Branch::full);
    return t.value(t.mean_all(t.square(f)))(0, 0);
  };
  for (ad::Parameter* p : model.backbone_parameters()) {
    p->zero_grad();
    ad::Tape t;
    ad::Var f = model.embed(t, t.input(batch), embedding::Branch::full);
    t.backward(t.mean_all(t.square(f)));
    Rng pick(33);
    for (int trial = 0; trial < 4; ++trial) {
      const auto i = static_cast<Eigen::Index>(pick.uniform_int(0, p->rows() - 1));
      const auto j = static_cast<Eigen::Index>(pick.uniform_int(0, p->cols() - 1));
      CHECK(grads_agree(p->grad(i, j), fd_wrt(scalar, p->value(i, j))));
    }
  }
}

TEST_CASE("ssg eval features: unit-norm blocks, 3d length, flip-sum identity") {
  auto split = vector_split(6, 6, 41);
  embedding::EmbeddingModel model(vector_config(), 42);
  std::vector<int> idx = {0, 1, 2, 3, 4, 5};
  const Mat f = embedding::eval_features(model, split, idx,
                                         embedding::EvalFeatureMode::ssg);
  const int d = model.feature_dim();
  CHECK(f.cols() == 3 * d);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (int b = 0; b < 3; ++b)
      CHECK(f.row(i).segment(b * d, d).norm() == doctest::Approx(1.0).epsilon(1e-5));

  // Vector payloads are flip-invariant, so each block equals the normalized
  // doubled feature, i.e. the normalized feature itself.
  const Mat raw = model.embed_eval(split, idx, embedding::Branch::full);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const Vec expected = raw.row(i).normalized();
    CHECK((f.row(i).segment(0, d).transpose() - expected).cwiseAbs().maxCoeff() <
          1e-9);
  }
}

TEST_CASE("mmt eval features are the raw branch-F output of length d") {
  auto split = vector_split(5, 6, 51);
  embedding::EmbeddingModel model(vector_config(), 52);
  std::vector<int> idx = {0, 1, 2, 3, 4};
  const Mat f = embedding::eval_features(model, split, idx,
                                         embedding::EvalFeatureMode::mmt);
  CHECK(f.cols() == model.feature_dim());
  CHECK(f == model.embed_eval(split, idx, embedding::Branch::full));
}

TEST_CASE("model pairs never share parameters") {
  embedding::ModelPair pair(vector_config(), 61, 62);
  CHECK_THROWS_AS(embedding::ModelPair(vector_config(), 9, 9), Error);
  auto p1 = pair.model_1->parameters();
  auto p2 = pair.model_2->parameters();
  for (auto* a : p1)
    for (auto* b : p2) CHECK(a != b);
  // Independent seeds give different initializations.
  CHECK(pair.model_1->parameter_fingerprint() !=
        pair.model_2->parameter_fingerprint());
}

TEST_CASE("pseudo head reallocation resizes and reinitializes") {
  embedding::EmbeddingModel model(vector_config(), 71);
  model.reallocate_pseudo_head(5, 1);
  CHECK(model.pseudo_classes() == 5);
  Rng rng(72);
  const Mat batch = random_matrix(rng, 3, 6);
  ad::Tape t;
  ad::Var probs =
      model.pseudo_probs(t, model.embed(t, t.input(batch), embedding::Branch::full));
  CHECK(t.value(probs).cols() == 5);
  for (Eigen::Index i = 0; i < 3; ++i)
    CHECK(t.value(probs).row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));

  model.reallocate_pseudo_head(7, 2);
  CHECK(model.pseudo_classes() == 7);
}

TEST_CASE("classifier outputs are stochastic rows") {
  embedding::EmbeddingModel model(vector_config(), 81);
  model.set_id_classifier(4, 3);
  Rng rng(82);
  const Mat batch = random_matrix(rng, 6, 6);
  ad::Tape t;
  const Mat probs = t.value(
      model.id_probs(t, model.embed(t, t.input(batch), embedding::Branch::full)));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    CHECK(probs.row(i).minCoeff() >= 0.0);
    CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
  }
}
