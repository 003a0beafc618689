// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <unistd.h>

#include "qfpred/perceptual_loss.hpp"
#include "test_support.hpp"

using namespace qfpred;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qfpred_ploss_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

QfNet frozen_narrow(std::uint64_t seed = 51) {
  QfNet net(build_narrow_arch(1, HeadMode::regression), seed);
  net.set_frozen(true);
  return net;
}

std::vector<std::vector<float>> param_copy(nn::ParamStore& store) {
  std::vector<std::vector<float>> out;
  for (auto& p : store.params()) {
    out.emplace_back(p.tensor->data(), p.tensor->data() + p.tensor->size());
  }
  return out;
}

}  // namespace

TEST_CASE("restorer: output dims equal input dims") {
  RestorerNet restorer(RestorerSpec{1, 16, 8}, 3);
  Tensor input(Shape4{2, 1, 40, 56});
  Rng rng(4);
  qftest::fill_uniform(input, rng, 0.0f, 1.0f);
  CHECK(restorer.infer(input).shape() == input.shape());
}

TEST_CASE("combined_loss: lambda 0 reduces to the pure data term") {
  QfNet qf = frozen_narrow();
  Rng rng(6);
  Tensor restored(Shape4{1, 1, 32, 32});
  Tensor input(restored.shape());
  qftest::fill_uniform(restored, rng, 0.0f, 1.0f);
  qftest::fill_uniform(input, rng, 0.0f, 1.0f);

  const CombinedLossValue v =
      combined_loss(restored, input, qf, CombinedLossConfig{0.0, DataTerm::l1}, nullptr);
  CHECK(v.total == doctest::Approx(nn::l1_loss(restored, input, nullptr)).epsilon(1e-12));
  CHECK(v.total == doctest::Approx(v.data).epsilon(1e-12));
}

TEST_CASE("combined_loss: identity restorer leaves only the QF term") {
  QfNet qf = frozen_narrow(8);
  Rng rng(9);
  Tensor input(Shape4{1, 1, 32, 32});
  qftest::fill_uniform(input, rng, 0.0f, 1.0f);

  const double lambda = 0.7;
  const CombinedLossValue v =
      combined_loss(input, input, qf, CombinedLossConfig{lambda, DataTerm::l1}, nullptr);
  CHECK(v.data == doctest::Approx(0.0));
  const double mean_qf = qf.infer(input).mean();
  CHECK(v.total == doctest::Approx(lambda * (1.0 - mean_qf)).epsilon(1e-9));
}

TEST_CASE("combined_loss: requires a frozen QF network") {
  QfNet qf(build_narrow_arch(1, HeadMode::regression), 5);
  Tensor t(Shape4{1, 1, 32, 32});
  CHECK_THROWS_AS(combined_loss(t, t, qf, CombinedLossConfig{}, nullptr), Error);
}

TEST_CASE("combined_loss: restored smaller than the QF receptive field errors") {
  QfNet qf = frozen_narrow();
  Tensor t(Shape4{1, 1, 16, 16});
  CHECK_THROWS_AS(combined_loss(t, t, qf, CombinedLossConfig{}, nullptr), DimensionError);
}

TEST_CASE("combined_loss: gradient through the frozen net matches finite differences") {
  QfNet qf = frozen_narrow(13);
  Rng rng(14);
  Tensor restored(Shape4{1, 1, 32, 32});
  Tensor input(restored.shape());
  qftest::fill_uniform(restored, rng, 0.1f, 0.9f);
  qftest::fill_uniform(input, rng, 0.1f, 0.9f);

  const CombinedLossConfig cfg{0.5, DataTerm::l2};
  Tensor grad(restored.shape());
  combined_loss(restored, input, qf, cfg, &grad);
  auto loss = [&]() { return combined_loss(restored, input, qf, cfg, nullptr).total; };
  // deep ReLU stack: a sub-percent sliver of coordinates sits at a kink where
  // central differences are one-sided; everything else must meet 1e-3
  const auto check = qftest::finite_diff_check_robust(restored.data(), restored.size(), loss,
                                                      grad.data(), 1e-3, 1e-3, 0.05);
  CHECK(check.pass_fraction >= 0.99);
  CHECK(check.max_rel_err < 2e-2);
}

TEST_CASE("frozen QF parameters are bit-identical after restorer training") {
  TempDir tmp;
  const CorpusManifest m = CorpusManifest::load(
      generate_desk_corpus(tmp.file("corpus"), 5, 96, 17, ColorSpace::gray));
  QfNet qf = frozen_narrow(21);
  const auto before = param_copy(qf.params());

  RestorerNet restorer(RestorerSpec{1, 16, 8}, 3);
  RestorerHyper hyper;
  hyper.steps = 10;
  hyper.batch_size = 2;
  hyper.patch_size = 32;
  const RestorerReport report =
      train_restorer(restorer, m, ColorSpace::gray, 40, qf, CombinedLossConfig{0.1}, hyper);
  CHECK(!report.rows.empty());

  const auto after = param_copy(qf.params());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(std::memcmp(before[i].data(), after[i].data(),
                      sizeof(float) * before[i].size()) == 0);
  }
}

TEST_CASE("train_restorer: color mode mismatch is rejected") {
  TempDir tmp;
  const CorpusManifest m = CorpusManifest::load(
      generate_desk_corpus(tmp.file("corpus"), 4, 64, 18, ColorSpace::gray));
  QfNet qf(build_narrow_arch(3, HeadMode::regression), 5);
  qf.set_frozen(true);
  RestorerNet restorer(RestorerSpec{1, 16, 8}, 3);
  RestorerHyper hyper;
  hyper.steps = 1;
  CHECK_THROWS_AS(
      train_restorer(restorer, m, ColorSpace::gray, 40, qf, CombinedLossConfig{0.0}, hyper),
      DimensionError);
}

TEST_CASE("train_restorer: lambda 0 converges toward the identity map") {
  TempDir tmp;
  const CorpusManifest m = CorpusManifest::load(
      generate_desk_corpus(tmp.file("corpus"), 6, 96, 19, ColorSpace::gray));
  QfNet qf = frozen_narrow(23);
  RestorerNet restorer(RestorerSpec{1, 16, 8}, 7);
  RestorerHyper hyper;
  hyper.steps = 300;
  hyper.batch_size = 4;
  hyper.patch_size = 32;
  hyper.lr = 3e-3;
  const RestorerReport report = train_restorer(restorer, m, ColorSpace::gray, 40, qf,
                                               CombinedLossConfig{0.0, DataTerm::l1}, hyper);
  CHECK(report.mean_l1_drift < 0.01);
}

TEST_CASE("tradeoff report: csv and json emit one row per lambda") {
  TempDir tmp;
  TradeoffReport r;
  r.rows = {{0.0, 0.0, 0.001}, {0.1, 0.05, 0.01}, {1.0, 0.12, 0.05}};
  r.write_csv(tmp.file("t.csv"));
  r.write_json(tmp.file("t.json"));
  std::ifstream csv(tmp.file("t.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 4);  // header + 3 rows
}
