#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "support/temp_dir.hpp"
#include "transrank/eval/probes.hpp"
#include "transrank/eval/report.hpp"
#include "transrank/eval/retrieval.hpp"
#include "transrank/eval/speediness.hpp"

using namespace transrank;
using namespace transrank::eval;
using transrank::testing::TempDir;

namespace {

DatasetSpec small_spec(std::size_t train, std::size_t test) {
  DatasetSpec spec;
  spec.seed = 5;
  spec.train = train;
  spec.test = test;
  spec.params.frames = 130;
  return spec;
}

FeatureBank random_bank(std::size_t n, std::size_t dim, Rng& rng) {
  std::normal_distribution<float> g(0, 1);
  FeatureBank b;
  b.features = Tensor({n, dim});
  for (auto& v : b.features.data()) v = g(rng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % 4));
  return b;
}

// Brute force: for each query, the best similarity among same-class train
// items against the count of strictly better or earlier-tied other items.
std::vector<double> oracle_recall(const FeatureBank& train, const FeatureBank& test, std::vector<std::size_t> ks) {
  const std::size_t d = train.features.dim(1);
  auto sim = [&](std::size_t q, std::size_t g) {
    double dot = 0, nq = 0, ng = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double a = test.features.at({q, k}), b = train.features.at({g, k});
      dot += a * b;
      nq += a * a;
      ng += b * b;
    }
    return dot / std::sqrt(nq * ng);
  };
  std::vector<double> out(ks.size(), 0);
  for (std::size_t q = 0; q < test.size(); ++q) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t g = 0; g < train.size(); ++g) ranked.emplace_back(-sim(q, g), g);
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t k = 0; k < ks.size(); ++k) {
      bool hit = false;
      for (std::size_t r = 0; r < std::min(ks[k], ranked.size()); ++r) {
        hit = hit || train.labels[ranked[r].second] == test.labels[q];
      }
      out[k] += hit ? 1.0 / static_cast<double>(test.size()) : 0.0;
    }
  }
  return out;
}

std::uint64_t encoder_checksum(Encoder& enc) {
  const auto params = enc.parameters();
  return parameter_checksum(std::vector<const Parameter*>(params.begin(), params.end()));
}

SpeedinessRecord record(double rate, double raw) { return {TemporalTransform::speed(rate), 0, raw, 0}; }

}  // namespace

TEST_CASE("a one-video dataset gives a bank of one vector") {
  auto spec = small_spec(1, 1);
  const auto data = generate_split(spec, "train");
  ModelConfig mc;
  VideoModel model(mc, 1);
  const auto bank = build_feature_bank(model.encoder(), data, EvalConfig{}, 3);
  CHECK(bank.size() == 1);
  CHECK(bank.features.shape() == Shape{1, mc.encoder.feature_dim()});
  CHECK(bank.features.all_finite());
}

TEST_CASE("averaging clips of a static video equals the single-clip feature") {
  FrameVolume still;
  still.length = 60;
  still.height = still.width = 64;
  still.data.resize(still.length * 64 * 64);
  for (std::size_t i = 0; i < still.data.size(); ++i) still.data[i] = static_cast<std::uint8_t>((i * 7) % 251);
  // Every frame identical.
  for (std::size_t t = 1; t < still.length; ++t) {
    std::copy_n(still.data.begin(), 64 * 64, still.data.begin() + static_cast<long>(t * 64 * 64));
  }
  Dataset data;
  data.manifest.records = {{0, 2, 1.0, "x"}};
  data.videos = {still};
  ModelConfig mc;
  VideoModel model(mc, 2);
  const auto bank = build_feature_bank(model.encoder(), data, EvalConfig{}, 1);
  std::vector<std::size_t> idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  const auto single = model.encoder().encode(eval_clip(still, idx, 0.875, 32));
  for (std::size_t d = 0; d < single.size(); ++d) CHECK(bank.features.at({0, d}) == doctest::Approx(single[d]).epsilon(1e-5));
  CHECK(bank.labels == std::vector<int>{2});
}

TEST_CASE("feature banks are deterministic and independent of the worker count") {
  const auto data = generate_split(small_spec(6, 1), "train");
  ModelConfig mc;
  VideoModel model(mc, 4);
  EvalConfig cfg;
  cfg.clips = 3;
  const auto a = build_feature_bank(model.encoder(), data, cfg, 9, 1);
  const auto b = build_feature_bank(model.encoder(), data, cfg, 9, 3);
  const auto c = build_feature_bank(model.encoder(), data, cfg, 10, 1);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK_FALSE(a.features == c.features);
}

TEST_CASE("a test bank copied from the train bank retrieves itself") {
  Rng rng = make_rng({1});
  const auto bank = random_bank(40, 16, rng);
  const auto r = retrieve(bank, bank);
  CHECK(r.r1 == 1.0);
  CHECK(r.queries == 40);
}

TEST_CASE("random features give chance-level R@1 on four balanced classes") {
  double sum = 0;
  constexpr int kDraws = 10;
  for (int draw = 0; draw < kDraws; ++draw) {
    Rng rng = make_rng({2, static_cast<std::uint64_t>(draw)});
    const auto train = random_bank(800, 32, rng);
    const auto test = random_bank(200, 32, rng);
    sum += retrieve(train, test).r1;
  }
  CHECK(sum / kDraws == doctest::Approx(0.25).epsilon(0.2));
}

TEST_CASE("recall matches a brute-force ranking and nests across k") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng = make_rng({3, trial});
    const auto train = random_bank(30, 4, rng);
    const auto test = random_bank(12, 4, rng);
    const std::vector<std::size_t> ks{1, 2, 3, 5, 10, 30};
    const auto got = recall_at(train, test, ks);
    const auto want = oracle_recall(train, test, ks);
    for (std::size_t k = 0; k < ks.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    const auto r = retrieve(train, test);
    CHECK(r.r1 <= r.r5);
    CHECK(r.r5 <= r.r10);
    CHECK(r.r10 <= 1.0);
    CHECK(got.back() == 1.0);
  }
}

TEST_CASE("retrieval is invariant to a global positive scale") {
  Rng rng = make_rng({4});
  const auto train = random_bank(50, 8, rng);
  const auto test = random_bank(20, 8, rng);
  auto scaled_train = train, scaled_test = test;
  for (auto& v : scaled_train.features.data()) v *= 4.0f;
  for (auto& v : scaled_test.features.data()) v *= 4.0f;
  const std::size_t ks[] = {1, 3, 5, 10};
  CHECK(recall_at(train, test, ks) == recall_at(scaled_train, scaled_test, ks));
}

TEST_CASE("cosine similarity stays in [-1, 1]") {
  Rng rng = make_rng({5});
  const auto bank = random_bank(30, 5, rng);
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t j = 0; j < 30; ++j) {
      const double c = cosine_similarity({bank.features.raw() + i * 5, 5}, {bank.features.raw() + j * 5, 5});
      CHECK(c >= -1.0);
      CHECK(c <= 1.0);
    }
  }
  const float a[] = {1e20f, 1e20f}, b[] = {1e20f, 1e20f};
  CHECK(cosine_similarity(a, b) == 1.0);
}

TEST_CASE("zero-norm features are excluded with a warning") {
  Rng rng = make_rng({6});
  auto train = random_bank(8, 3, rng);
  auto test = random_bank(4, 3, rng);
  for (std::size_t d = 0; d < 3; ++d) test.features.at({1, d}) = 0;
  std::ostringstream warn;
  const auto r = retrieve(train, test, &warn);
  CHECK(r.excluded == 1);
  CHECK(r.queries == 3);
  CHECK(warn.str() == "warning: 1 test feature(s) with zero norm excluded: 1\n");
  for (auto& v : test.features.data()) v = 0;
  CHECK_THROWS_AS(retrieve(train, test), std::invalid_argument);
}

TEST_CASE("speediness normalization is the affine map fixing the 1x and 2x means") {
  std::vector<SpeedinessRecord> recs{record(1, 0.1), record(1, 0.3), record(2, 0.6), record(2, 0.8), record(4, 0.45)};
  normalize_speediness(recs);
  CHECK(recs[4].normalized == doctest::Approx(0.5).epsilon(1e-12));
  CHECK((recs[0].normalized + recs[1].normalized) / 2 == doctest::Approx(0.0));
  CHECK((recs[2].normalized + recs[3].normalized) / 2 == doctest::Approx(1.0));
}

TEST_CASE("speediness normalization is idempotent with recomputed means") {
  Rng rng = make_rng({7});
  std::normal_distribution<double> g(0, 1);
  std::vector<SpeedinessRecord> recs;
  for (double rate : {0.5, 1.0, 2.0, 4.0}) {
    for (int i = 0; i < 50; ++i) recs.push_back(record(rate, rate + g(rng)));
  }
  normalize_speediness(recs);
  auto twice = recs;
  for (auto& r : twice) r.raw = r.normalized;
  normalize_speediness(twice);
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(twice[i].normalized == doctest::Approx(recs[i].normalized).epsilon(1e-12));
  double mean1 = 0;
  for (const auto& r : recs) mean1 += r.transform.rate == 1.0 ? r.normalized / 50 : 0;
  CHECK(std::abs(mean1) < 1e-12);
}

TEST_CASE("equal 1x and 2x means are rejected") {
  std::vector<SpeedinessRecord> recs{record(1, 0.5), record(2, 0.5)};
  CHECK_THROWS_AS(normalize_speediness(recs), std::domain_error);
  std::vector<SpeedinessRecord> only_one{record(1, 0.5)};
  CHECK_THROWS_AS(normalize_speediness(only_one), std::domain_error);
}

TEST_CASE("quantiles interpolate between closest ranks") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({4, 3, 2, 1}, 0.5) == doctest::Approx(2.5));
  std::vector<double> ten(10);
  std::iota(ten.begin(), ten.end(), 1.0);
  CHECK(quantile(ten, 0.05) == doctest::Approx(1.45));
  CHECK(quantile(ten, 0.95) == doctest::Approx(9.55));
  CHECK(quantile({7}, 0.3) == 7);
  CHECK_THROWS(quantile({}, 0.5));
}

TEST_CASE("speediness scores every clip at every probe rate") {
  const auto data = generate_split(small_spec(1, 3), "test");
  ModelConfig mc;
  mc.transforms = 2;
  VideoModel model(mc, 3);
  EvalConfig cfg;
  cfg.speediness_clips = 2;
  const std::vector<TemporalTransform> trained{TemporalTransform::speed(2), TemporalTransform::speed(1)};
  const auto recs = speediness(model, trained, data, cfg, 1);
  REQUIRE(recs.size() == 3 * 2 * 4);
  const auto rows = summarize_speediness(recs, cfg.probe_rates);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rate == "0.5x");
  for (const auto& r : rows) {
    CHECK(r.q05 <= r.q25);
    CHECK(r.q25 <= r.q50);
    CHECK(r.q50 <= r.q75);
    CHECK(r.q75 <= r.q95);
  }
  // Columns are read by transform, not by position.
  VideoModel same(mc, 3);
  const std::vector<TemporalTransform> swapped{TemporalTransform::speed(1), TemporalTransform::speed(2)};
  const auto flipped = speediness(same, swapped, data, cfg, 1);
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(flipped[i].raw == doctest::Approx(-recs[i].raw));
}

TEST_CASE("speediness refuses models not trained on exactly 1x and 2x") {
  const auto data = generate_split(small_spec(1, 1), "test");
  ModelConfig mc;
  VideoModel three(mc, 1);
  const auto set3 = parse_transform_list("1x,2x,rev");
  CHECK_THROWS_AS(speediness(three, set3, data, EvalConfig{}, 1), std::invalid_argument);
  mc.transforms = 2;
  VideoModel two(mc, 1);
  const auto wrong = parse_transform_list("1x,rev");
  CHECK_THROWS_AS(speediness(two, wrong, data, EvalConfig{}, 1), std::invalid_argument);
}

TEST_CASE("sync data has seven patterns and a zero fused feature at offset 0") {
  CHECK(kSyncPatterns == 7);
  CHECK(sync_shift_fraction(0) == 0.75);
  CHECK(sync_shift_fraction(3) == 0.0);
  CHECK(sync_shift_fraction(6) == -0.75);
  const auto data = generate_split(small_spec(2, 1), "train");
  ModelConfig mc;
  VideoModel model(mc, 8);
  EvalConfig cfg;
  const auto d = sync_probe_data(model.encoder(), data, cfg, 1);
  REQUIRE(d.labels.size() == 2 * cfg.sync_windows * 7);
  std::vector<int> counts(7, 0);
  const std::size_t dim = d.features.dim(1);
  for (std::size_t r = 0; r < d.labels.size(); ++r) {
    ++counts[static_cast<std::size_t>(d.labels[r])];
    double norm = 0;
    for (std::size_t k = 0; k < dim; ++k) norm += std::abs(d.features.at({r, k}));
    if (d.labels[r] == 3) {
      CHECK(norm == 0.0);
    } else {
      CHECK(norm > 0.0);
    }
  }
  for (int c : counts) CHECK(c == static_cast<int>(2 * cfg.sync_windows));
}

TEST_CASE("order data is balanced and swapping sub-clips changes the input") {
  const auto data = generate_split(small_spec(3, 1), "train");
  ModelConfig mc;
  VideoModel model(mc, 9);
  EvalConfig cfg;
  const auto d = order_probe_data(model.encoder(), data, cfg, 2);
  REQUIRE(d.labels.size() == 3 * cfg.order_windows * 2);
  CHECK(std::count(d.labels.begin(), d.labels.end(), 0) == static_cast<long>(d.labels.size() / 2));
  const std::size_t dim = d.features.dim(1);
  for (std::size_t r = 0; r < d.labels.size(); r += 2) {
    CHECK(d.labels[r] == 0);
    CHECK(d.labels[r + 1] == 1);
    bool differs = false;
    for (std::size_t k = 0; k < dim; ++k) differs = differs || d.features.at({r, k}) != d.features.at({r + 1, k});
    CHECK(differs);
  }
}

TEST_CASE("probes fit separable data and never touch the encoder") {
  Rng rng = make_rng({10});
  std::normal_distribution<float> g(0, 0.3f);
  auto make = [&](std::size_t n) {
    ProbeData d;
    d.features = Tensor({n, 6});
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 3);
      d.labels.push_back(label);
      for (std::size_t k = 0; k < 6; ++k) d.features.at({i, k}) = g(rng) + (k == static_cast<std::size_t>(label) ? 2.0f : 0.0f);
    }
    return d;
  };
  EvalConfig cfg;
  cfg.probe_epochs = 20;
  CHECK(train_probe(make(150), make(60), 3, cfg, 1) == 1.0);

  const auto data = generate_split(small_spec(2, 2), "train");
  ModelConfig mc;
  VideoModel model(mc, 11);
  const auto before = encoder_checksum(model.encoder());
  cfg.probe_epochs = 2;
  const double acc = temporal_probe_order(model.encoder(), data, data, cfg, 1);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(encoder_checksum(model.encoder()) == before);
}

TEST_CASE("metric and quantile CSVs have the documented layout") {
  TempDir tmp("csv");
  const std::vector<MetricRow> rows{{"R@1", 0.25}, {"R@5", 1.0 / 3.0}};
  write_metric_csv(tmp.path / "m.csv", rows);
  CHECK(read_metric_csv(tmp.path / "m.csv") == rows);
  write_quantile_csv(tmp.path / "q.csv", std::vector<QuantileRow>{{"2x", 0.1, 0.2, 0.5, 0.8, 0.9}});
  std::ifstream is(tmp.path / "q.csv");
  std::string header, line;
  std::getline(is, header);
  std::getline(is, line);
  CHECK(header == "rate,q05,q25,q50,q75,q95");
  CHECK(line == "2x,0.1,0.2,0.5,0.8,0.9");
  CHECK(format_double(0.1) == "0.1");
  CHECK_THROWS(write_metric_csv(tmp.path / "bad.csv", std::vector<MetricRow>{{"a,b", 1}}));
}
