#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "gma/errors.hpp"
#include "gma/log.hpp"
#include "gma/pipeline.hpp"
#include "gma/train_eval.hpp"
#include "helpers.hpp"

using namespace gma;

namespace {

DatasetManifest infants(int wm, int fm, int pr, int clips_per_infant = 1) {
  DatasetManifest m;
  int id = 0;
  auto add = [&](GmsLabel label, int n) {
    for (int i = 0; i < n; ++i, ++id) {
      for (int c = 0; c < clips_per_infant; ++c) {
        ManifestEntry e;
        e.infant_id = "inf" + std::to_string(id);
        e.clip_id = e.infant_id + "_" + std::to_string(c);
        e.video_path = "/dev/null";
        e.label = label;
        e.clip_end_s = 60;
        m.entries.push_back(e);
      }
    }
  };
  add(GmsLabel::WM, wm);
  add(GmsLabel::FM, fm);
  add(GmsLabel::PR, pr);
  return m;
}

// Covariance-form MCC over one-hot vectors of the expanded sample list.
double mcc_oracle(const Confusion& c) {
  std::vector<std::pair<int, int>> samples;
  for (int t = 0; t < 3; ++t) {
    for (int p = 0; p < 3; ++p) {
      for (long n = 0; n < c[t][p]; ++n) samples.emplace_back(t, p);
    }
  }
  const double s = static_cast<double>(samples.size());
  if (s == 0) return 0.0;
  std::array<double, 3> xm{}, ym{};
  for (auto [t, p] : samples) {
    xm[t] += 1 / s;
    ym[p] += 1 / s;
  }
  double cxy = 0, cxx = 0, cyy = 0;
  for (auto [t, p] : samples) {
    for (int k = 0; k < 3; ++k) {
      const double x = (t == k) - xm[k], y = (p == k) - ym[k];
      cxy += x * y;
      cxx += x * x;
      cyy += y * y;
    }
  }
  return cxx * cyy > 0 ? cxy / std::sqrt(cxx * cyy) : 0.0;
}

std::vector<std::pair<GmsLabel, GmsLabel>> expand(const Confusion& c) {
  std::vector<std::pair<GmsLabel, GmsLabel>> out;
  for (int t = 0; t < 3; ++t) {
    for (int p = 0; p < 3; ++p) {
      for (long n = 0; n < c[t][p]; ++n) out.emplace_back(label_from_index(t), label_from_index(p));
    }
  }
  return out;
}

struct SmallData {
  test::TempDir dir{"train"};
  DatasetManifest manifest;
  PipelineConfig config;

  SmallData() {
    DatasetSpec spec;
    spec.n_per_class = 2;
    spec.duration_s = 4;
    spec.fps = 6;
    spec.width = 192;
    spec.height = 192;
    spec.seed = 5;
    manifest = generate_dataset(spec, dir / "ds");
    config.clip_duration_s = 4;
    config.crop_size = 32;
    config.chunk_length = 4;
    config.chunk_stride = 4;
    config.batch_size = 4;
    config.learning_rate = 1e-3;
    config.epochs = 2;
    config.folds = 2;
    preprocess_manifest(manifest, config, Cache(dir / "cache"), 1);
  }
  ChunkDataset data() const { return ChunkDataset(manifest, config, Cache(dir / "cache")); }
};

}  // namespace

TEST_CASE("folds on 37/36/27 infants") {
  const DatasetManifest m = infants(37, 36, 27);
  const auto folds = make_folds(m, 5, 0);
  REQUIRE(folds.size() == 5);
  const std::array<double, 3> expect{7.4, 7.2, 5.4};
  std::map<std::string, GmsLabel> label_of;
  for (const auto& e : m.entries) label_of[e.infant_id] = e.label;
  std::multiset<std::string> all_val;
  for (const auto& f : folds) {
    std::array<int, 3> counts{};
    for (const auto& id : f.val_ids) ++counts[index_of(label_of.at(id))];
    for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] - expect[k]) <= 1.0);
    std::vector<std::string> inter;
    std::set_intersection(f.train_ids.begin(), f.train_ids.end(), f.val_ids.begin(), f.val_ids.end(),
                          std::back_inserter(inter));
    CHECK(inter.empty());
    CHECK(f.train_ids.size() + f.val_ids.size() == 100);
    all_val.insert(f.val_ids.begin(), f.val_ids.end());
  }
  CHECK(all_val.size() == 100);
  CHECK(std::set<std::string>(all_val.begin(), all_val.end()).size() == 100);

  const auto again = make_folds(m, 5, 0);
  for (int i = 0; i < 5; ++i) CHECK(again[i].val_ids == folds[i].val_ids);
  const auto other = make_folds(m, 5, 1);
  bool differs = false;
  for (int i = 0; i < 5; ++i) differs |= other[i].val_ids != folds[i].val_ids;
  CHECK(differs);
}

TEST_CASE("folds group clips by infant and reject impossible splits") {
  const DatasetManifest m = infants(6, 6, 6, 2);
  const auto folds = make_folds(m, 3, 4);
  for (const auto& f : folds) {
    for (const auto& e : m.entries) {
      const bool in_val = std::binary_search(f.val_ids.begin(), f.val_ids.end(), e.infant_id);
      const bool in_train = std::binary_search(f.train_ids.begin(), f.train_ids.end(), e.infant_id);
      CHECK(in_val != in_train);
    }
  }
  CHECK_THROWS_AS(make_folds(infants(5, 5, 2), 3, 0), DataError);
  CHECK_THROWS_AS(make_folds(m, 1, 0), UsageError);
  DatasetManifest two_labels = infants(3, 3, 3);
  two_labels.entries.push_back(two_labels.entries.front());
  two_labels.entries.back().clip_id = "x";
  two_labels.entries.back().label = GmsLabel::PR;
  CHECK_THROWS_AS(make_folds(two_labels, 3, 0), DataError);
}

TEST_CASE("MCC equals the covariance oracle on random matrices") {
  std::mt19937 rng(12);
  std::uniform_int_distribution<int> cell(0, 20), zero(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    Confusion c{};
    for (auto& row : c) {
      for (auto& v : row) v = zero(rng) == 0 ? 0 : cell(rng);
    }
    const double m = multiclass_mcc(c);
    CHECK(std::abs(m - mcc_oracle(c)) < 1e-9);
    CHECK(m >= -1.0);
    CHECK(m <= 1.0);
  }
}

TEST_CASE("metrics on a fixed confusion") {
  const Confusion c{{{5, 1, 0}, {2, 4, 1}, {0, 1, 6}}};
  const MetricReport r = compute_metrics(expand(c));
  CHECK(r.confusion == c);
  CHECK(r.accuracy == doctest::Approx(15.0 / 20.0));
  // (15 * 20 - (7*6 + 6*7 + 7*7)) / sqrt((400 - 134)(400 - 134))
  CHECK(r.mcc == doctest::Approx(167.0 / 266.0).epsilon(1e-12));
  CHECK(r.precision == doctest::Approx((5.0 / 7 + 4.0 / 6 + 6.0 / 7) / 3).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx((5.0 / 6 + 4.0 / 7 + 6.0 / 7) / 3).epsilon(1e-12));
  const MetricReport same = compute_metrics(c);
  CHECK(same.mcc == r.mcc);
  const auto j = to_json(r);
  CHECK(j.contains("confusion"));
  CHECK(j["accuracy"] == r.accuracy);
}

TEST_CASE("metric edge cases") {
  const Confusion perfect{{{4, 0, 0}, {0, 3, 0}, {0, 0, 5}}};
  const MetricReport p = compute_metrics(perfect);
  CHECK(p.accuracy == 1.0);
  CHECK(p.mcc == doctest::Approx(1.0));
  CHECK(p.precision == 1.0);
  CHECK(p.recall == 1.0);

  const Confusion single{{{5, 0, 0}, {5, 0, 0}, {5, 0, 0}}};
  const MetricReport s = compute_metrics(single);
  CHECK(s.mcc == 0.0);
  CHECK(s.accuracy == doctest::Approx(1.0 / 3));

  std::vector<std::string> warnings;
  const auto prev = set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  const Confusion no_pr{{{3, 1, 0}, {1, 3, 0}, {0, 0, 0}}};
  const MetricReport n = compute_metrics(no_pr);
  set_warning_sink(prev);
  CHECK(warnings.size() == 1);
  CHECK(n.precision == doctest::Approx((0.75 + 0.75 + 0.0) / 3));
  CHECK_THROWS_AS(compute_metrics(std::vector<std::pair<GmsLabel, GmsLabel>>{}), UsageError);

  std::mt19937 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Confusion c{};
    for (auto& row : c) {
      for (auto& v : row) v = rng() % 9;
    }
    c[0][0] += 1;
    const MetricReport r = compute_metrics(c);
    long trace = 0, sum = 0;
    for (int i = 0; i < 3; ++i) {
      trace += r.confusion[i][i];
      for (int k = 0; k < 3; ++k) sum += r.confusion[i][k];
    }
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(trace) / sum));
  }
}

TEST_CASE("mean and population std") {
  const std::vector<double> v{1, 2, 3, 4};
  const MeanStd m = mean_std(v);
  CHECK(m.mean == 2.5);
  CHECK(m.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(mean_std(std::vector<double>{0.7}).std == 0.0);
}

TEST_CASE("run_cv pools predictions across folds") {
  const DatasetManifest m = infants(4, 4, 4);
  std::map<std::string, GmsLabel> truth;
  for (const auto& e : m.entries) truth[e.clip_id] = e.label;
  // Stub: always predicts FM, except infant 0 which it gets right.
  PipelineConfig cfg;
  cfg.chunk_length = 4;
  cfg.crop_size = 32;
  const FoldTrainer stub = [&](const FoldSplit& fold, const PipelineConfig& c) {
    TrainResult r{TwoStreamModel(model_config_from(c)), {}, 0, {}, {}, {}};
    std::vector<std::pair<GmsLabel, GmsLabel>> pairs;
    for (const auto& e : m.entries) {
      if (!std::binary_search(fold.val_ids.begin(), fold.val_ids.end(), e.infant_id)) continue;
      VideoOutcome o;
      o.clip_id = e.clip_id;
      o.infant_id = e.infant_id;
      o.truth = e.label;
      o.predicted = e.infant_id == "inf0" ? e.label : GmsLabel::FM;
      r.val_outcomes.push_back(o);
      pairs.emplace_back(o.truth, o.predicted);
    }
    r.report = compute_metrics(pairs);
    return r;
  };
  const std::vector<std::uint64_t> seeds{0, 1};
  const CvReport report = run_cv(m, 2, seeds, cfg, stub);
  REQUIRE(report.seeds.size() == 2);
  std::vector<std::pair<GmsLabel, GmsLabel>> all;
  for (const auto& e : m.entries) all.emplace_back(e.label, e.infant_id == "inf0" ? e.label : GmsLabel::FM);
  const MetricReport direct = compute_metrics(all);
  for (const auto& s : report.seeds) {
    CHECK(s.outcomes.size() == m.entries.size());
    CHECK(s.pooled.confusion == direct.confusion);
    CHECK(s.pooled.mcc == doctest::Approx(direct.mcc));
  }
  CHECK(report.accuracy.std == 0.0);
  CHECK(report.mcc.std == 0.0);
  CHECK(report.accuracy.mean == doctest::Approx(direct.accuracy));
  const std::string csv = summary_csv({{"stub", report}});
  CHECK(csv.rfind("Method,Accuracy,MCC,Precision,Recall", 0) == 0);
  CHECK(csv.find("stub,") != std::string::npos);
  CHECK(csv.find("± 0.000") != std::string::npos);
}

TEST_CASE("training on a tiny cached dataset") {
  SmallData s;
  const ChunkDataset data = s.data();
  REQUIRE(data.clips().size() == 6);
  for (const auto& c : data.clips()) {
    CHECK(c.size == 32);
    CHECK(c.num_chunks == count_chunks(c.num_frames, 4, 4, true));
  }
  const auto folds = make_folds(s.manifest, 2, 0);

  SUBCASE("lazy chunks equal chunks built from the cached stages") {
    const Cache cache(s.dir / "cache");
    const auto frames = cache.get_frames(data.clips()[0].clip_id, Stage::adjusted,
                                         stage_config_hash(s.config, Stage::adjusted));
    const auto flows = cache.get_flows(data.clips()[0].clip_id, stage_config_hash(s.config, Stage::flow));
    REQUIRE(frames);
    REQUIRE(flows);
    const auto built = build_chunks(*frames, *flows, 4, 4, s.config.flow_clip_bound, true);
    const auto lazy = data.chunks(0);
    REQUIRE(built.size() == lazy.size());
    for (std::size_t i = 0; i < built.size(); ++i) {
      CHECK(test::same_pixels(built[i].x_s, lazy[i].x_s));
      CHECK(std::equal(built[i].x_t.values().begin(), built[i].x_t.values().end(), lazy[i].x_t.values().begin()));
      CHECK(built[i].padded == lazy[i].padded);
    }
  }
  SUBCASE("zero epochs returns the initial model with a report") {
    PipelineConfig cfg = s.config;
    cfg.epochs = 0;
    const TrainResult r = train_fold(folds[0], data, cfg);
    CHECK(r.loss_curve.empty());
    CHECK(r.best_epoch == 0);
    CHECK(r.val_outcomes.size() == data.clips_of(folds[0].val_ids).size());
    const TrainResult again = train_fold(folds[0], data, cfg);
    const auto& a = r.model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::equal(a[i].value.values().begin(), a[i].value.values().end(),
                       again.model.parameters()[i].value.values().begin()));
    }
    long total = 0;
    for (const auto& row : r.report.confusion) {
      for (long v : row) total += v;
    }
    CHECK(total == static_cast<long>(r.val_outcomes.size()));
  }
  SUBCASE("fixed seed gives identical loss curves") {
    std::vector<EpochLog> seen;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog& e) { seen.push_back(e); };
    const TrainResult a = train_fold(folds[1], data, s.config, hooks);
    const TrainResult b = train_fold(folds[1], data, s.config);
    REQUIRE(a.loss_curve.size() == 2);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.report.confusion == b.report.confusion);
    CHECK(seen.size() == 3);
    CHECK(seen.front().epoch == 0);
    for (double l : a.loss_curve) CHECK(std::isfinite(l));
  }
  SUBCASE("flip augmentation never changes the label") {
    PipelineConfig cfg = s.config;
    cfg.epochs = 1;
    int flipped = 0, kept = 0;
    TrainHooks hooks;
    hooks.on_sample = [&](std::size_t clip, const TemporalChunk& chunk, GmsLabel label, bool f) {
      CHECK(label == s.manifest.find(data.clips()[clip].clip_id)->label);
      CHECK(chunk.x_t.dim(0) == 8);
      (f ? flipped : kept) += 1;
    };
    train_fold(folds[0], data, cfg, hooks);
    CHECK(flipped > 0);
    CHECK(kept > 0);
  }
  SUBCASE("missing cache entries name the clip") {
    PipelineConfig other = s.config;
    other.alpha = 1.0;
    CHECK_THROWS_WITH_AS(ChunkDataset(s.manifest, other, Cache(s.dir / "cache")),
                         doctest::Contains(s.manifest.entries[0].clip_id.c_str()), DataError);
  }
}
