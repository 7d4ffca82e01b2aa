#include <gtest/gtest.h>

#include "avr/evaluation.hpp"
#include "avr/inference.hpp"
#include "eval_oracle.hpp"

using avr::BoundingBox;
using avr::Task;

namespace {

avr::ScoredRelationship rel(BoundingBox s, std::size_t cs, BoundingBox o, std::size_t co,
                            std::size_t p, std::size_t si = 0, std::size_t oi = 1) {
  return {si, oi, {s, cs, 1.0}, {o, co, 1.0}, p, {}, 0.0};
}

avr::GroundTruthTriplet gt(BoundingBox s, std::size_t cs, BoundingBox o, std::size_t co,
                           std::size_t p) {
  return {s, cs, o, co, p};
}

// Image holding ground truth for the given triplets, one object pair each.
avr::AnnotatedImage image_of(const std::string& id, const std::vector<avr::GroundTruthTriplet>& gts) {
  avr::AnnotatedImage img{id, avr::ImageDims(200, 200), {}, {}, std::nullopt};
  for (const auto& g : gts) {
    img.objects.push_back({g.subject_box, g.subject_label, 1.0});
    img.objects.push_back({g.object_box, g.object_label, 1.0});
    img.relationships.push_back({img.objects.size() - 2, g.predicate, img.objects.size() - 1});
  }
  return img;
}

const BoundingBox A(0, 0, 10, 10);
const BoundingBox B(50, 50, 10, 10);

}  // namespace

TEST(Evaluation, TaskNames) {
  EXPECT_EQ(avr::parse_task("predicate"), Task::kPredicate);
  EXPECT_EQ(avr::parse_task("phrase"), Task::kPhrase);
  EXPECT_EQ(avr::parse_task("relationship"), Task::kRelationship);
  EXPECT_EQ(avr::task_name(Task::kPhrase), "phrase");
  EXPECT_THROW(avr::parse_task("scene"), std::invalid_argument);
}

TEST(Evaluation, MatchPhrase) {
  const auto g = gt(A, 0, B, 1, 2);
  EXPECT_TRUE(avr::match_phrase(rel(A, 0, B, 1, 2), g));
  EXPECT_FALSE(avr::match_phrase(rel(A, 0, B, 1, 1), g));
  EXPECT_FALSE(avr::match_phrase(rel(BoundingBox(100, 100, 5, 5), 0, BoundingBox(110, 110, 5, 5), 1, 2), g));
  // union boxes (0,0,20,10) vs (0,0,10,10): IoU exactly 0.5
  const auto half = gt(BoundingBox(0, 0, 5, 10), 0, BoundingBox(5, 0, 5, 10), 1, 0);
  const auto wide = rel(BoundingBox(0, 0, 10, 10), 0, BoundingBox(10, 0, 10, 10), 1, 0);
  EXPECT_TRUE(avr::match_phrase(wide, half));
  EXPECT_FALSE(avr::match_phrase(wide, half, 0.51));
}

TEST(Evaluation, MatchRelationship) {
  const auto g = gt(A, 0, B, 1, 2);
  EXPECT_TRUE(avr::match_relationship(rel(A, 0, B, 1, 2), g));
  // subject IoU 0.9 (width 10 vs 9), object IoU 0.2
  const BoundingBox s09(0, 0, 9, 10);
  const BoundingBox o02(50, 50, 2, 10);
  EXPECT_NEAR(avr::iou(s09, A), 0.9, 1e-12);
  EXPECT_NEAR(avr::iou(o02, B), 0.2, 1e-12);
  EXPECT_FALSE(avr::match_relationship(rel(s09, 0, o02, 1, 2), g));
  // both overlaps at 0.6
  const BoundingBox s06(0, 0, 6, 10);
  const BoundingBox o06(50, 50, 10, 6);
  EXPECT_NEAR(avr::iou(s06, A), 0.6, 1e-12);
  EXPECT_TRUE(avr::match_relationship(rel(s06, 0, o06, 1, 2), g));
  EXPECT_FALSE(avr::match_relationship(rel(s06, 1, o06, 1, 2), g));
}

TEST(Evaluation, RecallExamples) {
  const std::vector<avr::GroundTruthTriplet> gts{gt(A, 0, B, 1, 0), gt(B, 1, A, 0, 1),
                                                 gt(A, 2, B, 3, 2)};
  const auto img = image_of("i", gts);
  avr::EvalConfig cfg;
  cfg.n_values = {1, 2, 50};

  // verbatim echo
  const auto echo = avr::echo_ground_truth(img);
  auto report = avr::recall_at_n({echo}, {img}, cfg);
  EXPECT_NEAR(report.recall(50), 1.0, 1e-15);
  EXPECT_NEAR(report.recall(1), 1.0 / 3.0, 1e-15);

  // empty predictions
  report = avr::recall_at_n({}, {img}, cfg);
  EXPECT_EQ(report.recall(50), 0.0);

  // exactly two of three matched
  avr::PredictionSet two{"i", {rel(A, 0, B, 1, 0), rel(A, 0, B, 1, 3), rel(A, 2, B, 3, 2)}, {}};
  report = avr::recall_at_n({two}, {img}, cfg);
  EXPECT_NEAR(report.recall(50), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(report.rows.back().matched, 2u);
  EXPECT_EQ(report.rows.back().total, 3u);
}

TEST(Evaluation, EachGroundTruthMatchedOnce) {
  const auto img = image_of("i", {gt(A, 0, B, 1, 0)});
  avr::PredictionSet dup{"i", {rel(A, 0, B, 1, 0), rel(A, 0, B, 1, 0)}, {}};
  avr::EvalConfig cfg;
  const auto report = avr::recall_at_n({dup}, {img}, cfg);
  EXPECT_EQ(report.rows[0].matched, 1u);
  EXPECT_EQ(report.diagnostics[0].matches.size(), 1u);
}

TEST(Evaluation, GreedyPrefersHighestOverlap) {
  // two identical-label gts; the prediction overlaps the second one better
  const BoundingBox near_b(51, 50, 10, 10);
  const auto img = image_of("i", {gt(A, 0, near_b, 1, 0), gt(A, 0, B, 1, 0)});
  avr::PredictionSet one{"i", {rel(A, 0, B, 1, 0)}, {}};
  const auto m = avr::match_image(one, avr::ground_truth_triplets(img), Task::kRelationship, 10, 0.5);
  ASSERT_EQ(m.matches.size(), 1u);
  EXPECT_EQ(m.matches[0].ground_truth_index, 1u);
}

TEST(Evaluation, MacroAggregation) {
  const auto i1 = image_of("a", {gt(A, 0, B, 1, 0)});
  const auto i2 = image_of("b", {gt(A, 0, B, 1, 0), gt(B, 0, A, 1, 0), gt(A, 1, B, 0, 0)});
  avr::PredictionSet p1{"a", {rel(A, 0, B, 1, 0)}, {}};
  avr::EvalConfig cfg;
  cfg.aggregation = avr::Aggregation::kMacro;
  EXPECT_NEAR(avr::recall_at_n({p1}, {i1, i2}, cfg).recall(50), 0.5, 1e-15);
  cfg.aggregation = avr::Aggregation::kMicro;
  EXPECT_NEAR(avr::recall_at_n({p1}, {i1, i2}, cfg).recall(50), 0.25, 1e-15);
}

TEST(Evaluation, ConfigValidation) {
  avr::EvalConfig cfg;
  cfg.n_values = {100, 50};
  EXPECT_THROW(avr::recall_at_n({}, {}, cfg), std::invalid_argument);
  cfg.n_values = {0};
  EXPECT_THROW(avr::recall_at_n({}, {}, cfg), std::invalid_argument);
  cfg.n_values = {50};
  cfg.iou_threshold = 0.0;
  EXPECT_THROW(avr::recall_at_n({}, {}, cfg), std::invalid_argument);
  EXPECT_THROW(avr::match_image({}, {}, Task::kPhrase, 0, 0.5), std::invalid_argument);
}

TEST(Evaluation, ReportFormat) {
  const auto img = image_of("i", {gt(A, 0, B, 1, 0), gt(B, 1, A, 0, 1)});
  avr::PredictionSet p{"i", {rel(A, 0, B, 1, 0)}, {}};
  avr::EvalConfig cfg;
  cfg.task = Task::kPhrase;
  cfg.per_pair_k = 3;
  const auto text = avr::format_report(avr::recall_at_n({p}, {img}, cfg));
  EXPECT_EQ(text,
            "task\tK\tN\trecall\tmatched\ttotal\n"
            "phrase\t3\t50\t0.5000\t1\t2\n"
            "phrase\t3\t100\t0.5000\t1\t2\n");
}

namespace {

oracle::Box to_oracle(const BoundingBox& b) { return {b.x(), b.y(), b.right(), b.bottom()}; }

oracle::Triplet to_oracle(const avr::ScoredRelationship& r) {
  return {to_oracle(r.subject.box), static_cast<int>(r.subject.class_index), to_oracle(r.object.box),
          static_cast<int>(r.object.class_index), static_cast<int>(r.predicate_index)};
}

oracle::Triplet to_oracle(const avr::GroundTruthTriplet& g) {
  return {to_oracle(g.subject_box), static_cast<int>(g.subject_label), to_oracle(g.object_box),
          static_cast<int>(g.object_label), static_cast<int>(g.predicate)};
}

}  // namespace

TEST(EvaluationProperty, AgreesWithOracleAndMonotone) {
  avr::Rng rng(31);
  auto box = [&] {
    return BoundingBox(rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(4, 12), rng.uniform(4, 12));
  };
  auto jitter = [&](const BoundingBox& b) {
    return BoundingBox(b.x() + rng.uniform(0, 3), b.y() + rng.uniform(0, 3), b.w() * rng.uniform(0.7, 1.3),
                       b.h() * rng.uniform(0.7, 1.3));
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<avr::GroundTruthTriplet> gts;
    for (std::size_t i = 0, n = 1 + rng.below(5); i < n; ++i) {
      gts.push_back(gt(box(), rng.below(2), box(), rng.below(2), rng.below(2)));
    }
    const auto img = image_of("x", gts);
    avr::PredictionSet preds{"x", {}, {}};
    for (std::size_t i = 0, n = rng.below(21); i < n; ++i) {
      const auto& g = gts[rng.below(gts.size())];
      preds.relationships.push_back(rel(jitter(g.subject_box), rng.below(4) ? g.subject_label : 1 - g.subject_label,
                                        jitter(g.object_box), g.object_label,
                                        rng.below(4) ? g.predicate : 1 - g.predicate));
    }
    std::vector<oracle::Triplet> o_preds;
    for (const auto& r : preds.relationships) o_preds.push_back(to_oracle(r));
    std::vector<oracle::Triplet> o_gts;
    for (const auto& g : avr::ground_truth_triplets(img)) o_gts.push_back(to_oracle(g));

    for (auto [task, kind] : {std::pair{Task::kPhrase, oracle::Kind::kPhrase},
                              std::pair{Task::kRelationship, oracle::Kind::kRelationship},
                              std::pair{Task::kPredicate, oracle::Kind::kPredicate}}) {
      avr::EvalConfig cfg;
      cfg.task = task;
      cfg.n_values = {1, 3, 5, 10, 20};
      const auto report = avr::recall_at_n({preds}, {img}, cfg);
      double prev = -1.0;
      for (const auto& row : report.rows) {
        EXPECT_EQ(row.matched, oracle::matched(o_preds, o_gts, kind, row.n, 0.5));
        EXPECT_GE(row.recall, prev);
        prev = row.recall;
      }
      // lowering the threshold never lowers recall
      avr::EvalConfig loose = cfg;
      loose.iou_threshold = 0.3;
      const auto looser = avr::recall_at_n({preds}, {img}, loose);
      for (std::size_t i = 0; i < report.rows.size(); ++i) {
        EXPECT_GE(looser.rows[i].recall, report.rows[i].recall);
      }
    }
  }
}
