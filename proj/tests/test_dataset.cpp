#include <gtest/gtest.h>

#include <string>

#include "avr/dataset.hpp"
#include "avr/error.hpp"

namespace {

const char* kSmall = R"(avr-annotations 1
objects 3
cat
mat
traffic light
predicates 2
on
near
images 2
image a 100 80
objects 2
10 10 20 20 0
30 40 50 30 1
relationships 1
0 0 1
end
# second image has no relationships
image b 64 64
objects 2
0 0 10 10 2
5 5 10 10 0 0.5
relationships 0
detections 1
1 1 9 9 2 0.75
end
)";

std::string replace(std::string text, const std::string& from, const std::string& to) {
  text.replace(text.find(from), from.size(), to);
  return text;
}

}  // namespace

TEST(Dataset, ParsesSmallFile) {
  const auto d = avr::parse_annotations(kSmall);
  EXPECT_EQ(d.vocab.num_objects(), 3u);
  EXPECT_EQ(d.vocab.num_predicates(), 2u);
  EXPECT_EQ(d.vocab.object_index("traffic light"), 2u);
  ASSERT_EQ(d.images.size(), 2u);
  EXPECT_EQ(d.images[0].relationships, (std::vector<avr::Relationship>{{0, 0, 1}}));
  EXPECT_TRUE(d.images[1].relationships.empty());
  EXPECT_EQ(d.images[1].objects[1].confidence, 0.5);
  ASSERT_TRUE(d.images[1].detections.has_value());
  EXPECT_EQ(d.images[1].detections->at(0).confidence, 0.75);
  EXPECT_FALSE(d.images[0].detections.has_value());
}

TEST(Dataset, FormatRoundTrip) {
  const auto d = avr::parse_annotations(kSmall);
  const auto text = avr::format_annotations(d);
  const auto back = avr::parse_annotations(text);
  EXPECT_EQ(back, d);
  EXPECT_EQ(avr::format_annotations(back), text);
}

TEST(Dataset, RejectsDanglingIndex) {
  const auto bad = replace(kSmall, "0 0 1\n", "0 0 2\n");
  try {
    avr::parse_annotations(bad);
    FAIL() << "expected a dangling index error";
  } catch (const avr::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("dangling"), std::string::npos) << e.what();
  }
  EXPECT_THROW(avr::parse_annotations(replace(kSmall, "0 0 1\n", "0 5 1\n")), avr::DataError);
  EXPECT_THROW(avr::parse_annotations(replace(kSmall, "0 0 1\n", "1 0 1\n")), avr::DataError);
}

TEST(Dataset, RejectsDuplicateImageId) {
  EXPECT_THROW(avr::parse_annotations(replace(kSmall, "image b", "image a")), avr::DataError);
}

TEST(Dataset, ParseErrorsCarryLineNumbers) {
  try {
    avr::parse_annotations(replace(kSmall, "30 40 50 30 1", "30 40 fifty 30 1"));
    FAIL();
  } catch (const avr::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 13"), std::string::npos) << e.what();
  }
  EXPECT_THROW(avr::parse_annotations(replace(kSmall, "30 40 50 30 1", "30 40 0 30 1")),
               avr::DataError);
  EXPECT_THROW(avr::parse_annotations(replace(kSmall, "avr-annotations 1", "avr-annotations 9")),
               avr::DataError);
  EXPECT_THROW(avr::parse_annotations(replace(kSmall, "1 1 9 9 2 0.75", "1 1 9 9 2 1.5")),
               avr::DataError);
}

TEST(Dataset, EmbeddingsExactAndAveraged) {
  const avr::Vocabulary vocab({"cat", "traffic light"}, {"on"});
  const std::string text =
      "cat 1 0 0\n"
      "traffic 2 4 -1\n"
      "light 0 2 3\n"
      "unused 9 9 9\n";
  const auto table = avr::parse_embeddings(text, vocab);
  EXPECT_EQ(table.dimension, 3u);
  EXPECT_EQ(table.at("cat"), (avr::Vector{1, 0, 0}));
  EXPECT_EQ(table.at("traffic light"), (avr::Vector{1, 3, 1}));
}

TEST(Dataset, EmbeddingsMissingLabelNamed) {
  const avr::Vocabulary vocab({"cat", "dog", "fish"}, {"on"});
  try {
    avr::parse_embeddings("cat 1 2\n", vocab);
    FAIL();
  } catch (const avr::DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dog"), std::string::npos);
    EXPECT_NE(msg.find("fish"), std::string::npos);
  }
  EXPECT_THROW(avr::parse_embeddings("cat 1 2\ndog 1 2 3\nfish 1 1\n", vocab), avr::DataError);
}

TEST(Dataset, FeatureBundleRoundTrip) {
  avr::FeatureBundle b;
  b.visual_dim = 2;
  b.global_dim = 3;
  avr::ImageFeatures f;
  f.global = {1.5f, -2.0f, 0.25f};
  f.pairs[{avr::PairSource::kGroundTruth, 0, 1}] = {0.5f, 1.0f};
  f.pairs[{avr::PairSource::kDetection, 1, 0}] = {-3.0f, 7.0f};
  b.images["img"] = f;
  const auto bytes = avr::serialize_features(b);
  EXPECT_EQ(bytes.substr(0, 8), std::string("AVRFEAT\0", 8));
  const auto back = avr::deserialize_features(bytes);
  EXPECT_EQ(back, b);
  EXPECT_THROW(avr::deserialize_features(bytes.substr(0, bytes.size() - 1)), avr::DataError);
  EXPECT_THROW(avr::deserialize_features("garbage"), avr::DataError);
  EXPECT_THROW(b.pair("img", {avr::PairSource::kGroundTruth, 1, 0}), avr::DataError);
  EXPECT_THROW(b.image("other"), avr::DataError);
}

TEST(Dataset, SynthIsDeterministic) {
  avr::SynthConfig cfg;
  cfg.seed = 5;
  cfg.n_images = 12;
  for (auto rule : {avr::SynthRule::kSpatialOnly, avr::SynthRule::kSalient, avr::SynthRule::kPairPrior}) {
    cfg.rule = rule;
    const auto a = avr::synth_dataset(cfg);
    const auto b = avr::synth_dataset(cfg);
    EXPECT_EQ(avr::format_annotations(a.dataset), avr::format_annotations(b.dataset));
    EXPECT_EQ(avr::serialize_features(a.features), avr::serialize_features(b.features));
    EXPECT_EQ(avr::format_embeddings(a.embeddings), avr::format_embeddings(b.embeddings));
  }
  cfg.seed = 6;
  cfg.rule = avr::SynthRule::kSpatialOnly;
  auto c = avr::synth_dataset(cfg);
  cfg.seed = 5;
  EXPECT_NE(avr::format_annotations(c.dataset), avr::format_annotations(avr::synth_dataset(cfg).dataset));
}

TEST(Dataset, SynthEmptyAndCounts) {
  avr::SynthConfig cfg;
  cfg.n_images = 0;
  const auto empty = avr::synth_dataset(cfg);
  EXPECT_TRUE(empty.dataset.images.empty());
  EXPECT_NO_THROW(avr::validate(empty.dataset));

  cfg.n_images = 10;
  const auto d = avr::synth_dataset(cfg);
  EXPECT_EQ(d.dataset.images.size(), 10u);
  EXPECT_EQ(d.dataset.vocab.num_objects(), 6u);
  EXPECT_EQ(d.dataset.vocab.num_predicates(), 4u);
}

TEST(Dataset, SynthRoundTripThroughText) {
  avr::SynthConfig cfg;
  cfg.seed = 17;
  cfg.n_images = 20;
  cfg.rule = avr::SynthRule::kSalient;
  const auto d = avr::synth_dataset(cfg);
  EXPECT_EQ(avr::parse_annotations(avr::format_annotations(d.dataset)), d.dataset);
  EXPECT_EQ(avr::deserialize_features(avr::serialize_features(d.features)), d.features);
  EXPECT_EQ(avr::parse_embeddings(avr::format_embeddings(d.embeddings), d.dataset.vocab),
            d.embeddings);
}

TEST(Dataset, SpatialRuleIsGeometric) {
  // Every annotated predicate must be recoverable from the box offset alone.
  avr::SynthConfig cfg;
  cfg.seed = 3;
  cfg.n_images = 40;
  const auto d = avr::synth_dataset(cfg);
  const double pi = 3.14159265358979323846;
  std::size_t checked = 0;
  for (const auto& img : d.dataset.images) {
    for (const auto& rel : img.relationships) {
      const auto& s = img.objects[rel.subject].box;
      const auto& o = img.objects[rel.object].box;
      const double theta = std::atan2((s.y() - o.y()) / img.dims.height,
                                      (s.x() - o.x()) / img.dims.width) + pi;
      const auto sector = static_cast<std::size_t>(theta / (pi / 2.0)) % 4;
      EXPECT_EQ(sector, rel.predicate);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(Dataset, SplitKeepsOrder) {
  avr::SynthConfig cfg;
  cfg.n_images = 9;
  const auto d = avr::synth_dataset(cfg);
  const auto [train, test] = avr::split_dataset(d, 3);
  EXPECT_EQ(train.dataset.images.size(), 6u);
  ASSERT_EQ(test.dataset.images.size(), 3u);
  EXPECT_EQ(test.dataset.images[0].image_id, "img6");
  EXPECT_EQ(test.features.images.size(), 3u);
  EXPECT_EQ(train.dataset.vocab, d.dataset.vocab);
}

TEST(Dataset, VocabularyRejectsDuplicates) {
  EXPECT_THROW(avr::Vocabulary({"a", "a"}, {"p"}), avr::DataError);
  EXPECT_THROW(avr::Vocabulary({"a"}, {}), avr::DataError);
  EXPECT_NE(avr::Vocabulary({"a", "b"}, {"p"}).hash(), avr::Vocabulary({"b", "a"}, {"p"}).hash());
}
