#include <gtest/gtest.h>

#include "looprune/dataset.hpp"
#include "support.hpp"

namespace looprune {
namespace {

TEST(ParseRecord, TextIsSegmentedSentencesAreVerbatim) {
  const auto r = parse_record(
      R"({"id":"q1","question":"Who?","passages":[{"doc_id":"a","text":"Dr. X came. Y left."},)"
      R"({"sentences":["one ","two"],"labels":[0,1]}],"answers":["X"]})",
      1);
  EXPECT_EQ(r.id, "q1");
  ASSERT_EQ(r.passages.size(), 2u);
  EXPECT_EQ(r.passages[0].size(), 2u);
  EXPECT_FALSE(r.passages[0].labels);
  EXPECT_EQ(r.passages[1].doc_id, "p1");
  EXPECT_EQ(r.passages[1].sentences[0].text, "one ");
  EXPECT_EQ(*r.passages[1].labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(r.answers, (std::vector<std::string>{"X"}));
}

TEST(ParseRecord, ErrorsCarryLineNumbers) {
  const std::vector<std::string> bad = {
      "not json",
      R"({"question":"q","passages":[]})",
      R"({"id":"x","question":"q","passages":[{"text":"A. B.","labels":[1]}]})",
      R"({"id":"x","question":"q","passages":[{"sentences":["a"],"labels":[2]}]})",
      R"({"id":"x","question":"q","passages":[{"text":"A.","sentences":["A."]}]})",
      R"({"id":"x","question":"q","passages":[{"text":""}]})",
      R"({"id":"x","question":"","passages":[]})",
  };
  for (const auto& line : bad) {
    try {
      parse_record(line, 42);
      FAIL() << line;
    } catch (const DatasetError& e) {
      EXPECT_EQ(e.line(), 42u);
      EXPECT_EQ(std::string(e.what()).rfind("line 42: ", 0), 0u) << e.what();
    }
  }
}

TEST(Dataset, FileRoundTrip) {
  const auto dir = testing::temp_dir("dataset");
  testing::write_file(dir / "in.jsonl",
                      R"({"id":"a","question":"Q?","passages":[{"doc_id":"d","text":"One. Two."}],"answers":[]})"
                      "\n\n"
                      R"({"id":"b","question":"R?","passages":[{"sentences":["x"],"labels":[1]}]})"
                      "\n");
  const auto recs = read_dataset((dir / "in.jsonl").string());
  ASSERT_EQ(recs.size(), 2u);
  write_dataset((dir / "out.jsonl").string(), recs);
  const auto again = read_dataset((dir / "out.jsonl").string());
  ASSERT_EQ(again.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(serialize_record(again[i]), serialize_record(recs[i]));
  EXPECT_EQ(to_training_examples(recs).size(), 1u);
}

TEST(Dataset, BadLineNumberIsReported) {
  const auto dir = testing::temp_dir("dataset_bad");
  testing::write_file(dir / "in.jsonl",
                      R"({"id":"a","question":"Q?","passages":[]})"
                      "\n\n{oops\n");
  try {
    read_dataset((dir / "in.jsonl").string());
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(PruneRecord, RoundTrip) {
  PruneRecord r;
  r.id = "q";
  r.kept = {{0, 1}, {2, 0}};
  r.compressed_text = "a\nb";
  r.ratio = 0.25;
  r.latency_seconds = 0.5;
  r.token_counter = "whitespace";
  r.passages = {{false, 1.5, {0.1, 0.2}, 0.1}, {true, -3.0, {}, std::nullopt}};
  const auto back = parse_prune_record(serialize_prune_record(r), 1);
  EXPECT_EQ(back.kept, r.kept);
  EXPECT_EQ(back.compressed_text, r.compressed_text);
  EXPECT_EQ(back.ratio, r.ratio);
  EXPECT_EQ(back.latency_seconds, r.latency_seconds);
  ASSERT_EQ(back.passages.size(), 2u);
  EXPECT_EQ(back.passages[0].deltas, r.passages[0].deltas);
  EXPECT_EQ(back.passages[0].tau, r.passages[0].tau);
  EXPECT_TRUE(back.passages[1].gated);
  EXPECT_FALSE(back.passages[1].tau);
  EXPECT_EQ(serialize_prune_record(back), serialize_prune_record(r));

  r.latency_seconds.reset();
  EXPECT_EQ(serialize_prune_record(r).find("latency"), std::string::npos);
}

TEST(PruneRecord, RejectsUnsortedKept) {
  EXPECT_THROW(parse_prune_record(R"({"id":"q","kept":[[1,0],[0,3]],"compressed_text":"","ratio":0})", 5),
               DatasetError);
  EXPECT_THROW(parse_prune_record(R"({"id":"q","kept":[[0,0]],"compressed_text":"","ratio":"x"})", 5),
               DatasetError);
}

}  // namespace
}  // namespace looprune
