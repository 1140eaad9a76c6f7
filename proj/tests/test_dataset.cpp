#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gib/dataset.hpp"
#include "oracles.hpp"

using namespace gib;

namespace {

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

Trajectory make(const std::string& id, int T, int s = 3, int a = 2) {
  Trajectory t;
  t.id = id;
  t.states = RowMatrix::Constant(T, s, 0.25);
  t.actions = RowMatrix::Constant(T, a, -1.5);
  return t;
}

}  // namespace

TEST(Dataset, JsonlRoundTripIsExact) {
  const auto d = oracle::random_dataset(3, 4, 5, 2, 1);
  const auto path = tmp("gib_ds.jsonl");
  save_dataset(d, path);
  const auto r = load_dataset(path);
  ASSERT_EQ(r.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(r[i].id, d[i].id);
    EXPECT_EQ(r[i].states, d[i].states);
    EXPECT_EQ(r[i].actions, d[i].actions);
  }
  EXPECT_EQ(serialize_dataset(r), serialize_dataset(d));
}

TEST(Dataset, TruthSurvivesLabeledRoundTrip) {
  LabeledDataset ld;
  ld.data = Dataset({make("a", 4), make("b", 5)});
  ld.truth = {TruthLabel{false, {true, false}, {2}}, std::nullopt};
  const auto path = tmp("gib_ds_truth.jsonl");
  save_dataset(ld, path);
  const auto r = load_labeled_dataset(path);
  ASSERT_TRUE(r.truth[0].has_value());
  EXPECT_FALSE(r.truth[0]->good);
  EXPECT_EQ(r.truth[0]->boundaries, std::vector<int>{2});
  EXPECT_FALSE(r.truth[1].has_value());
}

TEST(Dataset, ValidationErrors) {
  EXPECT_THROW(Dataset(std::vector<Trajectory>{}), ValidationError);
  EXPECT_THROW(Dataset({make("a", 4), make("a", 4)}), ValidationError);
  EXPECT_THROW(Dataset({make("a", 1)}), ValidationError);
  EXPECT_THROW(Dataset({make("a,b", 3)}), ValidationError);
  EXPECT_THROW(Dataset({make("a", 3), make("b", 3, 4)}), ValidationError);
  auto t = make("a", 3);
  t.actions = RowMatrix::Zero(2, 2);
  EXPECT_THROW(Dataset({t}), ValidationError);
  t = make("a", 3);
  t.states(1, 1) = std::nan("");
  EXPECT_THROW(Dataset({t}), ValidationError);
}

TEST(Dataset, MalformedFilesAreRejected) {
  const auto path = tmp("gib_bad.jsonl");
  csv::write_file(path, "{\"id\":\"a\",\"states\":[[1,2],[3]],\"actions\":[[1],[2]]}\n");
  EXPECT_THROW(load_dataset(path), Error);
  csv::write_file(path, "not json\n");
  EXPECT_THROW(load_dataset(path), ParseError);
  EXPECT_THROW(load_dataset("/nonexistent/x.jsonl"), IoError);
}

TEST(Dataset, SubsetKeepsOrder) {
  const Dataset d({make("a", 3), make("b", 4), make("c", 5)});
  const auto s = d.subset({2, 0});
  EXPECT_EQ(s[0].id, "c");
  EXPECT_EQ(s[1].id, "a");
  EXPECT_EQ(d.total_steps(), 12u);
  EXPECT_EQ(d.index_of("b"), 1u);
  EXPECT_THROW(d.index_of("zz"), ValidationError);
}

TEST(Segmentation, SegmentsPartitionTimeline) {
  const SubtaskSegmentation s("a", 10, {3, 7}, 3);
  EXPECT_EQ(s.segment(0), std::make_pair(0, 3));
  EXPECT_EQ(s.segment(1), std::make_pair(3, 7));
  EXPECT_EQ(s.segment(2), std::make_pair(7, 10));
  for (int t = 0; t < 10; ++t) {
    const int j = s.subtask_of(t);
    EXPECT_GE(t, s.segment(j).first);
    EXPECT_LT(t, s.segment(j).second);
  }
  EXPECT_FALSE(s.present(3));
  const SubtaskSegmentation short_one("b", 10, {4}, 3);
  EXPECT_EQ(short_one.segment_count(), 2);
  EXPECT_FALSE(short_one.present(2));
}

TEST(Segmentation, InvalidBoundaries) {
  EXPECT_THROW(SubtaskSegmentation("a", 10, {0}, 3), ValidationError);
  EXPECT_THROW(SubtaskSegmentation("a", 10, {10}, 3), ValidationError);
  EXPECT_THROW(SubtaskSegmentation("a", 10, {5, 5}, 3), ValidationError);
  EXPECT_THROW(SubtaskSegmentation("a", 10, {6, 2}, 3), ValidationError);
  EXPECT_THROW(SubtaskSegmentation("a", 10, {2, 4, 6}, 3), ValidationError);
  EXPECT_THROW(SubtaskSegmentation("a", 10, {}, 0), ValidationError);
}

TEST(Mask, ValidateEnforcesBudget) {
  SubtaskMask m;
  m.rho = 1;
  m.entries = {{"a", 0, true, 1.0, 0}, {"a", 1, true, 0.5, 1}, {"a", 2, false, 0.0, 0}};
  EXPECT_NO_THROW(m.validate());
  m.entries[1].beta = 0;
  EXPECT_THROW(m.validate(), ValidationError);
  m.entries[1].beta = 1;
  m.entries[2].beta = 1;
  EXPECT_THROW(m.validate(), ValidationError);
  m.entries[2].beta = 0;
  m.entries.push_back({"a", 0, true, 1.0, 1});
  EXPECT_THROW(m.validate(), ValidationError);
  m.entries.pop_back();
  m.rho = 3;
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Mask, CsvRoundTripRecoversRho) {
  SubtaskMask m;
  m.rho = 2;
  m.method = "lof";
  m.entries = {{"b", 0, true, 3.0, 0}, {"a", 1, true, 2.5, 0}, {"a", 0, true, 0.5, 1}, {"b", 1, false, 0.0, 0}};
  const auto path = tmp("gib_mask.csv");
  save_mask(m, path);
  const auto r = load_mask(path);
  EXPECT_EQ(r.rho, 2);
  EXPECT_EQ(r.method, "lof");
  EXPECT_EQ(r.entries.front().trajectory_id, "a");  // sorted on write
  EXPECT_EQ(serialize_mask(r), serialize_mask(m));
  EXPECT_EQ(r.beta("b", 1), 0);
  EXPECT_EQ(r.beta("a", 0), 1);
}
