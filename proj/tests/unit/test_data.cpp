#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "intact/data.hpp"
#include "intact/error.hpp"

using namespace intact;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> image_blob(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x803);
  put_u32(b, n);
  put_u32(b, h);
  put_u32(b, w);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

std::vector<std::uint8_t> label_blob(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  put_u32(b, 0x801);
  put_u32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

// Ten classes, `per` samples each, 2x2 images whose pixels encode
// (class, index) so partitions can be traced.
DatasetPair synthetic(int per) {
  DatasetPair d;
  for (Dataset* s : {&d.train, &d.test}) {
    const int n = 10 * per;
    s->inputs.resize(n, 4);
    s->labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s->labels[static_cast<std::size_t>(i)] = i % 10;
      s->inputs.row(i) << (i % 10) / 10.0, i / 1000.0, 0.0, 1.0;
    }
  }
  return d;
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("idx decode") {
  const std::vector<std::uint8_t> px = {0, 1, 2, 3, 250, 251, 252, 255};
  const IdxTensor t = parse_idx(image_blob(2, 2, 2, px));
  CHECK(t.dims == std::vector<std::uint32_t>{2, 2, 2});
  CHECK(t.data == px);

  const std::vector<std::uint8_t> labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const IdxTensor l = parse_idx(label_blob(labels));
  CHECK(l.dims == std::vector<std::uint32_t>{10});
  CHECK(l.data == labels);

  auto truncated = image_blob(2, 2, 2, px);
  truncated.pop_back();
  try {
    parse_idx(truncated);
    FAIL("expected TruncatedFile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TruncatedFile);
  }
  CHECK_THROWS_AS(parse_idx(std::vector<std::uint8_t>{0, 0}), Error);
  auto bad = label_blob(labels);
  bad[2] = 0x0d;  // float payload type
  try {
    parse_idx(bad);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadMagic);
  }
}

TEST_CASE("idx dataset files are normalized") {
  const auto dir = std::filesystem::temp_directory_path() / "intact_idx_test";
  std::filesystem::create_directories(dir / "toy");
  const std::vector<std::uint8_t> px = {0, 51, 255, 102, 0, 0, 0, 255};
  for (const char* split : {"train", "test"}) {
    write_file(dir / "toy" / (std::string(split) + "-images.idx"), image_blob(2, 2, 2, px));
    write_file(dir / "toy" / (std::string(split) + "-labels.idx"), label_blob({3, 7}));
  }
  const DatasetPair d = load_dataset_dir(dir, "toy");
  CHECK(d.train.size() == 2);
  CHECK(d.train.inputs.cols() == 4);
  CHECK(d.train.inputs(0, 1) == doctest::Approx(0.2));
  CHECK(d.train.inputs(0, 2) == 1.0);
  CHECK(d.train.inputs.minCoeff() >= 0.0);
  CHECK(d.train.inputs.maxCoeff() <= 1.0);
  CHECK(d.test.labels == std::vector<int>{3, 7});

  write_file(dir / "toy" / "test-labels.idx", label_blob({3}));
  CHECK_THROWS_AS(load_dataset_dir(dir, "toy"), Error);
  try {
    load_dataset_dir(dir, "absent");
    FAIL("expected DataMissing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DataMissing);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("split streams") {
  const DatasetPair d = synthetic(7);
  const TaskStream cil = make_split_stream(d, Scenario::Cil, 5, 3);
  const TaskStream dil = make_split_stream(d, Scenario::Dil, 5, 3);
  REQUIRE(cil.tasks.size() == 5);
  CHECK(cil.num_outputs == 10);
  CHECK(dil.num_outputs == 2);
  std::set<int> seen;
  for (std::size_t t = 0; t < 5; ++t) {
    const int a = static_cast<int>(2 * t), b = a + 1;
    CHECK(cil.tasks[t].classes == std::vector<int>{a, b});
    CHECK(cil.tasks[t].train.size() == 14);
    for (int y : cil.tasks[t].train.labels) {
      CHECK((y == a || y == b));
      seen.insert(y);
    }
    for (int y : dil.tasks[t].train.labels) CHECK((y == 0 || y == 1));
    // Same partition and order; only the labels differ.
    CHECK(cil.tasks[t].train.inputs == dil.tasks[t].train.inputs);
    for (std::size_t i = 0; i < cil.tasks[t].train.labels.size(); ++i)
      CHECK(dil.tasks[t].train.labels[i] == cil.tasks[t].train.labels[i] - a);
  }
  CHECK(seen.size() == 10);

  const auto act = cil.active_classes(1);
  CHECK(std::count(act.begin(), act.end(), true) == 4);
  CHECK(act[3]);
  CHECK(!act[4]);
  CHECK(dil.active_classes(4) == std::vector<bool>{true, true});

  const TaskStream again = make_split_stream(d, Scenario::Cil, 5, 3);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(again.tasks[t].train.inputs == cil.tasks[t].train.inputs);
    CHECK(again.tasks[t].train.labels == cil.tasks[t].train.labels);
  }
  CHECK_THROWS_AS(make_split_stream(d, Scenario::Cil, 3, 3), Error);

  TaskStream small = cil;
  truncate_stream(small, 5, 2);
  CHECK(small.tasks[0].train.size() == 5);
  CHECK(small.tasks[0].test.size() == 2);
  CHECK(small.tasks[0].train.labels.size() == 5);
}

TEST_CASE("gaussian toy stream") {
  CHECK(gaussian_target(0.0) == 1.0);
  CHECK(gaussian_target(3.0) == std::exp(-4.5));
  CHECK(gaussian_target(-3.0) == std::exp(-4.5));

  const TaskStream s = gaussian_toy_stream(3, 100, 0.01, 5);
  REQUIRE(s.tasks.size() == 3);
  CHECK(s.scenario == Scenario::Regression);
  CHECK(s.num_outputs == 1);
  const double bounds[4] = {-3.0, -1.0, 1.0, 3.0};
  for (std::size_t t = 0; t < 3; ++t) {
    const Dataset& tr = s.tasks[t].train;
    CHECK(tr.size() == 100);
    CHECK(tr.regression());
    CHECK(tr.inputs.minCoeff() >= bounds[t]);
    CHECK(tr.inputs.maxCoeff() <= bounds[t + 1]);
    if (t < 2) CHECK(tr.inputs.maxCoeff() < bounds[t + 1]);
    const Dataset& te = s.tasks[t].test;
    for (Eigen::Index i = 0; i < te.size(); ++i)
      CHECK(te.targets(i, 0) == gaussian_target(te.inputs(i, 0)));
  }
  CHECK(s.tasks[2].test.inputs.maxCoeff() == 3.0);
  CHECK(s.full_test.inputs.minCoeff() == -3.0);
  CHECK(s.full_test.inputs.maxCoeff() == 3.0);

  const TaskStream again = gaussian_toy_stream(3, 100, 0.01, 5);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(again.tasks[t].train.inputs == s.tasks[t].train.inputs);
    CHECK(again.tasks[t].train.targets == s.tasks[t].train.targets);
  }
  CHECK_THROWS_AS(gaussian_toy_stream(0, 10, 0.01, 1), Error);
}

TEST_CASE("scenario names") {
  CHECK(parse_scenario("cil") == Scenario::Cil);
  CHECK(parse_scenario("dil") == Scenario::Dil);
  CHECK(to_string(Scenario::Regression) == "regression");
  CHECK_THROWS_AS(parse_scenario("til"), Error);
}

TEST_CASE("real mnist training file when present") {
  const char* env = std::getenv("INTACT_DATA_ROOT");
  const std::filesystem::path root = env ? env : "/root/data";
  const auto images = root / "mnist" / "train-images.idx";
  if (!std::filesystem::exists(images)) return;
  const IdxTensor t = read_idx(images);
  CHECK(t.dims == std::vector<std::uint32_t>{60000, 28, 28});
}
