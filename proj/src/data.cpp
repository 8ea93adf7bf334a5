#include "intact/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "intact/error.hpp"
#include "intact/random.hpp"

namespace intact {

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), d.inputs.cols());
  if (d.regression()) out.targets.resize(static_cast<Eigen::Index>(rows.size()), d.targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.inputs.row(static_cast<Eigen::Index>(i)) = d.inputs.row(r);
    if (d.regression()) out.targets.row(static_cast<Eigen::Index>(i)) = d.targets.row(r);
    if (!d.labels.empty()) out.labels.push_back(d.labels[rows[i]]);
  }
  return out;
}

Dataset regression_set(const std::vector<double>& xs, const std::vector<double>& ys) {
  Dataset d;
  d.inputs.resize(static_cast<Eigen::Index>(xs.size()), 1);
  d.targets.resize(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d.inputs(static_cast<Eigen::Index>(i), 0) = xs[i];
    d.targets(static_cast<Eigen::Index>(i), 0) = ys[i];
  }
  return d;
}

std::vector<double> grid(double a, double b, std::size_t n, bool include_end) {
  std::vector<double> g(n);
  const double step = (b - a) / static_cast<double>(include_end ? n - 1 : n);
  for (std::size_t i = 0; i < n; ++i) g[i] = a + step * static_cast<double>(i);
  return g;
}

}  // namespace

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 4, ErrorCode::TruncatedFile, "IDX data shorter than its magic");
  const std::uint32_t magic = be32(bytes, 0);
  require(magic == 0x00000803u || magic == 0x00000801u, ErrorCode::BadMagic, "unsupported IDX magic");
  const std::size_t ndim = magic & 0xffu;
  require(bytes.size() >= 4 + 4 * ndim, ErrorCode::TruncatedFile, "IDX header truncated");
  IdxTensor t;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    t.dims.push_back(be32(bytes, 4 + 4 * i));
    count *= t.dims.back();
  }
  const std::size_t off = 4 + 4 * ndim;
  require(bytes.size() - off >= count, ErrorCode::TruncatedFile,
          "IDX payload has " + std::to_string(bytes.size() - off) + " bytes, expected " + std::to_string(count));
  t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                bytes.begin() + static_cast<std::ptrdiff_t>(off + count));
  return t;
}

IdxTensor read_idx(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::DataMissing, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const IdxTensor img = read_idx(images);
  const IdxTensor lab = read_idx(labels);
  require(img.dims.size() == 3, ErrorCode::BadMagic, images.string() + " is not an image file");
  require(lab.dims.size() == 1, ErrorCode::BadMagic, labels.string() + " is not a label file");
  require(img.dims[0] == lab.dims[0], ErrorCode::ShapeMismatch, "image and label counts differ");
  const Eigen::Index n = img.dims[0];
  const Eigen::Index d = static_cast<Eigen::Index>(img.dims[1]) * img.dims[2];
  Dataset out;
  out.inputs.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      out.inputs(i, j) = static_cast<double>(img.data[static_cast<std::size_t>(i * d + j)]) / 255.0;
  out.labels.assign(lab.data.begin(), lab.data.end());
  return out;
}

DatasetPair load_dataset_dir(const std::filesystem::path& root, const std::string& name) {
  const auto dir = root / name;
  for (const char* f : {"train-images.idx", "train-labels.idx", "test-images.idx", "test-labels.idx"})
    require(std::filesystem::exists(dir / f), ErrorCode::DataMissing,
            (dir / f).string() + " not found (run tools/fetch_data.sh or set INTACT_DATA_ROOT)");
  return {load_idx_dataset(dir / "train-images.idx", dir / "train-labels.idx"),
          load_idx_dataset(dir / "test-images.idx", dir / "test-labels.idx")};
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Cil: return "cil";
    case Scenario::Dil: return "dil";
    case Scenario::Regression: return "regression";
  }
  return "?";
}

Scenario parse_scenario(const std::string& s) {
  if (s == "cil") return Scenario::Cil;
  if (s == "dil") return Scenario::Dil;
  if (s == "regression") return Scenario::Regression;
  fail(ErrorCode::InvalidConfig, "unknown scenario '" + s + "'");
}

std::vector<bool> TaskStream::active_classes(std::size_t task) const {
  std::vector<bool> active(static_cast<std::size_t>(num_outputs), scenario != Scenario::Cil);
  if (scenario == Scenario::Cil)
    for (std::size_t t = 0; t <= task && t < tasks.size(); ++t)
      for (int c : tasks[t].classes) active[static_cast<std::size_t>(c)] = true;
  return active;
}

TaskStream make_split_stream(const DatasetPair& data, Scenario scenario, int n_tasks, std::uint64_t seed) {
  require(scenario != Scenario::Regression, ErrorCode::InvalidConfig, "split streams are classification only");
  require(n_tasks >= 1, ErrorCode::IndivisibleClasses, "need at least one task");
  std::set<int> all(data.train.labels.begin(), data.train.labels.end());
  const int n_classes = all.empty() ? 0 : *all.rbegin() + 1;
  require(n_classes > 0 && n_classes % n_tasks == 0, ErrorCode::IndivisibleClasses,
          std::to_string(n_classes) + " classes cannot be split into " + std::to_string(n_tasks) + " tasks");
  const int per = n_classes / n_tasks;
  TaskStream stream;
  stream.scenario = scenario;
  stream.num_outputs = scenario == Scenario::Cil ? n_classes : per;
  Rng rng(seed);
  for (int t = 0; t < n_tasks; ++t) {
    Task task;
    for (int c = t * per; c < (t + 1) * per; ++c) task.classes.push_back(c);
    auto pick = [&](const Dataset& d) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < d.labels.size(); ++i)
        if (d.labels[i] / per == t) rows.push_back(i);
      rng.shuffle(rows);
      Dataset s = subset(d, rows);
      if (scenario == Scenario::Dil)
        for (int& y : s.labels) y -= t * per;
      return s;
    };
    task.train = pick(data.train);
    task.test = pick(data.test);
    require(task.train.size() > 0 && task.test.size() > 0, ErrorCode::EmptyDataset,
            "task " + std::to_string(t + 1) + " has no samples");
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

void truncate_stream(TaskStream& stream, std::size_t per_task, std::size_t test_per_task) {
  auto cut = [](Dataset& d, std::size_t n) {
    if (n == 0 || static_cast<std::size_t>(d.size()) <= n) return;
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    d = subset(d, rows);
  };
  for (auto& t : stream.tasks) {
    cut(t.train, per_task);
    cut(t.test, test_per_task);
  }
}

TaskStream gaussian_toy_stream(int n_tasks, std::size_t points_per_task, double noise_sd, std::uint64_t seed,
                               std::size_t test_points_per_task) {
  require(n_tasks >= 1 && points_per_task >= 2 && test_points_per_task >= 2, ErrorCode::InvalidConfig,
          "toy stream needs tasks and points");
  require(noise_sd >= 0.0, ErrorCode::InvalidConfig, "noise sd must be >= 0");
  constexpr double kLo = -3.0;
  constexpr double kHi = 3.0;
  const double width = (kHi - kLo) / n_tasks;
  TaskStream stream;
  stream.scenario = Scenario::Regression;
  stream.num_outputs = 1;
  Rng rng(seed);
  for (int t = 0; t < n_tasks; ++t) {
    const double a = kLo + width * t;
    const double b = t + 1 == n_tasks ? kHi : a + width;
    std::vector<double> xs(points_per_task);
    std::vector<double> ys(points_per_task);
    for (std::size_t i = 0; i < points_per_task; ++i) {
      xs[i] = rng.uniform(a, b);
      ys[i] = gaussian_target(xs[i]) + noise_sd * rng.normal();
    }
    Task task;
    task.train = regression_set(xs, ys);
    // Half-open segments except the last, matching [-3,-1), [-1,1), [1,3].
    const auto gx = grid(a, b, test_points_per_task, t + 1 == n_tasks);
    std::vector<double> gy(gx.size());
    std::transform(gx.begin(), gx.end(), gy.begin(), gaussian_target);
    task.test = regression_set(gx, gy);
    stream.tasks.push_back(std::move(task));
  }
  const auto fx = grid(kLo, kHi, test_points_per_task * static_cast<std::size_t>(n_tasks), true);
  std::vector<double> fy(fx.size());
  std::transform(fx.begin(), fx.end(), fy.begin(), gaussian_target);
  stream.full_test = regression_set(fx, fy);
  return stream;
}

}  // namespace intact
