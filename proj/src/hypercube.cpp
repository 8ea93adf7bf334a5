#include "intact/hypercube.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "intact/error.hpp"

namespace intact {

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_vector(std::string& out, const Vector& v) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_double(out, v[i]);
  }
  out += ']';
}

void append_box(std::string& out, const Hypercube& h) {
  out += "{\"lo\":";
  append_vector(out, h.lo());
  out += ",\"hi\":";
  append_vector(out, h.hi());
  out += '}';
}

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Hypercube box_from_json(const nlohmann::json& j) { return {vector_from_json(j.at("lo")), vector_from_json(j.at("hi"))}; }

std::map<int, Matrix> collect_many(const Network& net, const Matrix& inputs, const std::vector<int>& layers,
                                   Eigen::Index chunk) {
  std::map<int, Matrix> out;
  for (int l : layers) out[l] = Matrix(inputs.rows(), net.activation_dim(l));
  for (Eigen::Index start = 0; start < inputs.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, inputs.rows() - start);
    const ForwardCache cache = net.forward(inputs.middleRows(start, n));
    for (int l : layers) out[l].middleRows(start, n) = cache.at(l);
  }
  return out;
}

}  // namespace

void HypercubeConfig::validate(const Network& net) const {
  require(coverage_p > 0.0 && coverage_p <= 100.0, ErrorCode::InvalidConfig, "coverage_p must lie in (0, 100]");
  require(!layers.empty(), ErrorCode::InvalidConfig, "hypercube layer set is empty");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    require(layers[i] >= 0 && layers[i] <= net.num_layers(), ErrorCode::InvalidConfig,
            "hypercube layer " + std::to_string(layers[i]) + " outside the network");
    if (i) require(layers[i] > layers[i - 1], ErrorCode::InvalidConfig, "hypercube layers must be strictly increasing");
  }
}

namespace {

double percentile_sorted(const std::vector<double>& values, double q) {
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  if (k + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(k);
  return values[k] + frac * (values[k + 1] - values[k]);
}

}  // namespace

double percentile_linear(std::vector<double>& values, double q) {
  require(!values.empty(), ErrorCode::EmptyActivations, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

Hypercube compute_task_hypercube(const Matrix& activations, double alpha) {
  require(activations.rows() >= 2, ErrorCode::EmptyActivations, "need at least two activation rows");
  require(activations.cols() >= 1, ErrorCode::EmptyActivations, "activations have no columns");
  require(alpha >= 0.0 && alpha < 50.0, ErrorCode::InvalidConfig, "alpha must lie in [0, 50)");
  require(activations.allFinite(), ErrorCode::NonFiniteActivation, "activations contain NaN or inf");
  Vector lo(activations.cols());
  Vector hi(activations.cols());
  std::vector<double> col(static_cast<std::size_t>(activations.rows()));
  for (Eigen::Index j = 0; j < activations.cols(); ++j) {
    for (Eigen::Index i = 0; i < activations.rows(); ++i) col[static_cast<std::size_t>(i)] = activations(i, j);
    std::sort(col.begin(), col.end());
    lo[j] = percentile_sorted(col, alpha);
    hi[j] = percentile_sorted(col, 100.0 - alpha);
  }
  return {std::move(lo), std::move(hi)};
}

Hypercube merge_cumulative(const Hypercube& prev, const Hypercube& next) {
  require(prev.dim() == next.dim(), ErrorCode::DimensionMismatch, "cannot merge boxes of different dimension");
  return {prev.lo().cwiseMin(next.lo()), prev.hi().cwiseMax(next.hi())};
}

CenterRadius center_radius(const Hypercube& h) {
  CenterRadius cr{h.center(), h.radius(), 0.0};
  cr.r_mean = cr.radius.mean();
  return cr;
}

double min_coverage(const Matrix& activations, const Hypercube& h) {
  require(activations.cols() == h.dim(), ErrorCode::DimensionMismatch, "activation width vs box");
  require(activations.rows() > 0, ErrorCode::EmptyActivations, "no activations");
  double worst = 1.0;
  for (Eigen::Index j = 0; j < activations.cols(); ++j) {
    const auto c = activations.col(j).array();
    const double inside = ((c >= h.lo()[j]) && (c <= h.hi()[j])).cast<double>().sum();
    worst = std::min(worst, inside / static_cast<double>(activations.rows()));
  }
  return worst;
}

void HypercubeStore::record(int layer, int task, const Hypercube& box) {
  auto& rec = layers_[layer];
  require(rec.per_task.count(task) == 0, ErrorCode::InvariantViolation,
          "task " + std::to_string(task) + " already recorded for layer " + std::to_string(layer));
  rec.per_task.emplace(task, box);
  Hypercube next = rec.cumulative ? merge_cumulative(*rec.cumulative, box) : box;
  if (rec.cumulative)
    require(next.contains(*rec.cumulative), ErrorCode::InvariantViolation,
            "cumulative box shrank at layer " + std::to_string(layer));
  require(next.contains(box), ErrorCode::InvariantViolation,
          "cumulative box misses the task box at layer " + std::to_string(layer));
  rec.cumulative = next;
  history_[layer].push_back(std::move(next));
  last_task_ = std::max(last_task_, task);
}

const Hypercube& HypercubeStore::cumulative(int layer) const {
  auto it = layers_.find(layer);
  require(it != layers_.end() && it->second.cumulative.has_value(), ErrorCode::MissingHypercube,
          "no cumulative hypercube for layer " + std::to_string(layer));
  return *it->second.cumulative;
}

const Hypercube& HypercubeStore::per_task(int layer, int task) const {
  auto it = layers_.find(layer);
  require(it != layers_.end(), ErrorCode::MissingHypercube, "no hypercubes for layer " + std::to_string(layer));
  auto jt = it->second.per_task.find(task);
  require(jt != it->second.per_task.end(), ErrorCode::MissingHypercube,
          "no hypercube for layer " + std::to_string(layer) + " task " + std::to_string(task));
  return jt->second;
}

std::vector<int> HypercubeStore::layer_indices() const {
  std::vector<int> out;
  for (const auto& [l, _] : layers_) out.push_back(l);
  return out;
}

std::string HypercubeStore::to_json() const {
  std::string out = "{\"format_version\":1,\"last_task\":" + std::to_string(last_task_) + ",\"layers\":[";
  bool first = true;
  for (const auto& [l, rec] : layers_) {
    if (!first) out += ',';
    first = false;
    out += "{\"layer\":" + std::to_string(l) + ",\"per_task\":[";
    bool first_task = true;
    for (const auto& [t, box] : rec.per_task) {
      if (!first_task) out += ',';
      first_task = false;
      out += "{\"task\":" + std::to_string(t) + ",\"box\":";
      append_box(out, box);
      out += '}';
    }
    out += "],\"cumulative\":";
    if (rec.cumulative)
      append_box(out, *rec.cumulative);
    else
      out += "null";
    out += '}';
  }
  out += "]}\n";
  return out;
}

HypercubeStore HypercubeStore::from_json(const std::string& text) {
  HypercubeStore store;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& lj : j.at("layers")) {
      const int l = lj.at("layer").get<int>();
      for (const auto& tj : lj.at("per_task")) store.record(l, tj.at("task").get<int>(), box_from_json(tj.at("box")));
      if (!lj.at("cumulative").is_null())
        require(box_from_json(lj.at("cumulative")) == store.cumulative(l), ErrorCode::InvariantViolation,
                "stored cumulative box disagrees with its per-task boxes at layer " + std::to_string(l));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, std::string("hypercube store: ") + e.what());
  }
  return store;
}

void HypercubeStore::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + path.string());
  os << to_json();
}

HypercubeStore HypercubeStore::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

bool operator==(const HypercubeStore& a, const HypercubeStore& b) {
  if (a.last_task_ != b.last_task_ || a.layers_.size() != b.layers_.size()) return false;
  for (const auto& [l, rec] : a.layers_) {
    auto it = b.layers_.find(l);
    if (it == b.layers_.end() || rec.per_task != it->second.per_task || rec.cumulative != it->second.cumulative)
      return false;
  }
  return true;
}

Matrix collect_activations(const Network& net, const Matrix& inputs, int layer, Eigen::Index chunk) {
  return collect_many(net, inputs, {layer}, chunk).at(layer);
}

std::vector<CoverageReport> end_of_task_update(HypercubeStore& store, const Network& net, const Matrix& inputs,
                                                int task_index, const HypercubeConfig& cfg) {
  cfg.validate(net);
  const auto acts = collect_many(net, inputs, cfg.layers, 2048);
  std::vector<CoverageReport> reports;
  const double n = static_cast<double>(inputs.rows());
  for (int l : cfg.layers) {
    const Matrix& a = acts.at(l);
    Hypercube box = compute_task_hypercube(a, cfg.alpha());
    // Linear interpolation keeps every order statistic between the two
    // interpolation positions, i.e. at least (n-1)p/100 - 1 of n values.
    const double required = ((n - 1.0) * cfg.coverage_p / 100.0 - 1.0) / n;
    const double got = min_coverage(a, box);
    require(got >= required, ErrorCode::InvariantViolation,
            "coverage " + std::to_string(got) + " below " + std::to_string(required) + " at layer " +
                std::to_string(l));
    store.record(l, task_index, box);
    require(store.cumulative(l).contains(box), ErrorCode::InvariantViolation, "cumulative box misses task box");
    reports.push_back({l, got, required});
  }
  return reports;
}

}  // namespace intact
