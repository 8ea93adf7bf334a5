#include "intact/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "intact/error.hpp"

namespace intact {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"experiment", {"name", "method", "seeds", "output_dir"}},
      {"data",
       {"dataset", "root", "scenario", "n_tasks", "train_per_task", "test_per_task", "toy_points_per_task",
        "toy_noise_sd", "toy_test_points"}},
      {"model", {"hidden"}},
      {"train", {"optimizer", "lr", "beta1", "beta2", "eps", "batch_size", "epochs", "reset_optimizer"}},
      {"intact",
       {"lambda_intdrift", "lambda_var", "lambda_align", "lambda_feat", "eps_align", "eps_feat", "dil_class_scaling",
        "hypercube_layers", "coverage_p", "var_layers", "var_reduction", "feat_layer", "mask", "mask_fraction"}},
      {"ewc", {"lambda", "fisher_samples"}},
      {"output", {"save_checkpoints", "drift_refs_per_task", "drift_layers"}},
  };
  return s;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& what) {
  fail(ErrorCode::InvalidConfig, key + " = '" + value + "': " + what);
}

double to_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  char* end = nullptr;
  const double d = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(d)) bad(key, v, "expected a finite number");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  long long out = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size()) bad(key, v, "expected an integer");
  return out;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long n = to_int(key, v);
  if (n < 0) bad(key, v, "must be >= 0");
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  bad(key, v, "expected true or false");
}

std::vector<long long> to_int_list(const std::string& key, const std::string& v) {
  std::vector<long long> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, item));
  if (trim(v).empty()) out.clear();
  return out;
}

std::vector<int> to_layers(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (long long x : to_int_list(key, v)) {
    if (x < 0) bad(key, v, "layer indices must be >= 0");
    out.push_back(static_cast<int>(x));
  }
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i] <= out[i - 1]) bad(key, v, "layer indices must be strictly increasing");
  return out;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Intact: return "intact";
    case Method::Ewc: return "ewc";
    case Method::Finetune: return "finetune";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "intact") return Method::Intact;
  if (s == "ewc") return Method::Ewc;
  if (s == "finetune") return Method::Finetune;
  fail(ErrorCode::InvalidConfig, "unknown method '" + s + "'");
}

Eigen::Index ExperimentConfig::input_dim() const { return dataset == "gaussian" ? 1 : 784; }

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::InvalidConfig, std::string("config syntax: ") + e.what());
  }

  ExperimentConfig cfg;
  std::map<std::string, std::string> kv;  // "section.key" -> value, sorted
  for (const auto& [section, body] : tree) {
    auto it = schema().find(section);
    if (it == schema().end()) {
      if (body.empty()) fail(ErrorCode::InvalidConfig, "key '" + section + "' outside of any section");
      fail(ErrorCode::InvalidConfig, "unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) fail(ErrorCode::InvalidConfig, "unknown key '" + key + "' in [" + section + "]");
      kv[section + "." + key] = trim(value.data());
    }
  }

  bool var_layers_set = false;
  bool drift_layers_set = false;
  for (const auto& [k, v] : kv) {
    if (k == "experiment.name") cfg.name = v;
    else if (k == "experiment.method") cfg.method = parse_method(v);
    else if (k == "experiment.seeds") {
      cfg.seeds.clear();
      for (long long s : to_int_list(k, v)) {
        if (s < 0) bad(k, v, "seeds must be >= 0");
        cfg.seeds.push_back(static_cast<std::uint64_t>(s));
      }
    } else if (k == "experiment.output_dir") cfg.output_dir = v;
    else if (k == "data.dataset") cfg.dataset = v;
    else if (k == "data.root") cfg.data_root = v;
    else if (k == "data.scenario") cfg.scenario = parse_scenario(v);
    else if (k == "data.n_tasks") cfg.n_tasks = static_cast<int>(to_int(k, v));
    else if (k == "data.train_per_task") cfg.train_per_task = to_count(k, v);
    else if (k == "data.test_per_task") cfg.test_per_task = to_count(k, v);
    else if (k == "data.toy_points_per_task") cfg.toy_points_per_task = to_count(k, v);
    else if (k == "data.toy_noise_sd") cfg.toy_noise_sd = to_double(k, v);
    else if (k == "data.toy_test_points") cfg.toy_test_points = to_count(k, v);
    else if (k == "model.hidden") {
      cfg.hidden.clear();
      for (long long h : to_int_list(k, v)) {
        if (h < 1) bad(k, v, "hidden widths must be >= 1");
        cfg.hidden.push_back(static_cast<Eigen::Index>(h));
      }
    } else if (k == "train.optimizer") cfg.optimizer.kind = parse_optimizer_kind(v);
    else if (k == "train.lr") cfg.optimizer.lr = to_double(k, v);
    else if (k == "train.beta1") cfg.optimizer.beta1 = to_double(k, v);
    else if (k == "train.beta2") cfg.optimizer.beta2 = to_double(k, v);
    else if (k == "train.eps") cfg.optimizer.eps = to_double(k, v);
    else if (k == "train.batch_size") cfg.batch_size = to_count(k, v);
    else if (k == "train.epochs") cfg.epochs = static_cast<int>(to_int(k, v));
    else if (k == "train.reset_optimizer") cfg.reset_optimizer = to_bool(k, v);
    else if (k == "intact.lambda_intdrift") cfg.reg.lambda_intdrift = to_double(k, v);
    else if (k == "intact.lambda_var") cfg.reg.lambda_var = to_double(k, v);
    else if (k == "intact.lambda_align") cfg.reg.lambda_align = to_double(k, v);
    else if (k == "intact.lambda_feat") cfg.reg.lambda_feat = to_double(k, v);
    else if (k == "intact.eps_align") cfg.reg.eps_align = to_double(k, v);
    else if (k == "intact.eps_feat") cfg.reg.eps_feat = to_double(k, v);
    else if (k == "intact.dil_class_scaling") {
      const long long c = to_int(k, v);
      if (c < 0) bad(k, v, "must be >= 0");
      if (c > 0) cfg.reg.dil_class_scaling = static_cast<int>(c);
    } else if (k == "intact.hypercube_layers") cfg.cube.layers = to_layers(k, v);
    else if (k == "intact.coverage_p") cfg.cube.coverage_p = to_double(k, v);
    else if (k == "intact.var_layers") {
      cfg.var_layers = to_layers(k, v);
      var_layers_set = true;
    } else if (k == "intact.var_reduction") {
      if (v == "sum") cfg.var_reduction = VarReduction::Sum;
      else if (v == "mean") cfg.var_reduction = VarReduction::Mean;
      else bad(k, v, "expected sum or mean");
    } else if (k == "intact.feat_layer") cfg.feat_layer = static_cast<int>(to_int(k, v));
    else if (k == "intact.mask") {
      if (v == "all_ones") cfg.mask = MaskPolicy::AllOnes;
      else if (v == "random_fraction") cfg.mask = MaskPolicy::RandomFraction;
      else bad(k, v, "expected all_ones or random_fraction");
    } else if (k == "intact.mask_fraction") cfg.mask_fraction = to_double(k, v);
    else if (k == "ewc.lambda") cfg.ewc_lambda = to_double(k, v);
    else if (k == "ewc.fisher_samples") cfg.fisher_samples = to_count(k, v);
    else if (k == "output.save_checkpoints") cfg.save_checkpoints = to_bool(k, v);
    else if (k == "output.drift_refs_per_task") cfg.drift_refs_per_task = to_count(k, v);
    else if (k == "output.drift_layers") {
      cfg.drift_layers = to_layers(k, v);
      drift_layers_set = true;
    }
  }

  if (cfg.scenario == Scenario::Regression && cfg.cube.layers.empty()) cfg.cube.layers = {0};
  if (cfg.cube.layers.empty()) {
    // Post-ReLU hidden activations of the MLP.
    for (std::size_t h = 0; h < cfg.hidden.size(); ++h) cfg.cube.layers.push_back(static_cast<int>(2 * h + 2));
  }
  if (!var_layers_set) cfg.var_layers = cfg.cube.layers;
  if (!drift_layers_set) cfg.drift_layers = cfg.cube.layers;
  if (cfg.feat_layer < 0) cfg.feat_layer = cfg.cube.layers.front();

  const bool toy = cfg.dataset == "gaussian";
  require(toy || cfg.dataset == "mnist" || cfg.dataset == "fmnist", ErrorCode::InvalidConfig,
          "unknown dataset '" + cfg.dataset + "'");
  require(toy == (cfg.scenario == Scenario::Regression), ErrorCode::InvalidConfig,
          "the gaussian dataset goes with scenario regression and only with it");
  require(!cfg.seeds.empty(), ErrorCode::InvalidConfig, "at least one seed is required");
  require(cfg.n_tasks >= 1, ErrorCode::InvalidConfig, "n_tasks must be >= 1");
  require(cfg.epochs >= 1, ErrorCode::InvalidConfig, "epochs must be >= 1");
  require(cfg.batch_size >= 2, ErrorCode::InvalidConfig, "batch_size must be >= 2");
  require(!cfg.hidden.empty(), ErrorCode::InvalidConfig, "model needs at least one hidden layer");
  require(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 1.0, ErrorCode::InvalidConfig,
          "mask_fraction must lie in (0, 1]");
  require(cfg.ewc_lambda >= 0.0, ErrorCode::InvalidConfig, "ewc lambda must be >= 0");
  require(cfg.toy_noise_sd >= 0.0, ErrorCode::InvalidConfig, "toy_noise_sd must be >= 0");
  cfg.reg.validate();
  // Optimizer hyperparameters are checked on construction; fail early.
  Optimizer probe(cfg.optimizer, ParamSet{});

  const Network shape = Network::mlp(cfg.input_dim(), cfg.hidden, 1);
  cfg.cube.validate(shape);
  validate_drift_layers(shape, cfg.cube.layers);
  for (int l : cfg.var_layers)
    require(l <= shape.num_layers(), ErrorCode::InvalidConfig, "var layer " + std::to_string(l) + " out of range");
  for (int l : cfg.drift_layers)
    require(l <= shape.num_layers(), ErrorCode::InvalidConfig, "drift layer " + std::to_string(l) + " out of range");
  require(cfg.feat_layer <= shape.num_layers(), ErrorCode::InvalidConfig, "feat_layer out of range");

  for (const auto& [k, v] : kv) cfg.source += k + "=" + v + "\n";
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : cfg.source) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  cfg.hash = h;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::InvalidConfig, "cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void apply_environment(ExperimentConfig& cfg) {
  if (const char* root = std::getenv("INTACT_DATA_ROOT"); root && *root) cfg.data_root = root;
}

}  // namespace intact
