#include <filesystem>

#include "doctest.h"
#include "intact/config.hpp"
#include "intact/error.hpp"

using namespace intact;

namespace {

ErrorCode code_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvariantViolation;  // sentinel: parsed fine
}

}  // namespace

TEST_CASE("defaults") {
  const ExperimentConfig c = parse_config("");
  CHECK(c.method == Method::Intact);
  CHECK(c.scenario == Scenario::Dil);
  CHECK(c.hidden == std::vector<Eigen::Index>{400, 400, 400});
  CHECK(c.cube.layers == std::vector<int>{2, 4, 6});
  CHECK(c.var_layers == c.cube.layers);
  CHECK(c.drift_layers == c.cube.layers);
  CHECK(c.feat_layer == 2);
  CHECK(c.cube.coverage_p == 90.0);
  CHECK(c.optimizer.kind == OptimizerKind::Adam);
  CHECK(c.reset_optimizer);
  CHECK(c.input_dim() == 784);
}

TEST_CASE("full config parses") {
  const ExperimentConfig c = parse_config(R"(
# comment line
[experiment]
name = demo
method = ewc
seeds = 0, 1, 2
output_dir = runs/demo

[data]
dataset = mnist
scenario = cil
n_tasks = 5
train_per_task = 100

[model]
hidden = 32,16

[train]
lr = 2e-4
batch_size = 64
epochs = 3

[intact]
hypercube_layers = 2, 4, 5
var_layers = 2
dil_class_scaling = 2
mask = random_fraction
mask_fraction = 0.5

[ewc]
lambda = 100
fisher_samples = 0
)");
  CHECK(c.name == "demo");
  CHECK(c.method == Method::Ewc);
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(c.scenario == Scenario::Cil);
  CHECK(c.train_per_task == 100);
  CHECK(c.hidden == std::vector<Eigen::Index>{32, 16});
  CHECK(c.optimizer.lr == 2e-4);
  CHECK(c.cube.layers == std::vector<int>{2, 4, 5});
  CHECK(c.var_layers == std::vector<int>{2});
  CHECK(c.drift_layers == c.cube.layers);
  CHECK(c.reg.dil_class_scaling == 2);
  CHECK(c.mask == MaskPolicy::RandomFraction);
  CHECK(c.ewc_lambda == 100.0);
  CHECK(c.fisher_samples == 0);

  const ExperimentConfig toy = parse_config("[data]\ndataset = gaussian\nscenario = regression\n[model]\nhidden = 8\n");
  CHECK(toy.input_dim() == 1);
  CHECK(toy.cube.layers == std::vector<int>{0});
}

TEST_CASE("invalid configs are rejected") {
  CHECK(code_of("[experiment]\nnmae = x\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[trian]\nlr = 1\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[train]\nlr = fast\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[train]\nepochs = 1.5\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[train]\nbatch_size = 1\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[train]\nlr = -1\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[train]\nreset_optimizer = maybe\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[experiment]\nmethod = lwf\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[experiment]\nseeds =\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[data]\ndataset = gaussian\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[data]\ndataset = cifar\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[intact]\nlambda_var = -2\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[intact]\nhypercube_layers = 2, 9\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[intact]\nhypercube_layers = 0, 4\n") == ErrorCode::InvalidConfig);  // skips layer 1
  CHECK(code_of("[intact]\ncoverage_p = 0\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[intact]\nmask_fraction = 0\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[intact]\nvar_reduction = max\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[intact]\neps_feat = 0\n") == ErrorCode::InvalidConfig);
  CHECK(code_of("[data]\nscenario = cil\n") == ErrorCode::InvariantViolation);
}

TEST_CASE("config hash is canonical") {
  const ExperimentConfig a = parse_config("[train]\nlr = 0.001\nepochs = 2\n[model]\nhidden = 8\n");
  const ExperimentConfig b = parse_config("[model]\nhidden = 8\n\n[train]\n# reordered\nepochs   =   2\nlr = 0.001\n");
  CHECK(a.hash == b.hash);
  CHECK(hash_hex(a.hash).size() == 16);
  const ExperimentConfig c = parse_config("[train]\nlr = 0.002\nepochs = 2\n[model]\nhidden = 8\n");
  CHECK(a.hash != c.hash);
  CHECK(a.source == "model.hidden=8\ntrain.epochs=2\ntrain.lr=0.001\n");
}

TEST_CASE("shipped configs parse") {
  int n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(std::filesystem::path(INTACT_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".ini") continue;
    CAPTURE(entry.path().string());
    const ExperimentConfig c = load_config(entry.path());
    CHECK(c.name == entry.path().stem().string());
    CHECK(c.seeds.size() == 3);
    ++n;
  }
  CHECK(n >= 10);
}
