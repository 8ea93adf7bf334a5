#include "intact/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "intact/error.hpp"
#include "intact/optimizer.hpp"
#include "intact/random.hpp"
#include "intact/regularizers.hpp"
#include "intact/snapshot.hpp"

namespace intact {

namespace {

// splitmix64 finalizer; derives independent streams from (seed, purpose).
std::uint64_t mix(std::uint64_t seed, std::uint64_t purpose) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + purpose + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum : std::uint64_t { kInit = 1, kStream = 2, kMask = 3, kShuffle = 100, kFisher = 200 };

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::Io, "cannot write " + path.string());
  os << text;
  require(static_cast<bool>(os), ErrorCode::Io, "write failed for " + path.string());
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int task) {
  return dir / "checkpoints" / ("task_" + std::to_string(task) + ".ck");
}

std::filesystem::path store_path(const std::filesystem::path& dir, int task) {
  return dir / "hypercubes" / ("task_" + std::to_string(task) + ".json");
}

struct Batch {
  Matrix x;
  std::vector<int> labels;
  Matrix targets;
};

Batch gather(const Dataset& d, const std::vector<std::size_t>& perm, std::size_t start, std::size_t n) {
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(n), d.inputs.cols());
  if (d.regression()) b.targets.resize(static_cast<Eigen::Index>(n), d.targets.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(perm[start + i]);
    b.x.row(static_cast<Eigen::Index>(i)) = d.inputs.row(r);
    if (d.regression())
      b.targets.row(static_cast<Eigen::Index>(i)) = d.targets.row(r);
    else
      b.labels.push_back(d.labels[perm[start + i]]);
  }
  return b;
}

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"task", b.task}, {"intdrift", b.intdrift}, {"var", b.var},   {"align", b.align},
          {"feat", b.feat}, {"ewc", b.ewc},           {"total", b.total}};
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, const TaskStream& stream, std::uint64_t seed)
      : cfg_(cfg),
        stream_(stream),
        seed_(seed),
        net_(Network::mlp(stream.tasks.at(0).train.inputs.cols(), cfg.hidden, stream.num_outputs)),
        opt_(cfg.optimizer, net_.params()) {
    net_.init_kaiming(mix(seed, kInit));
    const Eigen::Index feat_dim = net_.activation_dim(cfg.feat_layer);
    mask_ = cfg.mask == MaskPolicy::AllOnes ? FeatureMask::all_ones(feat_dim)
                                            : FeatureMask::random_fraction(feat_dim, cfg.mask_fraction, mix(seed, kMask));
  }

  Network& net() { return net_; }
  HypercubeStore& store() { return store_; }

  LossAudit train_task(std::size_t t) {
    const Task& task = stream_.tasks[t];
    const auto active = stream_.active_classes(t);
    const bool intact = cfg_.method == Method::Intact;
    const bool later = t >= 1;
    if (cfg_.reset_optimizer) opt_.reset();
    Rng rng(mix(seed_, kShuffle + t));
    LossAudit audit;
    std::size_t batches = 0;
    const auto n = static_cast<std::size_t>(task.train.size());
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto perm = rng.permutation(n);
      for (std::size_t start = 0; start + 1 < n; start += cfg_.batch_size) {
        const std::size_t m = std::min(cfg_.batch_size, n - start);
        const Batch b = gather(task.train, perm, start, m);
        const ForwardCache cache = net_.forward(b.x);
        const LossValue task_loss = task.train.regression() ? mse_loss(cache.output(), b.targets)
                                                            : softmax_cross_entropy(cache.output(), b.labels, active);
        LossBreakdown br;
        br.task = task_loss.value;
        ++audit.evaluations["task"];

        std::vector<ActivationLoss> act_terms;
        std::vector<ParamLoss> param_terms;
        if (intact && cfg_.reg.lambda_var > 0.0) {
          ActivationLoss v;
          for (int l : cfg_.var_layers) {
            const double scale = cfg_.var_reduction == VarReduction::Mean
                                     ? 1.0 / static_cast<double>(net_.activation_dim(l))
                                     : 1.0;
            ActivationLoss one = var_loss(cache, {l}, cfg_.reg.lambda_var * scale);
            v.value += one.value;
            for (auto& [idx, g] : one.grads) v.grads[idx] = std::move(g);
          }
          br.var = v.value;
          act_terms.push_back(std::move(v));
          ++audit.evaluations["var"];
        }
        if (intact && later && cfg_.reg.effective_intdrift() > 0.0) {
          param_terms.push_back(int_drift_loss(net_, *snapshot_, store_, cfg_.cube.layers, cfg_.reg.effective_intdrift()));
          br.intdrift = param_terms.back().value;
          ++audit.evaluations["intdrift"];
        }
        if (intact && later && cfg_.reg.lambda_feat > 0.0) {
          const Matrix prev = snapshot_->network().forward_until(b.x, cfg_.feat_layer);
          act_terms.push_back(
              feat_distill_loss(cache, prev, cfg_.feat_layer, mask_, cfg_.reg.lambda_feat, cfg_.reg.eps_feat));
          br.feat = act_terms.back().value;
          ++audit.evaluations["feat"];
        }
        if (intact && later && cfg_.reg.lambda_align > 0.0) {
          act_terms.push_back(align_loss(cache, store_, cfg_.cube.layers, static_cast<int>(t), cfg_.reg.lambda_align,
                                         cfg_.reg.eps_align));
          br.align = act_terms.back().value;
          ++audit.evaluations["align"];
        }
        if (cfg_.method == Method::Ewc && later && cfg_.ewc_lambda > 0.0) {
          param_terms.push_back(ewc_penalty(net_, fisher_, cfg_.ewc_lambda));
          br.ewc = param_terms.back().value;
          ++audit.evaluations["ewc"];
        }

        std::vector<const ActivationLoss*> ap;
        for (const auto& a : act_terms) ap.push_back(&a);
        std::vector<const ParamLoss*> pp;
        for (const auto& p : param_terms) pp.push_back(&p);
        const TotalLoss total = total_loss(net_, cache, task_loss, ap, pp);
        br.total = total.value;
        require(std::isfinite(total.value) && total.grads.all_finite(), ErrorCode::NumericalDivergence,
                "loss became non-finite in task " + std::to_string(t + 1) + " epoch " + std::to_string(epoch + 1));
        opt_.step(net_.mutable_params(), total.grads);
        audit.last = br;
        audit.mean_total += br.total;
        ++batches;
      }
    }
    if (batches) audit.mean_total /= static_cast<double>(batches);
    return audit;
  }

  // Step 5 plus bookkeeping after task t (0-based) finished.
  std::vector<CoverageReport> end_task(std::size_t t) {
    const Task& task = stream_.tasks[t];
    const int id = static_cast<int>(t) + 1;
    snapshot_ = std::make_unique<ParamSnapshot>(net_, id);
    auto coverage = end_of_task_update(store_, net_, task.train.inputs, id, cfg_.cube);
    if (cfg_.method == Method::Ewc) {
      const ParamSet f =
          task.train.regression()
              ? fisher_estimate_regression(net_, task.train.inputs, task.train.targets, cfg_.fisher_samples,
                                           mix(seed_, kFisher + t))
              : fisher_estimate_classification(net_, task.train.inputs, task.train.labels, stream_.active_classes(t),
                                               cfg_.fisher_samples, mix(seed_, kFisher + t));
      fisher_.accumulate(f, net_.params());
    }
    return coverage;
  }

  void adopt(Network net, HypercubeStore store) {
    net_ = std::move(net);
    store_ = std::move(store);
  }

 private:
  const ExperimentConfig& cfg_;
  const TaskStream& stream_;
  std::uint64_t seed_;
  Network net_;
  Optimizer opt_;
  HypercubeStore store_;
  std::unique_ptr<ParamSnapshot> snapshot_;
  FisherDiagonal fisher_;
  FeatureMask mask_;
};

nlohmann::json record_json(const ExperimentConfig& cfg, const RunRecord& r, const TaskStream& stream) {
  nlohmann::json j;
  j["config_name"] = cfg.name;
  j["config_hash"] = hash_hex(cfg.hash);
  j["method"] = to_string(cfg.method);
  j["scenario"] = to_string(stream.scenario);
  j["seed"] = r.seed;
  const std::size_t n = r.scores.size();
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j2 = 0; j2 < n; ++j2) row.push_back(r.scores.has(i, j2) ? nlohmann::json(r.scores.at(i, j2)) : nullptr);
    matrix.push_back(row);
  }
  j["score_matrix"] = matrix;
  j["score_kind"] = stream.scenario == Scenario::Regression ? "mse" : "accuracy_percent";
  j["metrics"] = {{"AA", r.metrics.aa},
                  {"AF_std", r.metrics.af_std ? nlohmann::json(*r.metrics.af_std) : nullptr},
                  {"AF_coda", r.metrics.af_coda ? nlohmann::json(*r.metrics.af_coda) : nullptr}};
  if (r.full_domain_mse) {
    j["full_domain_mse"] = *r.full_domain_mse;
    j["full_domain_mse_per_task"] = r.full_domain_mse_per_task;
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : r.tasks) {
    nlohmann::json tj;
    tj["task"] = t.task;
    tj["wall_seconds"] = t.seconds;
    tj["loss_evaluations"] = t.audit.evaluations;
    tj["final_batch_loss"] = breakdown_json(t.audit.last);
    tj["mean_total_loss"] = t.audit.mean_total;
    nlohmann::json cov = nlohmann::json::array();
    for (const auto& c : t.coverage) cov.push_back({{"layer", c.layer}, {"min_fraction", c.min_fraction}, {"required", c.required}});
    tj["coverage"] = cov;
    tasks.push_back(tj);
  }
  j["tasks"] = tasks;
  j["artifacts"] = {{"accuracy_matrix", "accuracy_matrix.csv"},
                    {"drift", "drift.csv"},
                    {"checkpoints", cfg.save_checkpoints ? "checkpoints/" : ""},
                    {"hypercubes", cfg.save_checkpoints ? "hypercubes/" : ""}};
  return j;
}

}  // namespace

TaskStream load_stream(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset == "gaussian")
    return gaussian_toy_stream(cfg.n_tasks, cfg.toy_points_per_task, cfg.toy_noise_sd, mix(seed, kStream),
                               cfg.toy_test_points);
  const DatasetPair data = load_dataset_dir(cfg.data_root, cfg.dataset);
  TaskStream s = make_split_stream(data, cfg.scenario, cfg.n_tasks, mix(seed, kStream));
  truncate_stream(s, cfg.train_per_task, cfg.test_per_task);
  return s;
}

std::vector<double> evaluate_column(const Network& net, const TaskStream& stream, std::size_t upto) {
  std::vector<double> col;
  const auto active = stream.active_classes(upto);
  for (std::size_t i = 0; i <= upto && i < stream.tasks.size(); ++i) {
    const Dataset& d = stream.tasks[i].test;
    col.push_back(d.regression() ? mse(net, d.inputs, d.targets) : accuracy_percent(net, d.inputs, d.labels, active));
  }
  return col;
}

RunRecord run_seed(const ExperimentConfig& cfg, const TaskStream& stream, std::uint64_t seed, const RunOptions& opts) {
  const std::size_t n = stream.tasks.size();
  require(n >= 1, ErrorCode::EmptyDataset, "stream has no tasks");
  require(!opts.resume_dir || cfg.reset_optimizer, ErrorCode::InvalidConfig,
          "resuming requires reset_optimizer = true");
  require(opts.resume_after >= 0 && static_cast<std::size_t>(opts.resume_after) < n, ErrorCode::InvalidConfig,
          "resume point outside the stream");
  const std::size_t last = opts.stop_after > 0 ? std::min<std::size_t>(n, static_cast<std::size_t>(opts.stop_after)) : n;

  RunRecord rec;
  rec.seed = seed;
  rec.scores = AccuracyMatrix(n);
  rec.dir = cfg.output_dir / ("seed_" + std::to_string(seed));
  Trainer trainer(cfg, stream, seed);
  DriftProbe probe;
  const auto resume_after = static_cast<std::size_t>(opts.resume_dir ? opts.resume_after : 0);

  for (std::size_t t = 0; t < last; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    TaskReport report;
    report.task = static_cast<int>(t) + 1;
    if (t < resume_after) {
      // Replay the boundary work from stored artifacts instead of training.
      Checkpoint ck = load_checkpoint(checkpoint_path(*opts.resume_dir, report.task));
      require(ck.task_index == report.task, ErrorCode::BadCheckpoint, "checkpoint task index mismatch");
      trainer.adopt(std::move(ck.net), trainer.store());
    } else {
      report.audit = trainer.train_task(t);
    }
    report.coverage = trainer.end_task(t);
    if (t + 1 == resume_after) {
      const HypercubeStore saved = HypercubeStore::load(store_path(*opts.resume_dir, report.task));
      require(saved == trainer.store(), ErrorCode::InvariantViolation,
              "stored hypercubes differ from those rebuilt from the checkpoints");
      trainer.adopt(trainer.net(), saved);
    }

    const auto col = evaluate_column(trainer.net(), stream, t);
    for (std::size_t i = 0; i < col.size(); ++i) rec.scores.set(i, t, col[i]);
    if (stream.scenario == Scenario::Regression)
      rec.full_domain_mse_per_task.push_back(mse(trainer.net(), stream.full_test.inputs, stream.full_test.targets));

    const Dataset& test = stream.tasks[t].test;
    for (std::size_t k = 0; k < cfg.drift_refs_per_task && static_cast<Eigen::Index>(k) < test.size(); ++k)
      probe.record(trainer.net(), report.task, test.inputs.row(static_cast<Eigen::Index>(k)), cfg.drift_layers);
    for (auto& row : probe.probe(trainer.net(), report.task)) rec.drift.push_back(row);

    if (opts.write_outputs && cfg.save_checkpoints) {
      save_checkpoint(checkpoint_path(rec.dir, report.task), trainer.net(), report.task);
      trainer.store().save(store_path(rec.dir, report.task));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.tasks.push_back(std::move(report));
  }

  // Nesting across the whole run, rechecked from the recorded history.
  for (const auto& [layer, hist] : trainer.store().history())
    for (std::size_t k = 1; k < hist.size(); ++k)
      require(hist[k].contains(hist[k - 1]), ErrorCode::InvariantViolation,
              "hypercube nesting violated at layer " + std::to_string(layer));

  rec.store = trainer.store();
  if (last == n) {
    rec.metrics = compute_metrics(rec.scores);
    if (!rec.full_domain_mse_per_task.empty()) rec.full_domain_mse = rec.full_domain_mse_per_task.back();
  }

  if (opts.write_outputs) {
    write_text(rec.dir / "accuracy_matrix.csv",
               rec.scores.to_csv(stream.scenario == Scenario::Regression ? "mse" : "accuracy"));
    write_text(rec.dir / "drift.csv", drift_csv(rec.drift));
    write_text(rec.dir / "run.json", record_json(cfg, rec, stream).dump(2) + "\n");
  }
  return rec;
}

std::string metrics_row(std::uint64_t seed, const Metrics& m) {
  return std::to_string(seed) + "," + csv_number(m.aa) + "," + (m.af_std ? csv_number(*m.af_std) : "") + "," +
         (m.af_coda ? csv_number(*m.af_coda) : "") + "\n";
}

std::string metrics_csv(const std::vector<RunRecord>& runs) {
  std::string out = "seed,AA,AF_std,AF_coda\n";
  for (const auto& r : runs) out += metrics_row(r.seed, r.metrics);
  return out;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  std::vector<RunRecord> runs;
  for (std::uint64_t seed : cfg.seeds) {
    const TaskStream stream = load_stream(cfg, seed);
    runs.push_back(run_seed(cfg, stream, seed, opts));
  }
  if (opts.write_outputs) write_text(cfg.output_dir / "metrics.csv", metrics_csv(runs));
  return runs;
}

}  // namespace intact
