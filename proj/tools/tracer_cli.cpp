// Command-line front end: gen-data, corrupt, pretrain-attacker, train, eval,
// entropy-probe, report. Every subcommand accepts --config <file> with flat
// "key = value" lines; explicit flags override file values.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tracer/tracer.hpp"

namespace fs = std::filesystem;
using namespace tracer;

namespace {

// Option values as strings; resolution order is flag, config file, default.
class Params {
 public:
  explicit Params(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "flat key = value file");
  }

  void add(const std::string& key, const std::string& help) {
    std::string flag = "--" + key;
    for (char& c : flag) c = c == '_' ? '-' : c;
    app_->add_option(flag, values_[key], help);
    flags_[key] = flag;
  }

  // Reads --config; unknown keys are an error unless they are forwarded
  // elsewhere (the training config).
  void load(bool allow_extras = false) {
    if (!config_path_.empty()) file_ = train::read_key_values(config_path_);
    for (auto& [k, v] : file_) {
      std::string snake = k;
      for (char& c : snake) c = c == '-' ? '_' : c;
      normalized_[snake] = v;
    }
    if (!allow_extras && !extras().empty()) {
      throw ConfigError("unknown config key '" + extras().begin()->first + "' in " + config_path_);
    }
  }

  std::optional<std::string> find(const std::string& key) const {
    if (auto it = flags_.find(key); it != flags_.end() && app_->get_option(it->second)->count() > 0) {
      return values_.at(key);
    }
    if (auto it = normalized_.find(key); it != normalized_.end()) return it->second;
    return std::nullopt;
  }

  std::string str(const std::string& key, const std::string& def) const { return find(key).value_or(def); }

  std::string required(const std::string& key) const {
    auto v = find(key);
    if (!v || v->empty()) throw ConfigError("missing required option --" + dashed(key));
    return *v;
  }

  template <typename T>
  T num(const std::string& key, T def) const {
    auto v = find(key);
    return v ? parse<T>(key, *v) : def;
  }

  template <typename T>
  T required_num(const std::string& key) const {
    return parse<T>(key, required(key));
  }

  std::uint64_t seed() const { return required_num<std::uint64_t>("seed"); }

  // Config-file keys that are not subcommand options (passed to TrainConfig).
  std::map<std::string, std::string> extras() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : normalized_) {
      if (!flags_.contains(k)) out[k] = v;
    }
    return out;
  }

 private:
  static std::string dashed(std::string k) {
    for (char& c : k) c = c == '_' ? '-' : c;
    return k;
  }

  template <typename T>
  static T parse(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out{};
    in >> out;
    if (in.fail() || !in.eof()) throw ConfigError("option --" + dashed(key) + ": cannot parse '" + v + "'");
    return out;
  }

  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, std::string> values_, flags_, file_, normalized_;
};

env::BehaviorKind parse_behavior(const std::string& s) {
  if (s == "mixed_pd") return env::BehaviorKind::mixed_pd;
  if (s == "pd") return env::BehaviorKind::pd;
  if (s == "uniform") return env::BehaviorKind::uniform;
  throw ConfigError("unknown behavior policy '" + s + "' (mixed_pd, pd, uniform)");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path resolve_checkpoint(const Params& p) {
  if (auto c = p.find("checkpoint")) return *c;
  const fs::path run = p.required("run");
  const auto e = train::latest_checkpoint_epoch(run);
  if (!e) throw ConfigError("no checkpoints in " + run.string());
  return train::checkpoint_dir(run, *e);
}

int gen_data(const Params& p) {
  const env::EnvId id = env::parse_env(p.str("env", "point_mass"));
  env::BehaviorPolicy policy;
  policy.kind = parse_behavior(p.str("behavior", "mixed_pd"));
  const auto n = p.num<std::size_t>("n", 20000);
  const env::Dataset ds = env::collect_dataset(id, policy, n, p.seed());
  env::save_dataset(ds, p.required("out"));
  std::cout << "wrote " << ds.size() << " transitions (" << env::env_name(id) << ") to " << p.required("out") << '\n';
  return 0;
}

int corrupt_cmd(const Params& p) {
  const env::Dataset clean = env::load_dataset(p.required("in"));
  corruption::CorruptionSpec spec;
  spec.mode = corruption::parse_mode(p.str("mode", "random"));
  spec.elements = corruption::parse_elements(p.str("elements", "s,a,r,d"));
  spec.rate = p.num<double>("rate", 0.3);
  spec.scale = p.num<double>("scale", 1.0);
  spec.seed = p.seed();
  spec.pgd_steps = p.num<int>("pgd_steps", spec.pgd_steps);
  spec.pgd_step_size = p.num<double>("pgd_step_size", spec.pgd_step_size);
  std::optional<corruption::AttackerCritic> attacker;
  if (auto path = p.find("attacker")) attacker = corruption::AttackerCritic::load(*path);
  const env::Dataset out = corruption::corrupt(clean, spec, attacker ? &*attacker : nullptr);
  env::save_dataset(out, p.required("out"));
  std::size_t touched = 0;
  for (std::uint8_t l : out.labels()) touched += l != 0;
  std::cout << "corrupted " << touched << " of " << out.size() << " transitions ("
            << eval::corruption_label(out.corruption_spec()) << ")\n";
  return 0;
}

int pretrain_attacker_cmd(const Params& p) {
  const env::Dataset clean = env::load_dataset(p.required("data"));
  corruption::AttackerConfig cfg;
  cfg.seed = p.seed();
  cfg.epochs = p.num<int>("epochs", cfg.epochs);
  cfg.steps_per_epoch = p.num<int>("steps_per_epoch", cfg.steps_per_epoch);
  cfg.ensemble = p.num<int>("ensemble", cfg.ensemble);
  cfg.hidden = p.num<Eigen::Index>("hidden", cfg.hidden);
  cfg.batch = p.num<std::size_t>("batch", cfg.batch);
  cfg.lr = p.num<double>("lr", cfg.lr);
  corruption::AttackerTrainingLog log;
  corruption::AttackerCritic attacker = corruption::pretrain_attacker(clean, cfg, &log);
  const fs::path out = p.required("out");
  attacker.save(out);
  std::ofstream csv(out / "training_log.csv");
  csv << "epoch,bc_holdout_mse,td_loss\n";
  for (std::size_t e = 0; e < log.td_loss.size(); ++e) {
    csv << e + 1 << ',' << log.bc_holdout_mse[e] << ',' << log.td_loss[e] << '\n';
  }
  std::cout << "attacker saved to " << out << " (final held-out BC MSE " << log.bc_holdout_mse.back() << ")\n";
  return 0;
}

int train_cmd(const Params& p, const std::vector<std::string>& sets) {
  const env::Dataset ds = env::load_dataset(p.required("data"));
  std::map<std::string, std::string> kv = p.extras();
  for (const char* key : {"algorithm", "preset", "epochs", "updates_per_epoch", "batch"}) {
    if (auto v = p.find(key)) kv[key] = *v;
  }
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  kv["seed"] = std::to_string(p.seed());
  if (!kv.contains("preset")) kv["preset"] = "desk";
  const train::TrainConfig cfg = train::config_from_map(kv);
  const fs::path run = p.required("run");
  fs::create_directories(run);
  write_json(run / "run_info.json", {{"env", env::env_name(ds.env())},
                                      {"data", fs::absolute(p.required("data")).string()},
                                      {"corruption", eval::corruption_label(ds.corruption_spec())},
                                      {"algorithm", train::algorithm_name(cfg.algorithm)},
                                      {"seed", cfg.seed}});
  train::RunOptions opts;
  opts.resume = p.num<int>("resume", 0) != 0;
  opts.on_epoch = [&](const train::EpochMetrics& m) {
    std::cout << "epoch " << m.epoch << "/" << cfg.epochs << " td " << m.mean.td_loss << " value "
              << m.mean.value_loss << " policy " << m.mean.policy_loss << " H " << m.mean.mean_entropy << " w "
              << m.mean.mean_weight << std::endl;
  };
  const auto result = train::run_training(ds.training_view(), cfg, run, opts);
  std::cout << "final checkpoint " << result.final_checkpoint.string() << '\n';
  return 0;
}

int eval_cmd(const Params& p) {
  const fs::path ckpt_dir = resolve_checkpoint(p);
  const nn::Checkpoint ckpt = nn::load_checkpoint(ckpt_dir);
  train::Learner learner = train::learner_from_checkpoint(ckpt);
  const env::EnvId id = env::parse_env(p.str("env", ckpt.metadata.value("env", std::string("point_mass"))));
  const env::Environment e(id);
  if (e.state_dim() != learner.state_dim() || e.action_dim() != learner.action_dim()) {
    throw ConfigError("checkpoint dimensions do not match environment " + env::env_name(id));
  }
  const auto seed = p.seed();
  const int num_seeds = p.num<int>("num_seeds", 4);
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < num_seeds; ++k) seeds.push_back(seed + static_cast<std::uint64_t>(k));
  eval::EvalReport rep = eval::evaluate_policy([&](const env::State& s) { return learner.act(s); }, id,
                                               p.num<int>("episodes", 100), seeds);
  rep.fingerprint = {{"checkpoint", fs::absolute(ckpt_dir).string()},
                     {"step", ckpt.step},
                     {"config", ckpt.metadata.at("config")}};
  const fs::path out = p.find("out") ? fs::path(*p.find("out")) : ckpt_dir.parent_path() / "eval.json";
  write_json(out, eval::to_json(rep));
  std::cout << "normalized score " << rep.normalized_score << " +- " << rep.stderr_score << " (return "
            << rep.mean_return << ") -> " << out.string() << '\n';
  return 0;
}

int probe_cmd(const Params& p) {
  const env::Dataset ds = env::load_dataset(p.required("data"));
  if (!ds.has_labels()) throw ConfigError("entropy-probe: dataset " + p.required("data") + " has no labels");
  eval::ProbeOptions opts;
  opts.seed = p.seed();
  opts.batches = p.num<int>("batches", 500);
  opts.per_group = p.num<int>("per_group", 32);

  std::vector<std::pair<int, fs::path>> points;
  if (auto c = p.find("checkpoint")) {
    points.emplace_back(-1, *c);
  } else {
    const fs::path run = p.required("run");
    std::vector<int> epochs;
    for (const auto& entry : fs::directory_iterator(run)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_directory() && name.rfind("ckpt_", 0) == 0) epochs.push_back(std::stoi(name.substr(5)));
    }
    std::sort(epochs.begin(), epochs.end());
    for (int e : epochs) points.emplace_back(e, train::checkpoint_dir(run, e));
  }
  if (points.empty()) throw ConfigError("entropy-probe: no checkpoints to probe");
  const fs::path out_dir = p.find("out") ? fs::path(*p.find("out"))
                                         : (p.find("run") ? fs::path(*p.find("run")) : points[0].second.parent_path());
  fs::create_directories(out_dir);
  std::ofstream series(out_dir / "probe.csv");
  series << "epoch,accuracy,clean_mean_entropy,corrupted_mean_entropy,ties\n" << std::setprecision(17);
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& [epoch, dir] : points) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(dir);
    train::Learner learner = train::learner_from_checkpoint(ckpt);
    const int e = epoch >= 0 ? epoch : ckpt.metadata.value("epoch", 0);
    const eval::ProbeResult r = eval::entropy_probe(learner, ds, opts);
    const auto j = eval::to_json(r);
    series << e << ',' << r.accuracy << ',' << j["clean_mean_entropy"].get<double>() << ','
           << j["corrupted_mean_entropy"].get<double>() << ',' << r.ties << '\n';
    std::ofstream traces(out_dir / ("probe_traces_" + std::to_string(e) + ".csv"));
    traces << "batch,clean_mean_entropy,corrupted_mean_entropy\n" << std::setprecision(17);
    for (std::size_t b = 0; b < r.clean_mean_entropy.size(); ++b) {
      traces << b << ',' << r.clean_mean_entropy[b] << ',' << r.corrupted_mean_entropy[b] << '\n';
    }
    nlohmann::json row = j;
    row["epoch"] = e;
    summary.push_back(row);
    std::cout << "epoch " << e << " accuracy " << r.accuracy << " (" << r.comparisons << " batches)\n";
  }
  write_json(out_dir / "probe.json", summary);
  return 0;
}

int report_cmd(const Params& p, const std::vector<std::string>& runs) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  if (auto extra = p.find("runs")) {
    std::istringstream in(*extra);
    for (std::string d; std::getline(in, d, ',');) {
      if (!d.empty()) dirs.emplace_back(d);
    }
  }
  const auto result = eval::report(dirs, p.required("out"));
  std::cout << result.rows.size() << " groups, " << result.missing.size() << " missing runs\n";
  for (const auto& m : result.missing) std::cout << "missing: " << m << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tracer_cli: datasets, corruption, training, evaluation and reports"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "collect a behavior dataset from a toy environment");
  Params gen_p(gen);
  gen_p.add("env", "point_mass or gaussian_bandit");
  gen_p.add("behavior", "mixed_pd, pd or uniform");
  gen_p.add("n", "number of transitions");
  gen_p.add("seed", "random seed (required)");
  gen_p.add("out", "output dataset directory");

  auto* cor = app.add_subcommand("corrupt", "corrupt a clean dataset");
  Params cor_p(cor);
  for (const char* k : {"in", "out", "mode", "elements", "rate", "scale", "seed", "attacker", "pgd_steps",
                        "pgd_step_size"}) {
    cor_p.add(k, "");
  }

  auto* att = app.add_subcommand("pretrain-attacker", "fit the frozen critic used by adversarial corruption");
  Params att_p(att);
  for (const char* k : {"data", "out", "seed", "epochs", "steps_per_epoch", "ensemble", "hidden", "batch", "lr"}) {
    att_p.add(k, "");
  }

  auto* tr = app.add_subcommand("train", "train tracer, driql, riql or iql");
  Params tr_p(tr);
  for (const char* k : {"data", "run", "seed", "algorithm", "preset", "epochs", "updates_per_epoch", "batch", "resume"}) {
    tr_p.add(k, "");
  }
  std::vector<std::string> sets;
  tr->add_option("--set", sets, "training config override key=value (repeatable)");

  auto* ev = app.add_subcommand("eval", "evaluate a policy in the clean environment");
  Params ev_p(ev);
  for (const char* k : {"run", "checkpoint", "env", "episodes", "seed", "num_seeds", "out"}) ev_p.add(k, "");

  auto* pr = app.add_subcommand("entropy-probe", "entropy accuracy of clean vs corrupted rows");
  Params pr_p(pr);
  for (const char* k : {"run", "checkpoint", "data", "seed", "batches", "per_group", "out"}) pr_p.add(k, "");

  auto* rep = app.add_subcommand("report", "aggregate runs into summary and curve files");
  Params rep_p(rep);
  rep_p.add("out", "output directory");
  rep_p.add("runs", "comma-separated run directories");
  std::vector<std::string> run_args;
  rep->add_option("run_dirs", run_args, "run directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return gen_p.load(), gen_data(gen_p);
    if (cor->parsed()) return cor_p.load(), corrupt_cmd(cor_p);
    if (att->parsed()) return att_p.load(), pretrain_attacker_cmd(att_p);
    if (tr->parsed()) return tr_p.load(true), train_cmd(tr_p, sets);
    if (ev->parsed()) return ev_p.load(), eval_cmd(ev_p);
    if (pr->parsed()) return pr_p.load(), probe_cmd(pr_p);
    if (rep->parsed()) return rep_p.load(), report_cmd(rep_p, run_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
