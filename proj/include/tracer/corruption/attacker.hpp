#pragma once

// Frozen pessimistic critic used by the adversarial attacks: an ensemble of
// Q-networks fitted by TD evaluation of the behavior data (min-over-ensemble
// bootstrap at the dataset's next action) plus a behavior-cloned
// deterministic policy head.

#include <algorithm>
#include <cmath>
#include <optional>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tracer/env/batch.hpp"
#include "tracer/nn/checkpoint.hpp"
#include "tracer/nn/layers.hpp"
#include "tracer/nn/optim.hpp"

namespace tracer::corruption {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct AttackerConfig {
  int ensemble = 4;
  Eigen::Index hidden = 64;
  Eigen::Index layers = 3;
  int epochs = 20;
  int steps_per_epoch = 100;
  std::size_t batch = 128;
  double lr = 1e-3;
  double gamma = 0.99;
  double polyak = 0.05;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct AttackerTrainingLog {
  std::vector<double> bc_holdout_mse;  // one entry per epoch
  std::vector<double> td_loss;         // mean TD loss per epoch
};

enum class AttackInput { state, action };

class AttackerCritic {
 public:
  AttackerCritic() = default;
  AttackerCritic(Eigen::Index state_dim, Eigen::Index action_dim, const AttackerConfig& cfg, nn::Rng& rng)
      : ds_(state_dim), da_(action_dim) {
    std::vector<Eigen::Index> qdims{ds_ + da_};
    std::vector<Eigen::Index> pdims{ds_};
    for (Eigen::Index i = 0; i + 1 < cfg.layers; ++i) {
      qdims.push_back(cfg.hidden);
      pdims.push_back(cfg.hidden);
    }
    qdims.push_back(1);
    pdims.push_back(da_);
    for (int k = 0; k < cfg.ensemble; ++k) q_.emplace_back("attacker.q" + std::to_string(k), qdims, rng);
    policy_ = nn::Mlp("attacker.pi", pdims, rng);
  }

  Eigen::Index state_dim() const { return ds_; }
  Eigen::Index action_dim() const { return da_; }
  int ensemble_size() const { return static_cast<int>(q_.size()); }
  std::vector<nn::Mlp>& q_networks() { return q_; }
  nn::Mlp& policy_network() { return policy_; }

  // Deterministic policy head pi_p(s) in [-1, 1].
  Tensor act(const Tensor& states) { return policy_.predict(states).array().tanh(); }

  // Ensemble-mean Q_p(s, a), one value per row.
  Tensor q_mean(const Tensor& states, const Tensor& actions) { return q_mean_and_grad(states, actions, std::nullopt).first; }

  // Ensemble-mean Q_p and, optionally, its gradient with respect to one input block.
  std::pair<Tensor, Tensor> q_mean_and_grad(const Tensor& states, const Tensor& actions,
                                            std::optional<AttackInput> wrt) {
    Tape tape;
    Var s = wrt == AttackInput::state ? tape.input(states) : tape.constant(states);
    Var a = wrt == AttackInput::action ? tape.input(actions) : tape.constant(actions);
    Var x = nn::concat_cols({s, a});
    Var total = q_[0].forward(tape, x);
    for (std::size_t k = 1; k < q_.size(); ++k) total = nn::add(total, q_[k].forward(tape, x));
    Var mean = nn::scale(total, 1.0 / static_cast<double>(q_.size()));
    if (!wrt) return {mean.value(), Tensor()};
    for (nn::Mlp& net : q_) {
      std::vector<Parameter*> ps;
      net.collect(ps);
      nn::zero_grads(ps);
    }
    tape.backward(nn::sum(mean));
    return {mean.value(), tape.grad(*wrt == AttackInput::state ? s : a)};
  }

  nn::Checkpoint to_checkpoint() {
    nn::Checkpoint c;
    c.metadata = {{"kind", "attacker"}, {"state_dim", ds_}, {"action_dim", da_}, {"ensemble", q_.size()},
                  {"hidden", q_[0].layers[0].out_dim()}, {"layers", q_[0].layers.size()}};
    for (std::size_t k = 0; k < q_.size(); ++k) {
      std::vector<Parameter*> ps;
      q_[k].collect(ps);
      c.add_params("q" + std::to_string(k), ps);
    }
    std::vector<Parameter*> ps;
    policy_.collect(ps);
    c.add_params("pi", ps);
    return c;
  }

  static AttackerCritic from_checkpoint(const nn::Checkpoint& c) {
    if (c.metadata.value("kind", "") != "attacker") throw FormatError("checkpoint is not an attacker critic");
    AttackerConfig cfg;
    cfg.ensemble = c.metadata.at("ensemble").get<int>();
    cfg.hidden = c.metadata.at("hidden").get<Eigen::Index>();
    cfg.layers = c.metadata.at("layers").get<Eigen::Index>();
    nn::Rng rng(0);
    AttackerCritic a(c.metadata.at("state_dim").get<Eigen::Index>(), c.metadata.at("action_dim").get<Eigen::Index>(),
                     cfg, rng);
    for (std::size_t k = 0; k < a.q_.size(); ++k) {
      std::vector<Parameter*> ps;
      a.q_[k].collect(ps);
      c.restore_params("q" + std::to_string(k), ps);
    }
    std::vector<Parameter*> ps;
    a.policy_.collect(ps);
    c.restore_params("pi", ps);
    return a;
  }

  void save(const std::filesystem::path& dir) { nn::save_checkpoint(to_checkpoint(), dir); }
  static AttackerCritic load(const std::filesystem::path& dir) { return from_checkpoint(nn::load_checkpoint(dir)); }

 private:
  Eigen::Index ds_ = 0, da_ = 0;
  std::vector<nn::Mlp> q_;
  nn::Mlp policy_;
};

namespace detail {

// Next action for bootstrapping: the following row's action when that row
// continues the same trajectory, otherwise the policy head's action.
inline Tensor next_actions(const env::Transitions& t, const std::vector<std::size_t>& rows, const Tensor& next_states,
                           AttackerCritic& attacker) {
  const Tensor fallback = attacker.act(next_states);
  Tensor out = fallback;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    if (t.dones[i] || i + 1 >= t.size()) continue;
    bool continues = true;
    for (int d = 0; d < t.state_dim && continues; ++d) continues = t.next_state(i)[d] == t.state(i + 1)[d];
    if (!continues) continue;
    for (int d = 0; d < t.action_dim; ++d) out(static_cast<Eigen::Index>(k), d) = t.action(i + 1)[d];
  }
  return out;
}

inline void require_finite(double v, const std::string& what, int epoch) {
  if (!std::isfinite(v)) {
    throw NonFiniteError("pretrain_attacker: non-finite " + what + " loss at epoch " + std::to_string(epoch));
  }
}

}  // namespace detail

inline AttackerCritic pretrain_attacker(const env::Dataset& clean, const AttackerConfig& cfg,
                                        AttackerTrainingLog* log = nullptr) {
  if (!clean.corruption_spec().is_null()) throw ConfigError("pretrain_attacker: dataset is already corrupted");
  const env::Transitions& t = clean.transitions();
  if (t.size() < 10) throw ConfigError("pretrain_attacker: dataset too small");

  nn::Rng init_rng = nn::make_rng(cfg.seed, 0x696e6974);
  nn::Rng rng = nn::make_rng(cfg.seed, 0x74726e);
  AttackerCritic attacker(t.state_dim, t.action_dim, cfg, init_rng);
  AttackerCritic target = attacker;

  std::vector<std::size_t> order = env::all_indices(t.size());
  std::shuffle(order.begin(), order.end(), rng);
  const auto holdout_n = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_fraction * t.size()));
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout_n));
  const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(holdout_n), order.end());
  const env::Batch holdout_batch = env::gather(t, holdout);

  std::vector<Parameter*> pi_params;
  attacker.policy_network().collect(pi_params);
  nn::Adam pi_opt(pi_params, {.lr = cfg.lr});
  std::vector<std::vector<Parameter*>> q_params(attacker.q_networks().size());
  std::vector<std::vector<Parameter*>> q_target_params(attacker.q_networks().size());
  std::vector<nn::Adam> q_opts;
  for (std::size_t k = 0; k < q_params.size(); ++k) {
    attacker.q_networks()[k].collect(q_params[k]);
    target.q_networks()[k].collect(q_target_params[k]);
    q_opts.emplace_back(q_params[k], nn::AdamOptions{.lr = cfg.lr});
  }

  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double td_total = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<std::size_t> rows(cfg.batch);
      for (auto& r : rows) r = train[pick(rng)];
      const env::Batch b = env::gather(t, rows);

      // behavior cloning
      {
        Tape tape;
        Var pred = nn::tanh(attacker.policy_network().forward(tape, tape.constant(b.states)));
        Var loss = nn::mean(nn::square(nn::sub(pred, tape.constant(b.actions))));
        detail::require_finite(loss.value()(0, 0), "behavior cloning", epoch);
        nn::zero_grads(pi_params);
        tape.backward(loss);
        nn::check_finite_grads(pi_params);
        pi_opt.step(pi_params);
      }

      // TD evaluation with a pessimistic (min) bootstrap
      const Tensor a_next = detail::next_actions(t, rows, b.next_states, attacker);
      Tensor next_in(b.size(), t.state_dim + t.action_dim);
      next_in << b.next_states, a_next;
      Tensor q_next = target.q_networks()[0].predict(next_in);
      for (std::size_t k = 1; k < q_params.size(); ++k) q_next = q_next.cwiseMin(target.q_networks()[k].predict(next_in));
      const Tensor y = b.rewards.array() + cfg.gamma * (1.0 - b.dones.array()) * q_next.array();
      Tensor in(b.size(), t.state_dim + t.action_dim);
      in << b.states, b.actions;
      for (std::size_t k = 0; k < q_params.size(); ++k) {
        Tape tape;
        Var q = attacker.q_networks()[k].forward(tape, tape.constant(in));
        Var loss = nn::mean(nn::square(nn::sub(q, tape.constant(y))));
        detail::require_finite(loss.value()(0, 0), "TD", epoch);
        td_total += loss.value()(0, 0);
        nn::zero_grads(q_params[k]);
        tape.backward(loss);
        nn::check_finite_grads(q_params[k]);
        q_opts[k].step(q_params[k]);
        nn::polyak_update(q_target_params[k], q_params[k], cfg.polyak);
      }
    }
    if (log != nullptr) {
      const Tensor pred = attacker.act(holdout_batch.states);
      log->bc_holdout_mse.push_back((pred - holdout_batch.actions).array().square().mean());
      log->td_loss.push_back(td_total / static_cast<double>(cfg.steps_per_epoch * q_params.size()));
    }
  }
  return attacker;
}

}  // namespace tracer::corruption
