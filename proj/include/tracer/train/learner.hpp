#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "tracer/bayes/observation.hpp"
#include "tracer/critic/losses.hpp"
#include "tracer/critic/quantile_net.hpp"
#include "tracer/entropy/entropy.hpp"
#include "tracer/env/batch.hpp"
#include "tracer/nn/checkpoint.hpp"
#include "tracer/nn/optim.hpp"
#include "tracer/policy/gaussian_policy.hpp"
#include "tracer/train/config.hpp"

namespace tracer::train {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

struct StepTelemetry {
  double td_loss = 0.0;
  double bayes_loss = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double mean_entropy = 0.0;
  double mean_weight = 1.0;
  double eta = 0.0;
};

// Affine state normalization; identity unless enabled.
struct StateNormalizer {
  nn::RowVector mean;
  nn::RowVector scale;

  static StateNormalizer identity(Eigen::Index dim) {
    return {nn::RowVector::Zero(dim), nn::RowVector::Ones(dim)};
  }

  static StateNormalizer fit(const env::TransitionView& view) {
    const env::Batch all = env::gather(view, env::all_indices(view.size()));
    StateNormalizer n;
    n.mean = all.states.colwise().mean();
    const Tensor centered = all.states.rowwise() - n.mean;
    n.scale = (centered.array().square().colwise().mean().sqrt() + 1e-3).matrix();
    return n;
  }

  Tensor apply(const Tensor& states) const {
    return ((states.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

namespace detail {

inline constexpr std::uint64_t kInitCritic = 1, kInitValue = 2, kInitPolicy = 3, kInitHeads = 4;
inline constexpr std::uint64_t kBatchStream = 11, kTauStream = 12, kNoiseStream = 13;

inline std::vector<Parameter*> params_of(std::vector<critic::QuantileNet>& nets) {
  std::vector<Parameter*> out;
  for (auto& n : nets) {
    auto p = n.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline std::vector<Parameter*> params_of(nn::Mlp& net) {
  std::vector<Parameter*> out;
  net.collect(out);
  return out;
}

inline std::string rng_state(const nn::Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

inline void set_rng_state(nn::Rng& rng, const std::string& s) {
  std::istringstream in(s);
  in >> rng;
  if (in.fail()) throw FormatError("checkpoint: bad generator state");
}

inline void require_finite_loss(double v, const char* component, std::int64_t step) {
  if (!std::isfinite(v)) {
    throw NonFiniteError(std::string("non-finite ") + component + " loss at step " + std::to_string(step));
  }
}

}  // namespace detail

// All learnable state of one training run plus its generators.
class Learner {
 public:
  Learner(const TrainConfig& cfg, int state_dim, int action_dim)
      : cfg_(cfg), ds_(state_dim), da_(action_dim), normalizer_(StateNormalizer::identity(state_dim)) {
    cfg_.validate();
    const std::uint64_t seed = cfg_.seed;
    nn::Rng critic_rng = nn::make_rng(seed, detail::kInitCritic);
    nn::Rng value_rng = nn::make_rng(seed, detail::kInitValue);
    nn::Rng policy_rng = nn::make_rng(seed, detail::kInitPolicy);
    nn::Rng heads_rng = nn::make_rng(seed, detail::kInitHeads);
    batch_rng_ = nn::make_rng(seed, detail::kBatchStream);
    tau_rng_ = nn::make_rng(seed, detail::kTauStream);
    noise_rng_ = nn::make_rng(seed, detail::kNoiseStream);

    const nn::AdamOptions adam{.lr = cfg_.lr};
    if (cfg_.distributional()) {
      const critic::QuantileNetShape shape{cfg_.hidden, cfg_.trunk_layers, cfg_.embed_dim, cfg_.tau_basis,
                                           cfg_.head_hidden_layers};
      for (int i = 0; i < cfg_.ensemble; ++i) {
        critics_.emplace_back("critic" + std::to_string(i), ds_ + da_ + 1, shape, critic_rng);
      }
      critic_targets_ = critics_;
      value_ = critic::QuantileNet("value", ds_, shape, value_rng);
      value_target_ = value_;
      for (auto& c : critics_) critic_opts_.emplace_back(c.parameters(), adam);
      value_opt_ = nn::Adam(value_.parameters(), adam);
      if (cfg_.algorithm == Algorithm::tracer) {
        heads_ = bayes::ObservationHeads("obs", cfg_.quantiles, ds_, da_, cfg_.obs_hidden, heads_rng);
        heads_opt_ = nn::Adam(heads_.parameters(), adam);
      }
    } else {
      std::vector<Eigen::Index> qdims{ds_ + da_}, vdims{ds_};
      for (int i = 0; i + 1 < cfg_.trunk_layers; ++i) {
        qdims.push_back(cfg_.hidden);
        vdims.push_back(cfg_.hidden);
      }
      qdims.push_back(1);
      vdims.push_back(1);
      for (int i = 0; i < cfg_.critic_count(); ++i) q_.emplace_back("q" + std::to_string(i), qdims, critic_rng);
      q_targets_ = q_;
      v_ = nn::Mlp("v", vdims, value_rng);
      v_target_ = v_;
      for (auto& q : q_) critic_opts_.emplace_back(detail::params_of(q), adam);
      value_opt_ = nn::Adam(detail::params_of(v_), adam);
    }
    policy_ = policy::GaussianPolicy("policy", ds_, da_, cfg_.hidden, cfg_.policy_layers, policy_rng);
    policy_opt_ = nn::Adam(policy_.parameters(), adam);
  }

  const TrainConfig& config() const { return cfg_; }
  std::int64_t steps() const { return step_; }
  int state_dim() const { return ds_; }
  int action_dim() const { return da_; }
  policy::GaussianPolicy& policy() { return policy_; }
  const StateNormalizer& normalizer() const { return normalizer_; }
  void set_normalizer(StateNormalizer n) { normalizer_ = std::move(n); }
  std::vector<critic::QuantileNet>& critics() { return critics_; }
  critic::QuantileNet& value_net() { return value_; }
  bayes::ObservationHeads& heads() { return heads_; }

  // Uniform minibatch (with replacement) from the learner-facing view.
  env::Batch sample_batch(const env::TransitionView& view) {
    return env::gather(view, env::sample_indices(batch_rng_, view.size(), static_cast<std::size_t>(cfg_.batch)));
  }

  // One update: critic -> value -> policy, then targets on schedule.
  StepTelemetry step(const env::Batch& raw) {
    env::Batch b = raw;
    b.states = normalizer_.apply(raw.states);
    b.next_states = normalizer_.apply(raw.next_states);
    StepTelemetry t = cfg_.distributional() ? step_distributional(b) : step_scalar(b);
    ++step_;
    if (step_ % cfg_.target_update_every == 0) update_targets();
    return t;
  }

  // Action for a raw (unnormalized) state.
  std::vector<double> act(const std::vector<double>& state) {
    Tensor s(1, ds_);
    for (int d = 0; d < ds_; ++d) s(0, d) = state[static_cast<std::size_t>(d)];
    const Tensor a = policy_.act(normalizer_.apply(s));
    return std::vector<double>(a.data(), a.data() + a.size());
  }

  // Quantiles of every critic member at the batch rows, on a shared grid.
  std::vector<Tensor> member_quantiles(const env::Batch& raw, const std::vector<double>& taus) {
    if (!cfg_.distributional()) throw ConfigError("member_quantiles: learner has no distributional critic");
    const Tensor x = critic_input(normalizer_.apply(raw.states), raw.actions, raw.rewards);
    std::vector<Tensor> out;
    for (auto& c : critics_) out.push_back(c.predict(x, taus));
    return out;
  }

  // Per-row entropy averaged over members.
  std::vector<double> row_entropy(const env::Batch& raw, const std::vector<double>& taus) {
    const auto qs = member_quantiles(raw, taus);
    std::vector<double> out(static_cast<std::size_t>(raw.size()), 0.0);
    for (const Tensor& q : qs) {
      const auto h = entropy::estimate_entropy_rows(taus, q, cfg_.entropy_variant);
      for (std::size_t r = 0; r < out.size(); ++r) out[r] += h[r] / static_cast<double>(qs.size());
    }
    return out;
  }

  nn::Checkpoint to_checkpoint();
  void restore(const nn::Checkpoint& c);

 private:
  static Tensor critic_input(const Tensor& s, const Tensor& a, const Tensor& r) {
    Tensor x(s.rows(), s.cols() + a.cols() + 1);
    x << s, a, r;
    return x;
  }

  static Tensor td_target(const env::Batch& b, const Tensor& next_values, double gamma) {
    Tensor y = gamma * next_values;
    y.array().colwise() *= (1.0 - b.dones.col(0).array());
    y.array().colwise() += b.rewards.col(0).array();
    return y;
  }

  StepTelemetry step_distributional(const env::Batch& b);
  StepTelemetry step_scalar(const env::Batch& b);

  void update_targets() {
    if (cfg_.distributional()) {
      nn::polyak_update(detail::params_of(critic_targets_), detail::params_of(critics_), cfg_.polyak);
      nn::polyak_update(value_target_.parameters(), value_.parameters(), cfg_.polyak);
    } else {
      for (std::size_t i = 0; i < q_.size(); ++i) {
        nn::polyak_update(detail::params_of(q_targets_[i]), detail::params_of(q_[i]), cfg_.polyak);
      }
      nn::polyak_update(detail::params_of(v_target_), detail::params_of(v_), cfg_.polyak);
    }
  }

  Tensor policy_step(const env::Batch& b, const Tensor& advantage, StepTelemetry& t) {
    auto params = policy_.parameters();
    nn::zero_grads(params);
    Tape tape;
    Var loss = policy::awr_loss(policy_, tape, b.states, b.actions, advantage, cfg_.beta);
    detail::require_finite_loss(loss.value()(0, 0), "policy", step_);
    tape.backward(loss);
    nn::check_finite_grads(params);
    policy_opt_.step(params);
    t.policy_loss = loss.value()(0, 0);
    return advantage;
  }

  TrainConfig cfg_;
  int ds_ = 0, da_ = 0;
  StateNormalizer normalizer_;

  std::vector<critic::QuantileNet> critics_, critic_targets_;
  critic::QuantileNet value_, value_target_;
  bayes::ObservationHeads heads_;

  std::vector<nn::Mlp> q_, q_targets_;
  nn::Mlp v_, v_target_;

  policy::GaussianPolicy policy_;

  std::vector<nn::Adam> critic_opts_;
  nn::Adam heads_opt_, value_opt_, policy_opt_;

  nn::Rng batch_rng_, tau_rng_, noise_rng_;
  std::int64_t step_ = 0;
};

inline StepTelemetry Learner::step_distributional(const env::Batch& b) {
  StepTelemetry t;
  const bool bayes_on = cfg_.algorithm == Algorithm::tracer;
  const auto taus = critic::sample_taus(tau_rng_, static_cast<std::size_t>(cfg_.quantiles));
  const auto taus_next = critic::sample_taus(tau_rng_, static_cast<std::size_t>(cfg_.next_quantiles));
  const double eta = bayes_on ? bayes::eta_at(step_, cfg_.total_steps(), cfg_.eta_start, cfg_.eta_end) : 0.0;
  t.eta = eta;
  const Eigen::Index bs = b.size();
  const Tensor x_in = critic_input(b.states, b.actions, b.rewards);
  const Tensor target = td_target(b, value_target_.predict(b.next_states, taus_next), cfg_.gamma);
  const auto k = critics_.size();

  // critic (+ observation heads)
  {
    auto critic_params = detail::params_of(critics_);
    nn::zero_grads(critic_params);
    std::vector<Parameter*> head_params;
    if (bayes_on) {
      head_params = heads_.parameters();
      nn::zero_grads(head_params);
    }
    Tape tape;
    const Var x = tape.constant(x_in);
    const Var s = tape.constant(b.states), a = tape.constant(b.actions), r = tape.constant(b.rewards);
    const Var s_next = tape.constant(b.next_states);

    std::vector<Var> d(k);
    std::vector<Tensor> dv(k);
    for (std::size_t i = 0; i < k; ++i) {
      d[i] = critics_[i].forward(tape, x, taus);
      dv[i] = d[i].value();
    }

    // Entropy weights from the current outputs, before any update; constants.
    const double normalizer = entropy::batch_sample_mean(dv);
    std::vector<Tensor> weights(k, Tensor::Ones(bs, 1));
    double entropy_total = 0.0, weight_total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto h = entropy::estimate_entropy_rows(taus, dv[i], cfg_.entropy_variant);
      for (Eigen::Index row = 0; row < bs; ++row) {
        const double hr = h[static_cast<std::size_t>(row)];
        entropy_total += hr;
        if (bayes_on && cfg_.entropy_weighting) {
          weights[i](row, 0) = entropy::entropy_weight(entropy::normalize_entropy(hr, normalizer));
        }
        weight_total += weights[i](row, 0);
      }
    }
    t.mean_entropy = entropy_total / static_cast<double>(k * static_cast<std::size_t>(bs));
    t.mean_weight = weight_total / static_cast<double>(k * static_cast<std::size_t>(bs));

    Var total;
    double td_sum = 0.0, bayes_sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      Var member = nn::mean(critic::quantile_huber_loss(d[i], target, taus, cfg_.kappa));
      td_sum += member.value()(0, 0);
      if (bayes_on) {
        const bayes::HeadOutputs h = heads_.forward(tape, d[i], s, a, r, s_next);
        const Var first = bayes::loss_first(h, s, a, r);
        const Tensor noise_s = nn::normal_tensor(noise_rng_, bs, ds_);
        const Tensor noise_a = nn::normal_tensor(noise_rng_, bs, da_);
        const Tensor noise_r = nn::normal_tensor(noise_rng_, bs, 1);
        const bayes::Reconstructions rec{bayes::reparam_sample(h.state, noise_s),
                                         bayes::reparam_sample(h.action, noise_a),
                                         bayes::reparam_sample(h.reward, noise_r)};
        const Var second = bayes::loss_second(critics_[i], s, a, r, rec, taus, dv[i], cfg_.kappa);
        const Var per_sample = cfg_.eta_mode == EtaMode::joint
                                   ? nn::scale(nn::add(first, second), eta)
                                   : nn::add(nn::scale(first, eta), nn::scale(second, 1.0 - eta));
        const Var weighted = nn::mean(nn::mul(per_sample, tape.constant(weights[i])));
        bayes_sum += weighted.value()(0, 0);
        member = nn::add(member, weighted);
      }
      total = i == 0 ? member : nn::add(total, member);
    }
    detail::require_finite_loss(total.value()(0, 0), "critic", step_);
    tape.backward(total);
    nn::check_finite_grads(critic_params);
    for (std::size_t i = 0; i < k; ++i) critic_opts_[i].step(critics_[i].parameters());
    if (bayes_on) {
      nn::check_finite_grads(head_params);
      heads_opt_.step(head_params);
    }
    t.td_loss = td_sum / static_cast<double>(k);
    t.bayes_loss = bayes_sum / static_cast<double>(k);
  }

  // value distribution against the alpha-quantile of the target critics
  std::vector<Tensor> dt(k);
  for (std::size_t i = 0; i < k; ++i) dt[i] = critic_targets_[i].predict(x_in, taus);
  {
    const Tensor d_alpha = critic::alpha_quantile(dt, cfg_.alpha);
    auto params = value_.parameters();
    nn::zero_grads(params);
    Tape tape;
    Var z = value_.forward(tape, tape.constant(b.states), taus);
    Var loss = nn::mean(critic::value_expectile_loss(z, d_alpha, cfg_.nu));
    detail::require_finite_loss(loss.value()(0, 0), "value", step_);
    tape.backward(loss);
    nn::check_finite_grads(params);
    value_opt_.step(params);
    t.value_loss = loss.value()(0, 0);
  }

  // policy
  std::vector<Tensor> q(k);
  for (std::size_t i = 0; i < k; ++i) q[i] = critic::grid_mean(dt[i]);
  const Tensor q_alpha = critic::alpha_quantile(q, cfg_.alpha);
  const Tensor v = critic::grid_mean(value_.predict(b.states, taus));
  policy_step(b, q_alpha - v, t);
  return t;
}

inline StepTelemetry Learner::step_scalar(const env::Batch& b) {
  StepTelemetry t;
  const bool iql = cfg_.algorithm == Algorithm::iql;
  const double alpha = iql ? 0.0 : cfg_.alpha;
  Tensor sa(b.size(), ds_ + da_);
  sa << b.states, b.actions;
  const Tensor target = td_target(b, v_target_.predict(b.next_states), cfg_.gamma);

  {
    std::vector<Parameter*> all;
    for (auto& q : q_) q.collect(all);
    nn::zero_grads(all);
    Tape tape;
    const Var x = tape.constant(sa);
    Var total;
    double td_sum = 0.0;
    for (std::size_t i = 0; i < q_.size(); ++i) {
      Var residual = nn::sub(tape.constant(target), q_[i].forward(tape, x));
      Var member = iql ? nn::mean(nn::square(residual)) : nn::mean(critic::huber(residual, cfg_.kappa));
      td_sum += member.value()(0, 0);
      total = i == 0 ? member : nn::add(total, member);
    }
    detail::require_finite_loss(total.value()(0, 0), "critic", step_);
    tape.backward(total);
    nn::check_finite_grads(all);
    for (std::size_t i = 0; i < q_.size(); ++i) critic_opts_[i].step(detail::params_of(q_[i]));
    t.td_loss = td_sum / static_cast<double>(q_.size());
  }

  std::vector<Tensor> qt(q_.size());
  for (std::size_t i = 0; i < q_.size(); ++i) qt[i] = q_targets_[i].predict(sa);
  const Tensor q_alpha = critic::alpha_quantile(qt, alpha);
  {
    auto params = detail::params_of(v_);
    nn::zero_grads(params);
    Tape tape;
    Var v = v_.forward(tape, tape.constant(b.states));
    Var loss = nn::mean(critic::expectile(nn::sub(tape.constant(q_alpha), v), cfg_.nu));
    detail::require_finite_loss(loss.value()(0, 0), "value", step_);
    tape.backward(loss);
    nn::check_finite_grads(params);
    value_opt_.step(params);
    t.value_loss = loss.value()(0, 0);
  }
  policy_step(b, q_alpha - v_.predict(b.states), t);
  return t;
}

namespace detail {

inline void add_adam(nn::Checkpoint& c, const std::string& module, nn::Adam& opt,
                     const std::vector<Parameter*>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.add(module, params[i]->name + ".m", opt.first_moments()[i]);
    c.add(module, params[i]->name + ".v", opt.second_moments()[i]);
  }
  c.metadata["adam_steps"][module] = opt.steps();
}

inline void restore_adam(const nn::Checkpoint& c, const std::string& module, nn::Adam& opt,
                         const std::vector<Parameter*>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto r = params[i]->value.rows(), cols = params[i]->value.cols();
    opt.first_moments()[i] = c.tensor(module, params[i]->name + ".m", r, cols);
    opt.second_moments()[i] = c.tensor(module, params[i]->name + ".v", r, cols);
  }
  opt.set_steps(c.metadata.at("adam_steps").at(module).get<std::int64_t>());
}

}  // namespace detail

inline nn::Checkpoint Learner::to_checkpoint() {
  nn::Checkpoint c;
  c.step = step_;
  c.metadata["kind"] = "learner";
  c.metadata["config"] = cfg_.to_map();
  c.metadata["state_dim"] = ds_;
  c.metadata["action_dim"] = da_;
  c.metadata["rng"] = {{"batch", detail::rng_state(batch_rng_)},
                       {"tau", detail::rng_state(tau_rng_)},
                       {"noise", detail::rng_state(noise_rng_)}};
  c.add("normalizer", "mean", normalizer_.mean);
  c.add("normalizer", "scale", normalizer_.scale);
  if (cfg_.distributional()) {
    for (std::size_t i = 0; i < critics_.size(); ++i) {
      const std::string id = std::to_string(i);
      c.add_params("critic." + id, critics_[i].parameters());
      c.add_params("critic_target." + id, critic_targets_[i].parameters());
      detail::add_adam(c, "adam.critic." + id, critic_opts_[i], critics_[i].parameters());
    }
    c.add_params("value", value_.parameters());
    c.add_params("value_target", value_target_.parameters());
    detail::add_adam(c, "adam.value", value_opt_, value_.parameters());
    if (cfg_.algorithm == Algorithm::tracer) {
      c.add_params("heads", heads_.parameters());
      detail::add_adam(c, "adam.heads", heads_opt_, heads_.parameters());
    }
  } else {
    for (std::size_t i = 0; i < q_.size(); ++i) {
      const std::string id = std::to_string(i);
      c.add_params("q." + id, detail::params_of(q_[i]));
      c.add_params("q_target." + id, detail::params_of(q_targets_[i]));
      detail::add_adam(c, "adam.q." + id, critic_opts_[i], detail::params_of(q_[i]));
    }
    c.add_params("v", detail::params_of(v_));
    c.add_params("v_target", detail::params_of(v_target_));
    detail::add_adam(c, "adam.v", value_opt_, detail::params_of(v_));
  }
  c.add_params("policy", policy_.parameters());
  detail::add_adam(c, "adam.policy", policy_opt_, policy_.parameters());
  return c;
}

inline void Learner::restore(const nn::Checkpoint& c) {
  if (c.metadata.value("kind", "") != "learner") throw FormatError("checkpoint is not a learner checkpoint");
  if (c.metadata.at("state_dim").get<int>() != ds_ || c.metadata.at("action_dim").get<int>() != da_) {
    throw FormatError("checkpoint dimensions do not match the environment");
  }
  step_ = c.step;
  detail::set_rng_state(batch_rng_, c.metadata.at("rng").at("batch").get<std::string>());
  detail::set_rng_state(tau_rng_, c.metadata.at("rng").at("tau").get<std::string>());
  detail::set_rng_state(noise_rng_, c.metadata.at("rng").at("noise").get<std::string>());
  normalizer_.mean = c.tensor("normalizer", "mean", 1, ds_);
  normalizer_.scale = c.tensor("normalizer", "scale", 1, ds_);
  if (cfg_.distributional()) {
    for (std::size_t i = 0; i < critics_.size(); ++i) {
      const std::string id = std::to_string(i);
      c.restore_params("critic." + id, critics_[i].parameters());
      c.restore_params("critic_target." + id, critic_targets_[i].parameters());
      detail::restore_adam(c, "adam.critic." + id, critic_opts_[i], critics_[i].parameters());
    }
    c.restore_params("value", value_.parameters());
    c.restore_params("value_target", value_target_.parameters());
    detail::restore_adam(c, "adam.value", value_opt_, value_.parameters());
    if (cfg_.algorithm == Algorithm::tracer) {
      c.restore_params("heads", heads_.parameters());
      detail::restore_adam(c, "adam.heads", heads_opt_, heads_.parameters());
    }
  } else {
    for (std::size_t i = 0; i < q_.size(); ++i) {
      const std::string id = std::to_string(i);
      c.restore_params("q." + id, detail::params_of(q_[i]));
      c.restore_params("q_target." + id, detail::params_of(q_targets_[i]));
      detail::restore_adam(c, "adam.q." + id, critic_opts_[i], detail::params_of(q_[i]));
    }
    c.restore_params("v", detail::params_of(v_));
    c.restore_params("v_target", detail::params_of(v_target_));
    detail::restore_adam(c, "adam.v", value_opt_, detail::params_of(v_));
  }
  c.restore_params("policy", policy_.parameters());
  detail::restore_adam(c, "adam.policy", policy_opt_, policy_.parameters());
}

// Rebuilds a learner (config, dimensions, all state) from a checkpoint.
inline Learner learner_from_checkpoint(const nn::Checkpoint& c) {
  const auto cfg = config_from_map(c.metadata.at("config").get<std::map<std::string, std::string>>());
  Learner l(cfg, c.metadata.at("state_dim").get<int>(), c.metadata.at("action_dim").get<int>());
  l.restore(c);
  return l;
}

}  // namespace tracer::train
