#include "isee/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "isee/errors.hpp"

namespace isee {

AgentActionSpace::AgentActionSpace(const ToyEnv& env) {
  const auto& spec = env.spec();
  const auto& vocab = env.agent_vocab();
  auto add = [&](ActSet acts, std::string name) {
    actions_.push_back(std::move(acts));
    names_.push_back(std::move(name));
  };
  for (int d = 0; d < spec.num_domains(); ++d) {
    const auto& dn = spec.domains[d].name;
    ActSet all;
    for (int s = 0; s < spec.num_slots(d); ++s) {
      if (spec.slot(d, s).constrainable)
        add(ActSet{*vocab.find(Intent::request, d, s)}, "request-constraint(" + dn + "." + spec.slot(d, s).name + ")");
    }
    for (int s = 0; s < spec.num_slots(d); ++s) {
      if (!spec.slot(d, s).requestable) continue;
      const int a = *vocab.find(Intent::inform, d, s);
      add(ActSet{a}, "answer-request(" + dn + "." + spec.slot(d, s).name + ")");
      all.insert(a);
    }
    if (all.size() > 1) add(all, "answer-all(" + dn + ")");
    add(ActSet{*vocab.find(Intent::confirm, d, -1)}, "inform-count(" + dn + ")");
    if (spec.domains[d].bookable) add(ActSet{*vocab.find(Intent::book, d, -1)}, "book(" + dn + ")");
    add(ActSet{*vocab.find(Intent::no_match, d, -1)}, "no-offer(" + dn + ")");
  }
  add(ActSet{vocab.end_index()}, "bye");
}

std::optional<int> AgentActionSpace::index_of(const ActSet& acts) const {
  const auto it = std::find(actions_.begin(), actions_.end(), acts);
  if (it == actions_.end()) return std::nullopt;
  return static_cast<int>(it - actions_.begin());
}

AgentStateEncoder::AgentStateEncoder(const EnvSpec& spec, int user_vocab_size, int agent_vocab_size)
    : spec_(spec),
      goal_(goal_block_size(spec)),
      user_(static_cast<std::size_t>(user_vocab_size)),
      agent_(static_cast<std::size_t>(agent_vocab_size)),
      db_(static_cast<std::size_t>(spec.num_domains()) * kDbBuckets) {}

std::vector<double> AgentStateEncoder::encode(const AgentState& s) const {
  std::vector<double> x(size(), 0.0);
  const std::span all(x);
  encode_goal(spec_, s.goal_view, all.first(goal_));
  const auto user = all.subspan(goal_, user_);
  const auto agent = all.subspan(goal_ + user_, agent_);
  for (const auto& [u, a] : s.history) {
    or_pool(u, user);
    or_pool(a, agent);
  }
  or_pool(s.user_act, user);
  const auto db = all.subspan(goal_ + user_ + agent_);
  for (std::size_t d = 0; d < s.db_summary.size(); ++d)
    db[d * kDbBuckets + static_cast<std::size_t>(s.db_summary[d])] = 1.0;
  return x;
}

std::string to_string(LearnerKind kind) { return kind == LearnerKind::dqn ? "dqn" : "ppo"; }

LearnerKind learner_kind_from_string(const std::string& s) {
  if (s == "dqn") return LearnerKind::dqn;
  if (s == "ppo") return LearnerKind::ppo;
  throw ConfigError("unknown learner kind: " + s);
}

LearnerHyper LearnerHyper::from_config(const KeyValueConfig& cfg) {
  LearnerHyper h;
  h.hidden = cfg.get_uint("agent.hidden", h.hidden);
  h.lr = cfg.get_double("agent.lr", h.lr);
  h.gamma = cfg.get_double("agent.gamma", h.gamma);
  h.replay_capacity = cfg.get_uint("dqn.replay_capacity", h.replay_capacity);
  h.batch_size = cfg.get_uint("dqn.batch_size", h.batch_size);
  h.target_sync = cfg.get_int("dqn.target_sync", h.target_sync);
  h.eps_start = cfg.get_double("dqn.eps_start", h.eps_start);
  h.eps_end = cfg.get_double("dqn.eps_end", h.eps_end);
  h.eps_decay_steps = cfg.get_int("dqn.eps_decay_steps", h.eps_decay_steps);
  h.updates_per_transition = cfg.get_double("dqn.updates_per_transition", h.updates_per_transition);
  h.clip = cfg.get_double("ppo.clip", h.clip);
  h.ppo_epochs = static_cast<int>(cfg.get_int("ppo.epochs", h.ppo_epochs));
  h.ppo_minibatch = cfg.get_uint("ppo.minibatch", h.ppo_minibatch);
  h.normalize_advantages = cfg.get_bool("ppo.normalize_advantages", h.normalize_advantages);
  if (h.hidden == 0 || h.batch_size == 0 || h.replay_capacity == 0 || h.target_sync < 1 || h.ppo_minibatch == 0)
    throw ConfigError("learner sizes must be positive");
  if (h.gamma < 0.0 || h.gamma > 1.0) throw ConfigError("agent.gamma must be in [0, 1]");
  return h;
}

void LearnerHyper::write_config(KeyValueConfig& cfg) const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  cfg.set("agent.hidden", std::to_string(hidden));
  cfg.set("agent.lr", num(lr));
  cfg.set("agent.gamma", num(gamma));
  cfg.set("dqn.replay_capacity", std::to_string(replay_capacity));
  cfg.set("dqn.batch_size", std::to_string(batch_size));
  cfg.set("dqn.target_sync", std::to_string(target_sync));
  cfg.set("dqn.eps_start", num(eps_start));
  cfg.set("dqn.eps_end", num(eps_end));
  cfg.set("dqn.eps_decay_steps", std::to_string(eps_decay_steps));
  cfg.set("dqn.updates_per_transition", num(updates_per_transition));
  cfg.set("ppo.clip", num(clip));
  cfg.set("ppo.epochs", std::to_string(ppo_epochs));
  cfg.set("ppo.minibatch", std::to_string(ppo_minibatch));
  cfg.set("ppo.normalize_advantages", normalize_advantages ? "true" : "false");
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw ContractError("replay index out of range");
  return data_[(head_ + i) % data_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(RngStream& rng, std::size_t n) const {
  if (data_.empty()) throw ContractError("cannot sample an empty replay buffer");
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&data_[rng.below(data_.size())]);
  return out;
}

// ---------------------------------------------------------------------------

PolicyLearner make_learner(LearnerKind kind, std::size_t state_dim, int num_actions, const LearnerHyper& hyper,
                           const RngStream& rng) {
  PolicyLearner l;
  l.kind = kind;
  l.hyper = hyper;
  l.rng = rng.derive(0);
  const MlpDims dims{state_dim, hyper.hidden, static_cast<std::size_t>(num_actions)};
  if (kind == LearnerKind::dqn) {
    l.net = mlp_init(dims, Head::linear, rng.derive(1));
    l.aux = l.net;
  } else {
    l.net = mlp_init(dims, Head::softmax, rng.derive(1));
    l.aux = mlp_init({state_dim, hyper.hidden, 1}, Head::linear, rng.derive(2));
  }
  l.net_opt = AdamState::for_params(l.net);
  l.aux_opt = AdamState::for_params(l.aux);
  l.replay = ReplayBuffer(hyper.replay_capacity);
  return l;
}

double epsilon(const PolicyLearner& l) {
  const auto& h = l.hyper;
  if (h.eps_decay_steps <= 0 || l.act_steps >= h.eps_decay_steps) return h.eps_end;
  const double frac = static_cast<double>(l.act_steps) / static_cast<double>(h.eps_decay_steps);
  return h.eps_start + frac * (h.eps_end - h.eps_start);
}

int argmax_lowest(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

int select_action(PolicyLearner& l, std::span<const double> features, Mode mode) {
  const auto out = forward(l.net, features);
  if (mode == Mode::eval) return argmax_lowest(out);
  if (l.kind == LearnerKind::dqn) {
    const double eps = epsilon(l);
    ++l.act_steps;
    if (l.rng.uniform() < eps) return static_cast<int>(l.rng.below(out.size()));
    return argmax_lowest(out);
  }
  ++l.act_steps;
  double u = l.rng.uniform();
  for (std::size_t a = 0; a < out.size(); ++a) {
    u -= out[a];
    if (u < 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(out.size()) - 1;
}

double td_target(const MlpParams& target, const Transition& t, double gamma) {
  if (t.terminal) return t.reward;
  const auto q = forward(target, t.next_state);
  return t.reward + gamma * *std::max_element(q.begin(), q.end());
}

std::pair<double, Gradients> dqn_loss_and_grad(const MlpParams& online, const MlpParams& target,
                                               std::span<const Transition* const> batch, double gamma) {
  if (batch.empty()) throw ContractError("dqn update needs a non-empty batch");
  const double n = static_cast<double>(batch.size());
  auto grads = Gradients::zeros_like(online);
  ForwardCache cache;
  std::vector<double> dz(online.dims.out, 0.0);
  double loss = 0.0;
  for (const Transition* t : batch) {
    const double y = td_target(target, *t, gamma);
    forward(online, t->state, cache);
    const double err = cache.output.at(static_cast<std::size_t>(t->action)) - y;
    loss += err * err / n;
    std::fill(dz.begin(), dz.end(), 0.0);
    dz[static_cast<std::size_t>(t->action)] = 2.0 * err / n;
    backward_logits(online, t->state, cache, dz, grads);
  }
  return {loss, std::move(grads)};
}

double dqn_update(PolicyLearner& l, std::span<const Transition* const> batch, double gamma) {
  if (l.kind != LearnerKind::dqn) throw ContractError("dqn_update called on a non-DQN learner");
  auto [loss, grads] = dqn_loss_and_grad(l.net, l.aux, batch, gamma);
  AdamConfig adam;
  adam.lr = l.hyper.lr;
  adam_step(l.net, grads, l.net_opt, adam);
  ++l.updates;
  if (l.updates % l.hyper.target_sync == 0) l.aux = l.net;
  return loss;
}

std::pair<double, Gradients> ppo_surrogate_and_grad(const MlpParams& policy, std::span<const PpoSample> samples,
                                                    std::span<const double> advantages, double clip) {
  if (samples.empty()) throw ContractError("ppo update needs a non-empty batch");
  if (advantages.size() != samples.size()) throw ContractError("one advantage per sample required");
  const double n = static_cast<double>(samples.size());
  auto grads = Gradients::zeros_like(policy);
  ForwardCache cache;
  std::vector<double> dz(policy.dims.out);
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const double adv = advantages[i];
    forward(policy, s.state, cache);
    const auto a = static_cast<std::size_t>(s.action);
    const double rho = std::exp(std::log(cache.output.at(a)) - s.old_logp);
    const double unclipped = rho * adv;
    const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip) * adv;
    loss -= std::min(unclipped, clipped) / n;
    if (unclipped > clipped) continue;  // clipped branch is flat in the parameters
    // d(-rho*A/n)/d logits = -(A*rho/n) * (onehot(a) - pi)
    const double coef = -adv * rho / n;
    for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = coef * ((k == a ? 1.0 : 0.0) - cache.output[k]);
    backward_logits(policy, s.state, cache, dz, grads);
  }
  return {loss, std::move(grads)};
}

std::pair<double, Gradients> value_loss_and_grad(const MlpParams& value, std::span<const PpoSample> samples) {
  if (samples.empty()) throw ContractError("value update needs a non-empty batch");
  const double n = static_cast<double>(samples.size());
  auto grads = Gradients::zeros_like(value);
  ForwardCache cache;
  double loss = 0.0;
  std::vector<double> dz(1);
  for (const auto& s : samples) {
    forward(value, s.state, cache);
    const double err = cache.output[0] - s.ret;
    loss += err * err / n;
    dz[0] = 2.0 * err / n;
    backward_logits(value, s.state, cache, dz, grads);
  }
  return {loss, std::move(grads)};
}

double ppo_update(PolicyLearner& l, std::span<const PpoSample> samples, double clip, int epochs) {
  if (l.kind != LearnerKind::ppo) throw ContractError("ppo_update called on a non-PPO learner");
  if (samples.empty()) throw ContractError("ppo update needs a non-empty batch");
  for (const auto& s : samples)
    if (!std::isfinite(s.old_logp)) throw ContractError("ppo update needs the old log-probabilities");

  std::vector<double> adv(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) adv[i] = samples[i].ret - forward(l.aux, samples[i].state)[0];
  if (l.hyper.normalize_advantages && adv.size() > 1) {
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
    double var = 0.0;
    for (const double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(adv.size()));
    for (auto& a : adv) a = (a - mean) / (sd + 1e-8);
  }

  AdamConfig adam;
  adam.lr = l.hyper.lr;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PpoSample> mb;
  std::vector<double> mb_adv;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    l.rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += l.hyper.ppo_minibatch) {
      const auto stop = std::min(order.size(), start + l.hyper.ppo_minibatch);
      mb.clear();
      mb_adv.clear();
      for (auto i = start; i < stop; ++i) {
        mb.push_back(samples[order[i]]);
        mb_adv.push_back(adv[order[i]]);
      }
      auto [surrogate, pg] = ppo_surrogate_and_grad(l.net, mb, mb_adv, clip);
      adam_step(l.net, pg, l.net_opt, adam);
      ++l.updates;
      auto [vloss, vg] = value_loss_and_grad(l.aux, mb);
      adam_step(l.aux, vg, l.aux_opt, adam);
    }
  }
  return ppo_surrogate_and_grad(l.net, samples, adv, clip).first;
}

std::vector<double> reward_to_go(std::span<const double> rewards, double gamma, double tail) {
  std::vector<double> out(rewards.size());
  double g = tail;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    g = rewards[i] + gamma * g;
    out[i] = g;
  }
  return out;
}

std::vector<Transition> trajectory_transitions(const Trajectory& traj, const AgentStateEncoder& enc,
                                               const AgentActionSpace& space, int user_end_index) {
  std::vector<Transition> out;
  const auto& ts = traj.tuples;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& t = ts[i];
    if (t.a_user.contains(user_end_index)) continue;
    const auto action = space.index_of(t.a_agent);
    if (!action) throw ContractError("agent act is not in the learner's action space");
    Transition tr;
    tr.action = *action;
    if (t.terminal) {
      tr.reward = t.reward;
      tr.terminal = true;
    } else if (i + 1 < ts.size()) {
      const auto& next = ts[i + 1];
      if (next.a_user.contains(user_end_index)) {
        tr.reward = next.reward;
        tr.terminal = true;
      } else {
        tr.reward = t.reward;
        tr.next_state = enc.encode(next.s_agent);
      }
    } else {
      continue;
    }
    tr.state = enc.encode(t.s_agent);
    out.push_back(std::move(tr));
  }
  return out;
}

double learn_from(PolicyLearner& l, std::span<const Trajectory> trajs, const AgentStateEncoder& enc,
                  const AgentActionSpace& space, int user_end_index) {
  if (l.kind == LearnerKind::dqn) {
    std::size_t fresh = 0;
    for (const auto& traj : trajs) {
      for (auto& t : trajectory_transitions(traj, enc, space, user_end_index)) {
        l.replay.push(std::move(t));
        ++fresh;
      }
    }
    if (l.replay.size() < l.hyper.batch_size) return 0.0;
    const auto n = static_cast<std::size_t>(std::llround(l.hyper.updates_per_transition * static_cast<double>(fresh)));
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += dqn_update(l, l.replay.sample(l.rng, l.hyper.batch_size), l.hyper.gamma);
    return n ? total / static_cast<double>(n) : 0.0;
  }

  std::vector<PpoSample> samples;
  for (const auto& traj : trajs) {
    auto trs = trajectory_transitions(traj, enc, space, user_end_index);
    if (trs.empty()) continue;
    std::vector<double> rewards;
    for (const auto& t : trs) rewards.push_back(t.reward);
    const double tail = trs.back().terminal ? 0.0 : forward(l.aux, trs.back().next_state)[0];
    const auto returns = reward_to_go(rewards, l.hyper.gamma, tail);
    for (std::size_t i = 0; i < trs.size(); ++i) {
      PpoSample s;
      s.old_logp = std::log(forward(l.net, trs[i].state).at(static_cast<std::size_t>(trs[i].action)));
      s.state = std::move(trs[i].state);
      s.action = trs[i].action;
      s.ret = returns[i];
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) return 0.0;
  return ppo_update(l, samples, l.hyper.clip, l.hyper.ppo_epochs);
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kLearnerMagic[8] = {'I', 'S', 'E', 'E', 'L', 'R', 'N', '\0'};
constexpr std::uint64_t kLearnerVersion = 1;

void put_string(std::ostream& out, const std::string& s) {
  binio::put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = binio::get_u64(in);
  if (n > (1u << 20)) throw FormatError("learner checkpoint: oversized header");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("learner checkpoint truncated");
  return s;
}
}  // namespace

void save_learner(const std::string& path, const PolicyLearner& l, const EnvSpec& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(kLearnerMagic, sizeof kLearnerMagic);
  binio::put_u64(out, kLearnerVersion);
  binio::put_u64(out, static_cast<std::uint64_t>(l.kind));
  KeyValueConfig hyper;
  l.hyper.write_config(hyper);
  put_string(out, hyper.to_string());
  KeyValueConfig env;
  spec.write_config(env);
  put_string(out, env.to_string());
  binio::put_u64(out, static_cast<std::uint64_t>(l.act_steps));
  binio::put_u64(out, static_cast<std::uint64_t>(l.updates));
  save_mlp(out, l.net);
  save_mlp(out, l.aux);
}

std::pair<PolicyLearner, EnvSpec> load_learner(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kLearnerMagic))
    throw FormatError(path + ": not a learner checkpoint");
  if (binio::get_u64(in) != kLearnerVersion) throw FormatError(path + ": unsupported learner version");
  const auto kind = binio::get_u64(in);
  if (kind > 1) throw FormatError(path + ": bad learner kind");
  PolicyLearner l;
  l.kind = static_cast<LearnerKind>(kind);
  l.hyper = LearnerHyper::from_config(KeyValueConfig::parse(get_string(in)));
  const auto spec = EnvSpec::from_config(KeyValueConfig::parse(get_string(in)));
  l.act_steps = static_cast<std::int64_t>(binio::get_u64(in));
  l.updates = static_cast<std::int64_t>(binio::get_u64(in));
  l.net = load_mlp(in);
  l.aux = load_mlp(in);
  l.net_opt = AdamState::for_params(l.net);
  l.aux_opt = AdamState::for_params(l.aux);
  l.replay = ReplayBuffer(l.hyper.replay_capacity);
  return {std::move(l), spec};
}

}  // namespace isee
