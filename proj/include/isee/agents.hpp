#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isee/config.hpp"
#include "isee/core_types.hpp"
#include "isee/neural.hpp"
#include "isee/rng.hpp"
#include "isee/toy_env.hpp"

namespace isee {

// Discrete agent actions, each a fixed non-empty ActSet over A^s. Per
// domain: request-constraint(s), answer-request(s), answer-all,
// inform-count (the confirm act), book, no-offer; then a single bye.
class AgentActionSpace {
 public:
  explicit AgentActionSpace(const ToyEnv& env);

  int size() const { return static_cast<int>(actions_.size()); }
  const ActSet& acts(int index) const { return actions_.at(static_cast<std::size_t>(index)); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  std::optional<int> index_of(const ActSet& acts) const;

 private:
  std::vector<ActSet> actions_;
  std::vector<std::string> names_;
};

// Goal view, OR-pooled user acts (history and the current turn), OR-pooled
// agent acts, and a one-hot DB bucket per domain.
class AgentStateEncoder {
 public:
  AgentStateEncoder(const EnvSpec& spec, int user_vocab_size, int agent_vocab_size);

  std::size_t size() const { return goal_ + user_ + agent_ + db_; }
  std::vector<double> encode(const AgentState& s) const;

 private:
  EnvSpec spec_;
  std::size_t goal_, user_, agent_, db_;
};

enum class LearnerKind : std::uint8_t { dqn, ppo };
enum class Mode : std::uint8_t { train, eval };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& s);

struct LearnerHyper {
  std::size_t hidden = 64;
  double lr = 1e-3;
  double gamma = 0.99;
  // DQN
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  std::int64_t target_sync = 100;
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::int64_t eps_decay_steps = 5000;
  double updates_per_transition = 1.0;
  // PPO
  double clip = 0.2;
  int ppo_epochs = 4;
  std::size_t ppo_minibatch = 64;
  bool normalize_advantages = true;

  static LearnerHyper from_config(const KeyValueConfig& cfg);
  void write_config(KeyValueConfig& cfg) const;
};

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;  // empty when terminal
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Oldest first.
  const Transition& at(std::size_t i) const;
  std::vector<const Transition*> sample(RngStream& rng, std::size_t n) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::vector<Transition> data_;
};

// DQN: net = online Q (linear head), aux = target Q.
// PPO: net = policy (softmax head), aux = value (linear head, width 1).
struct PolicyLearner {
  LearnerKind kind = LearnerKind::dqn;
  LearnerHyper hyper;
  MlpParams net;
  MlpParams aux;
  AdamState net_opt;
  AdamState aux_opt;
  RngStream rng;
  std::int64_t act_steps = 0;  // train-mode selections, drives the epsilon schedule
  std::int64_t updates = 0;    // optimizer steps on `net`
  ReplayBuffer replay;
};

PolicyLearner make_learner(LearnerKind kind, std::size_t state_dim, int num_actions, const LearnerHyper& hyper,
                           const RngStream& rng);

// Linear from eps_start to eps_end over eps_decay_steps, then flat.
double epsilon(const PolicyLearner& l);

int argmax_lowest(std::span<const double> v);

// dqn/train: epsilon-greedy; ppo/train: sample the softmax; eval: argmax.
int select_action(PolicyLearner& l, std::span<const double> features, Mode mode);

// y = r (terminal) or r + gamma * max_a Q_target(s', a).
double td_target(const MlpParams& target, const Transition& t, double gamma);

// Mean squared TD error of the online net and its gradient.
std::pair<double, Gradients> dqn_loss_and_grad(const MlpParams& online, const MlpParams& target,
                                               std::span<const Transition* const> batch, double gamma);

// One Adam step on the online net; syncs the target every target_sync
// updates. Throws ContractError for a non-DQN learner or empty batch.
double dqn_update(PolicyLearner& l, std::span<const Transition* const> batch, double gamma);

struct PpoSample {
  std::vector<double> state;
  int action = 0;
  double ret = 0.0;
  double old_logp = 0.0;  // NaN marks a missing value
};

// Negated clipped surrogate mean(min(rho*A, clip(rho)*A)) and its gradient.
std::pair<double, Gradients> ppo_surrogate_and_grad(const MlpParams& policy, std::span<const PpoSample> samples,
                                                    std::span<const double> advantages, double clip);

// Value regression loss mean((V(s) - ret)^2) and its gradient.
std::pair<double, Gradients> value_loss_and_grad(const MlpParams& value, std::span<const PpoSample> samples);

// Advantages are returns minus the value estimate before the update. Runs
// `epochs` passes of minibatch updates on both networks and returns the
// final surrogate loss over the whole batch.
double ppo_update(PolicyLearner& l, std::span<const PpoSample> samples, double clip, int epochs);

// Discounted reward-to-go, bootstrapped with `tail` after the last reward.
std::vector<double> reward_to_go(std::span<const double> rewards, double gamma, double tail = 0.0);

// Learner-facing view of a trajectory. A turn in which the user said `end`
// contributes no transition; its terminal reward is credited to the agent
// act of the previous turn. A final non-terminal tuple (a truncated
// segment) has no successor and contributes nothing.
std::vector<Transition> trajectory_transitions(const Trajectory& traj, const AgentStateEncoder& enc,
                                               const AgentActionSpace& space, int user_end_index);

// Runs the learner's update rule on a batch of fresh trajectories.
// DQN: append transitions to replay, then updates_per_transition * n
// minibatch updates. PPO: returns and old log-probs under the current
// policy, then ppo_update. Returns the mean loss.
double learn_from(PolicyLearner& l, std::span<const Trajectory> trajs, const AgentStateEncoder& enc,
                  const AgentActionSpace& space, int user_end_index);

// Header (kind, hyperparameters, counters, embedded env config) followed by
// the two networks in the mlp checkpoint format.
void save_learner(const std::string& path, const PolicyLearner& l, const EnvSpec& spec);
std::pair<PolicyLearner, EnvSpec> load_learner(const std::string& path);

}  // namespace isee
