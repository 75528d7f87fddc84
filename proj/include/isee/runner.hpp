#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "isee/agents.hpp"
#include "isee/config.hpp"
#include "isee/core_types.hpp"
#include "isee/dume.hpp"
#include "isee/rng.hpp"
#include "isee/toy_env.hpp"

namespace isee {

enum class DivMode : std::uint8_t { none, full, isee };

std::string to_string(DivMode mode);
DivMode div_mode_from_string(const std::string& s);

struct IseeConfig {
  EnvSpec env = EnvSpec::default_spec();
  LearnerKind learner = LearnerKind::dqn;
  LearnerHyper agent;
  BcHyper bc;
  DivMode mode = DivMode::isee;
  int E = 5;
  int H = 5;
  double eta = 0.2;
  int episodes_per_iteration = 20;
  int iterations = 50;
  int eval_episodes = 200;
  int eval_every = 5;  // evaluate after every k-th iteration (and the last)
  std::uint64_t eval_seed = 20240;
  std::vector<std::uint64_t> seeds{1};
  int pretrain_dialogues = 500;   // expert dialogues used to initialize the ensemble
  double behavior_epsilon = 0.2;  // random-action rate of the scripted data collector
  int diversity_states = 200;     // user states used for the KL diversity log

  // Reads every known key and rejects the rest.
  static IseeConfig from_config(const KeyValueConfig& cfg);
  static IseeConfig load(const std::string& path);
  KeyValueConfig to_config() const;
  // Throws ConfigError.
  void validate() const;
};

using DialoguePolicy = std::function<ActSet(const AgentState&)>;

// Decision rule of the user side. The environment still grounds the agent
// and computes rewards.
class UserSimulator {
 public:
  virtual ~UserSimulator() = default;
  virtual ActSet act(const UserState& s, const std::optional<ActSet>& last_agent_act) = 0;
  virtual Provenance provenance() const = 0;
};

class ExpertUser final : public UserSimulator {
 public:
  ExpertUser(const ToyEnv& env, const UserGoal& goal);
  ActSet act(const UserState& s, const std::optional<ActSet>& last_agent_act) override;
  Provenance provenance() const override { return Provenance::expert(); }
  const ExpertSimState& state() const { return state_; }

 private:
  const ToyEnv* env_;
  ExpertSimState state_;
};

// Stateless: decodes the act from the user state alone.
class ModelUser final : public UserSimulator {
 public:
  ModelUser(const UserModel& model, const UserStateEncoder& enc, int model_id);
  ActSet act(const UserState& s, const std::optional<ActSet>& last_agent_act) override;
  Provenance provenance() const override { return Provenance::diversified(id_); }

 private:
  const UserModel* model_;
  const UserStateEncoder* enc_;
  int id_;
};

DialoguePolicy learner_policy(PolicyLearner& l, const AgentStateEncoder& enc, const AgentActionSpace& space,
                              Mode mode);
DialoguePolicy oracle_policy(const ToyEnv& env, const UserGoal& goal);
// Scripted collector: oracle act, or with probability epsilon a uniformly
// chosen action of the learner's action space.
DialoguePolicy behavior_policy(const ToyEnv& env, const UserGoal& goal, const AgentActionSpace& space,
                               double epsilon, RngStream& rng);
DialoguePolicy random_policy(const AgentActionSpace& space, RngStream& rng);

// Rolls turns from the session's current position until the user says
// `end`, the session hits the turn cap, or t_max turns were added. Throws
// ContractError if t_max < 1 or the session already finished.
Trajectory generate_trajectory(UserSimulator& sim, const DialoguePolicy& policy, DialogueSession& session, int t_max);

// Segment [T_p, T'_{p+1}, ...]: tuple p copied verbatim, then at most h
// model-driven turns. branch_point is set to p.
Trajectory branch_trajectory(const ToyEnv& env, const Trajectory& base, std::size_t p, UserSimulator& model,
                             const DialoguePolicy& policy, int h);

struct EvalMetrics {
  double success = 0.0;
  double inform_f1 = 0.0;
  double match = 0.0;
  double turns = 0.0;
  double mean_return = 0.0;
};

// Greedy episodes against the expert user on goals drawn from (seed, 0).
EvalMetrics evaluate_policy(const ToyEnv& env, const std::function<DialoguePolicy(const UserGoal&)>& make_policy,
                            int episodes, std::uint64_t seed);
EvalMetrics evaluate_policy(PolicyLearner& l, const ToyEnv& env, int episodes, std::uint64_t seed);

// Expert dialogues collected with behavior_policy.
std::vector<Trajectory> collect_expert_dialogues(const ToyEnv& env, int dialogues, double epsilon, RngStream rng);

// Act-level micro-F1 of a user model against the expert's acts on the same
// states.
double imitation_f1(const UserModel& m, const UserStateEncoder& enc, std::span<const Trajectory> expert);

struct TrajectoryStore {
  std::vector<Trajectory> base;
  std::vector<Trajectory> dvs;
  std::size_t base_tuples = 0;
  std::size_t dvs_tuples = 0;  // new tuples only; copies count in base

  void clear();
  double eta_realized() const;  // NaN when base is empty
};

struct CurveRow {
  int iteration = 0;
  std::int64_t episodes = 0;
  EvalMetrics metrics;
  double eta_realized = 0.0;
};

struct DiversityRow {
  int iteration = 0;
  int members = 0;
  DiversityStats stats;
};

struct UpdateRecord {
  std::size_t base_tuples = 0;
  std::size_t dvs_tuples = 0;
  std::size_t max_segment = 0;  // largest new-tuple count of one segment
};

struct IseeLog {
  std::vector<CurveRow> curve;
  std::vector<DiversityRow> diversity;
  std::vector<UpdateRecord> updates;
  std::vector<double> episode_returns;  // training rollouts, in order
  std::int64_t expert_training_turns = 0;
  std::int64_t model_turns = 0;
};

// The outer loop. `ensemble` may be empty for mode none. `diversity_states`
// feeds the KL log (skipped with fewer than two members).
IseeLog isee_train(const IseeConfig& cfg, const ToyEnv& env, Ensemble& ensemble, PolicyLearner& learner,
                   std::uint64_t seed, std::span<const UserState> diversity_states = {});

struct SeedRun {
  IseeLog log;
  PolicyLearner learner;
  Ensemble ensemble;
};

// Pretraining data, ensemble and learner for one seed, then isee_train.
SeedRun run_seed(const IseeConfig& cfg, std::uint64_t seed);

std::string format_double(double v);  // 9 significant digits
void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows);
void write_diversity_csv(std::ostream& out, std::span<const DiversityRow> rows);

// Writes config.snapshot and, per seed, seed_<s>/{curve.csv, diversity.csv,
// learner.ckpt, ensemble/}.
void run_experiment(const std::string& config_path, const std::string& out_dir);

void save_ensemble(const std::string& dir, const Ensemble& e, const EnvSpec& spec);
Ensemble load_ensemble(const std::string& dir, EnvSpec* spec = nullptr);

}  // namespace isee
