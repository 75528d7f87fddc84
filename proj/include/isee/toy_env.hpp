#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "isee/core_types.hpp"
#include "isee/env_spec.hpp"
#include "isee/rng.hpp"

namespace isee {

// entities[domain][entity][slot] = value id
struct KnowledgeBase {
  std::vector<std::vector<std::vector<int>>> entities;

  std::size_t num_entities(int domain) const { return entities.at(domain).size(); }
  int value(int domain, int entity, int slot) const { return entities.at(domain).at(entity).at(slot); }
  bool operator==(const KnowledgeBase&) const = default;
};

KnowledgeBase build_kb(const EnvSpec& spec);

// Exact-match filter over one domain, ascending entity id. Constraints on
// other domains are ignored.
std::vector<int> db_query(const KnowledgeBase& kb, int domain, const std::map<SlotRef, int>& constraints);

UserGoal sample_goal(const EnvSpec& spec, const KnowledgeBase& kb, RngStream& rng);

enum class StepKind { intermediate, terminal_success, terminal_fail };
double reward(StepKind kind, int max_turns);

void export_kb(std::ostream& out, const EnvSpec& spec, const KnowledgeBase& kb);

struct ExpertSimState {
  struct Item {
    Intent intent = Intent::inform;
    SlotRef ref;  // ref.slot is -1 for book
  };
  UserGoal goal;
  std::vector<Item> agenda;  // front is the next item
  std::set<SlotRef> satisfied_requests;
  std::set<int> bookings_confirmed;
  std::map<SlotRef, int> informed;  // constraints already given to the agent
  int frustration = 0;
  int turns = 0;
  bool ended = false;
};

struct DialogueOutcome {
  int success = 0;
  double inform_precision = 0.0;
  double inform_recall = 0.0;
  double inform_f1 = 0.0;
  double match = 0.0;
  int turns = 0;
};

// Synthetic slot-filling world: spec, knowledge base, vocabularies, the
// rule-based expert user, grounding of agent acts and dialogue scoring.
class ToyEnv {
 public:
  explicit ToyEnv(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  const KnowledgeBase& kb() const { return kb_; }
  const ActVocabulary& user_vocab() const { return user_vocab_; }
  const ActVocabulary& agent_vocab() const { return agent_vocab_; }
  int max_turns() const { return spec_.max_turns; }

  UserGoal sample_goal(RngStream& rng) const { return isee::sample_goal(spec_, kb_, rng); }
  std::vector<int> db_query(int domain, const std::map<SlotRef, int>& constraints) const {
    return isee::db_query(kb_, domain, constraints);
  }

  // Entity the agent talks about: lowest id matching the revealed
  // constraints of the domain.
  std::optional<int> top_entity(int domain, const std::map<SlotRef, int>& revealed) const;
  // Entity the goal refers to: lowest id matching all goal constraints.
  std::optional<int> target_entity(const UserGoal& goal, int domain) const;
  // Value the agent states for (domain, slot) given what it knows; -1 when
  // nothing matches.
  int ground_inform(const std::map<SlotRef, int>& revealed, SlotRef ref) const;
  bool inform_is_correct(const UserGoal& goal, const std::map<SlotRef, int>& revealed, SlotRef ref) const;
  bool entity_matches(const UserGoal& goal, int domain, int entity) const;

  // Constraints made visible to the agent by a user act.
  void reveal(const UserGoal& goal, const ActSet& user_act, std::map<SlotRef, int>& revealed) const;

  ExpertSimState expert_start(const UserGoal& goal) const;
  // One expert turn. `last_agent_act` is empty on the first turn. Throws
  // ContractError if the dialogue already ended.
  std::pair<ActSet, ExpertSimState> expert_policy(ExpertSimState state,
                                                  const std::optional<ActSet>& last_agent_act) const;

  // Scripted agent that sees the full goal: asks for missing constraints,
  // answers every request once the constraints are known, books the
  // matching entity.
  ActSet oracle_act(const AgentState& state, const UserGoal& goal) const;

  // Throws ContractError if the trajectory has not terminated.
  DialogueOutcome evaluate_dialogue(const Trajectory& traj, const UserGoal& goal) const;

 private:
  EnvSpec spec_;
  KnowledgeBase kb_;
  ActVocabulary user_vocab_;
  ActVocabulary agent_vocab_;
};

// Turn bookkeeping shared by every simulator: tracks revealed constraints,
// what the agent informed and booked, and produces states and rewards.
//
// Per turn: begin_turn(user act) -> AgentState; the agent acts;
// end_turn(agent act) -> reward. The agent act of a turn in which the user
// said `end` is recorded but not grounded.
class DialogueSession {
 public:
  DialogueSession(const ToyEnv& env, UserGoal goal);

  // Rebuilds the bookkeeping after `tuple` by replaying its history and its
  // own (user, agent) pair.
  static DialogueSession resume_after(const ToyEnv& env, const InteractionTuple& tuple);

  const UserGoal& goal() const { return goal_; }
  int turn() const { return static_cast<int>(history_.size()) + 1; }
  bool finished() const { return finished_; }

  UserState user_state() const;
  AgentState begin_turn(const ActSet& user_act);
  // Returns the reward of the finished turn and whether it was terminal.
  std::pair<double, bool> end_turn(const ActSet& agent_act);

  bool success() const;
  DialogueOutcome outcome() const;

 private:
  AgentState agent_state() const;
  void ground(const ActSet& agent_act);

  const ToyEnv* env_;
  UserGoal goal_;
  std::vector<std::pair<ActSet, ActSet>> history_;
  std::optional<ActSet> pending_user_act_;
  std::map<SlotRef, int> revealed_;
  std::map<SlotRef, int> informed_;  // latest value stated per slot
  std::map<int, int> booked_;        // latest booked entity per domain
  bool finished_ = false;
};

}  // namespace isee
