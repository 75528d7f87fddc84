#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isee/env_spec.hpp"

namespace isee {

enum class Intent : std::uint8_t { inform, request, book, confirm, end, no_match };

std::string to_string(Intent intent);

enum class Side : std::uint8_t { user, agent };

struct SlotRef {
  int domain = 0;
  int slot = 0;
  auto operator<=>(const SlotRef&) const = default;
};

// One abstract dialogue act. `slot` is -1 for domain-level acts (book,
// confirm, no_match) and for `end`; `domain` is -1 for `end`. `value` is
// filled in by grounding and never takes part in vocabulary lookup.
struct DialogueAct {
  Intent intent = Intent::end;
  int domain = -1;
  int slot = -1;
  int value = -1;

  bool operator==(const DialogueAct&) const = default;
};

// Deterministic enumeration of the acts available to one side. Acts are
// sorted by (domain, slot, intent) with domain-level acts (slot -1) first
// inside each domain, and `end` is always the last index.
//
// user:  inform/request per slot, book per bookable domain, end
// agent: inform/request per slot, book per bookable domain, confirm and
//        no_match per domain, end
class ActVocabulary {
 public:
  ActVocabulary(const EnvSpec& spec, Side side);

  Side side() const { return side_; }
  int size() const { return static_cast<int>(acts_.size()); }
  int end_index() const { return size() - 1; }

  // Throws VocabularyError for unknown (domain, slot, intent).
  int index_of(const DialogueAct& act) const;
  std::optional<int> find(Intent intent, int domain, int slot) const;
  const DialogueAct& act(int index) const;

  std::string describe(int index, const EnvSpec& spec) const;

 private:
  Side side_;
  std::vector<DialogueAct> acts_;
  std::map<std::tuple<int, int, int>, int> lookup_;
};

// Set of act indices active in one turn; kept sorted and unique.
class ActSet {
 public:
  ActSet() = default;
  ActSet(std::initializer_list<int> acts);
  explicit ActSet(std::vector<int> acts);

  void insert(int act);
  bool contains(int act) const;
  bool empty() const { return acts_.empty(); }
  std::size_t size() const { return acts_.size(); }
  const std::vector<int>& indices() const { return acts_; }
  auto begin() const { return acts_.begin(); }
  auto end() const { return acts_.end(); }

  auto operator<=>(const ActSet&) const = default;

 private:
  std::vector<int> acts_;
};

// 0/1 vector of width |vocab|; throws VocabularyError on out-of-range acts.
std::vector<double> vectorize_actset(const ActSet& acts, const ActVocabulary& vocab);
// Inverse of vectorize_actset: component i > 0.5 selects act i.
ActSet devectorize_actset(std::span<const double> v);

struct UserGoal {
  std::map<SlotRef, int> constraints;
  std::set<SlotRef> requests;
  std::vector<int> domains;

  bool is_active(int domain) const;
  // Active domains that the spec marks bookable.
  std::vector<int> bookings(const EnvSpec& spec) const;
  std::map<SlotRef, int> constraints_of(int domain) const;

  // Throws SpecError when an invariant is broken.
  void validate(const EnvSpec& spec) const;

  bool operator==(const UserGoal&) const = default;
};

// s^u_t = (G, agent acts of turns 1..t-1).
struct UserState {
  UserGoal goal;
  std::vector<ActSet> agent_acts;

  int turn() const { return static_cast<int>(agent_acts.size()) + 1; }
  bool operator==(const UserState&) const = default;
};

// Query-result bucket per domain: 0 matches, 1, 2-4, 5 or more.
int db_bucket(std::size_t count);
inline constexpr int kDbBuckets = 4;

// s^s_t: what the agent observes after the user has spoken in turn t.
struct AgentState {
  UserGoal goal_view;
  std::vector<std::pair<ActSet, ActSet>> history;  // (user, agent) for turns < t
  ActSet user_act;                                  // user act of turn t
  std::map<SlotRef, int> revealed;                  // constraints informed so far
  std::vector<int> db_summary;                      // bucket per domain

  bool operator==(const AgentState&) const = default;
};

struct InteractionTuple {
  AgentState s_agent;
  ActSet a_agent;
  double reward = 0.0;
  UserState s_user;
  ActSet a_user;
  bool terminal = false;

  bool operator==(const InteractionTuple&) const = default;
};

struct Provenance {
  enum class Kind : std::uint8_t { expert, diversified };
  Kind kind = Kind::expert;
  int model_id = -1;

  static Provenance expert() { return {}; }
  static Provenance diversified(int model) { return {Kind::diversified, model}; }
  bool operator==(const Provenance&) const = default;
};

struct Trajectory {
  std::vector<InteractionTuple> tuples;
  std::vector<Provenance> provenance;
  std::optional<std::size_t> branch_point;
  std::int64_t id = 0;

  std::size_t size() const { return tuples.size(); }
  bool empty() const { return tuples.empty(); }
  bool terminated() const { return !tuples.empty() && tuples.back().terminal; }
  double total_return() const;
  void push(InteractionTuple t, Provenance p) {
    tuples.push_back(std::move(t));
    provenance.push_back(p);
  }

  bool operator==(const Trajectory&) const = default;
};

// Goal featurization shared by the user-model and agent encoders: per
// (domain, slot) in spec order, a constraint-present bit, a one-hot of the
// constraint value and a request-present bit.
std::size_t goal_block_size(const EnvSpec& spec);
void encode_goal(const EnvSpec& spec, const UserGoal& goal, std::span<double> out);

// OR-pools act sets into a 0/1 block of width |vocab|.
void or_pool(const ActSet& acts, std::span<double> out);

// Line-delimited dump: one JSON array per tuple, in tuple order
//   [traj_id, turn, provenance, branch_point, s_agent, a_agent, reward,
//    s_user, a_user, terminal]
// with acts written as index lists. See docs in README.
void write_trajectories(std::ostream& out, std::span<const Trajectory> trajs);
std::vector<Trajectory> read_trajectories(std::istream& in);
void save_trajectories(const std::string& path, std::span<const Trajectory> trajs);
std::vector<Trajectory> load_trajectories(const std::string& path);

std::string tuple_to_line(const InteractionTuple& t);
InteractionTuple tuple_from_line(const std::string& line);

}  // namespace isee
