#include "isee/toy_env.hpp"

#include <algorithm>
#include <ostream>
#include <set>

#include "isee/errors.hpp"

namespace isee {

KnowledgeBase build_kb(const EnvSpec& spec) {
  spec.validate();
  KnowledgeBase kb;
  for (int d = 0; d < spec.num_domains(); ++d) {
    double combos = 1.0;
    for (const auto& s : spec.domains[d].slots) combos *= s.num_values;
    if (combos < spec.entities_per_domain)
      throw SpecError("domain " + spec.domains[d].name + ": only " + std::to_string(combos) +
                      " distinct entities possible, " + std::to_string(spec.entities_per_domain) +
                      " requested");
    RngStream rng(spec.kb_seed, static_cast<std::uint64_t>(d));
    std::set<std::vector<int>> seen;
    std::vector<std::vector<int>> table;
    while (static_cast<int>(table.size()) < spec.entities_per_domain) {
      std::vector<int> e;
      for (const auto& s : spec.domains[d].slots)
        e.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(s.num_values))));
      if (seen.insert(e).second) table.push_back(std::move(e));
    }
    kb.entities.push_back(std::move(table));
  }
  return kb;
}

std::vector<int> db_query(const KnowledgeBase& kb, int domain, const std::map<SlotRef, int>& constraints) {
  std::vector<int> out;
  const auto& table = kb.entities.at(domain);
  for (int e = 0; e < static_cast<int>(table.size()); ++e) {
    bool ok = true;
    for (const auto& [ref, value] : constraints) {
      if (ref.domain == domain && table[e].at(ref.slot) != value) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(e);
  }
  return out;
}

namespace {

// Non-empty random subset, kept in ascending order.
std::vector<int> random_subset(const std::vector<int>& items, RngStream& rng) {
  std::vector<int> out;
  while (out.empty()) {
    out.clear();
    for (const int i : items)
      if (rng.bernoulli(0.5)) out.push_back(i);
  }
  return out;
}

}  // namespace

UserGoal sample_goal(const EnvSpec& spec, const KnowledgeBase& kb, RngStream& rng) {
  UserGoal goal;
  for (;;) {
    goal.domains.clear();
    for (int d = 0; d < spec.num_domains(); ++d)
      if (rng.bernoulli(spec.domains[d].active_prob)) goal.domains.push_back(d);
    if (!goal.domains.empty() && static_cast<int>(goal.domains.size()) <= spec.max_active_domains) break;
  }
  for (const int d : goal.domains) {
    const auto entity = static_cast<int>(rng.below(kb.num_entities(d)));
    std::vector<int> cons, reqs;
    for (int s = 0; s < spec.num_slots(d); ++s) {
      if (spec.slot(d, s).constrainable) cons.push_back(s);
      if (spec.slot(d, s).requestable) reqs.push_back(s);
    }
    for (const int s : random_subset(cons, rng)) goal.constraints[{d, s}] = kb.value(d, entity, s);
    for (const int s : random_subset(reqs, rng)) goal.requests.insert({d, s});
  }
  return goal;
}

double reward(StepKind kind, int max_turns) {
  switch (kind) {
    case StepKind::intermediate: return -1.0;
    case StepKind::terminal_success: return static_cast<double>(max_turns);
    case StepKind::terminal_fail: return -static_cast<double>(max_turns);
  }
  return 0.0;
}

void export_kb(std::ostream& out, const EnvSpec& spec, const KnowledgeBase& kb) {
  out << "domain\tentity";
  for (int s = 0; s < spec.num_slots(0); ++s) out << "\tslot" << s;
  out << '\n';
  for (int d = 0; d < spec.num_domains(); ++d) {
    for (std::size_t e = 0; e < kb.num_entities(d); ++e) {
      out << spec.domains[d].name << '\t' << e;
      for (int s = 0; s < spec.num_slots(d); ++s)
        out << '\t' << spec.slot(d, s).name << '=' << kb.value(d, static_cast<int>(e), s);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

ToyEnv::ToyEnv(EnvSpec spec)
    : spec_(std::move(spec)),
      kb_(build_kb(spec_)),
      user_vocab_(spec_, Side::user),
      agent_vocab_(spec_, Side::agent) {}

std::optional<int> ToyEnv::top_entity(int domain, const std::map<SlotRef, int>& revealed) const {
  const auto hits = db_query(domain, revealed);
  if (hits.empty()) return std::nullopt;
  return hits.front();
}

std::optional<int> ToyEnv::target_entity(const UserGoal& goal, int domain) const {
  return top_entity(domain, goal.constraints);
}

int ToyEnv::ground_inform(const std::map<SlotRef, int>& revealed, SlotRef ref) const {
  const auto e = top_entity(ref.domain, revealed);
  return e ? kb_.value(ref.domain, *e, ref.slot) : -1;
}

bool ToyEnv::inform_is_correct(const UserGoal& goal, const std::map<SlotRef, int>& revealed,
                               SlotRef ref) const {
  const auto target = target_entity(goal, ref.domain);
  if (!target) return false;
  return ground_inform(revealed, ref) == kb_.value(ref.domain, *target, ref.slot);
}

bool ToyEnv::entity_matches(const UserGoal& goal, int domain, int entity) const {
  for (const auto& [ref, value] : goal.constraints)
    if (ref.domain == domain && kb_.value(domain, entity, ref.slot) != value) return false;
  return true;
}

void ToyEnv::reveal(const UserGoal& goal, const ActSet& user_act, std::map<SlotRef, int>& revealed) const {
  for (const int i : user_act) {
    const auto& a = user_vocab_.act(i);
    if (a.intent != Intent::inform) continue;
    const auto it = goal.constraints.find({a.domain, a.slot});
    if (it != goal.constraints.end()) revealed[it->first] = it->second;
  }
}

ExpertSimState ToyEnv::expert_start(const UserGoal& goal) const {
  ExpertSimState st;
  st.goal = goal;
  for (const int d : goal.domains) {
    for (const auto& [ref, value] : goal.constraints)
      if (ref.domain == d) st.agenda.push_back({Intent::inform, ref});
    for (const auto& ref : goal.requests)
      if (ref.domain == d) st.agenda.push_back({Intent::request, ref});
    if (spec_.domains[d].bookable) st.agenda.push_back({Intent::book, {d, -1}});
  }
  return st;
}

std::pair<ActSet, ExpertSimState> ToyEnv::expert_policy(ExpertSimState st,
                                                        const std::optional<ActSet>& last_agent_act) const {
  if (st.ended) throw ContractError("expert_policy called on an ended dialogue");
  const auto& goal = st.goal;
  const auto bookings = goal.bookings(spec_);

  if (last_agent_act) {
    bool relevant = false;
    std::vector<ExpertSimState::Item> pushed;
    for (const int i : *last_agent_act) {
      const auto& a = agent_vocab_.act(i);
      const SlotRef ref{a.domain, a.slot};
      switch (a.intent) {
        case Intent::inform:
          if (goal.requests.count(ref) && !st.satisfied_requests.count(ref) &&
              inform_is_correct(goal, st.informed, ref)) {
            st.satisfied_requests.insert(ref);
            relevant = true;
          }
          break;
        case Intent::book:
          if (std::count(bookings.begin(), bookings.end(), a.domain) &&
              !st.bookings_confirmed.count(a.domain)) {
            const auto e = top_entity(a.domain, st.informed);
            if (e && entity_matches(goal, a.domain, *e)) {
              st.bookings_confirmed.insert(a.domain);
              relevant = true;
            }
          }
          break;
        case Intent::request:
          if (goal.constraints.count(ref) && !st.informed.count(ref)) {
            pushed.push_back({Intent::inform, ref});
            relevant = true;
          }
          break;
        default:
          break;
      }
    }
    st.agenda.insert(st.agenda.begin(), pushed.begin(), pushed.end());
    st.frustration = relevant ? 0 : st.frustration + 1;
  }
  ++st.turns;

  const bool all_done = st.satisfied_requests.size() == goal.requests.size() &&
                        st.bookings_confirmed.size() == bookings.size();
  if (all_done || st.frustration >= spec_.patience) {
    st.ended = true;
    st.frustration = std::min(st.frustration, spec_.patience);
    return {ActSet{user_vocab_.end_index()}, std::move(st)};
  }

  auto stale = [&](const ExpertSimState::Item& it) {
    switch (it.intent) {
      case Intent::inform: return st.informed.count(it.ref) != 0;
      case Intent::request: return st.satisfied_requests.count(it.ref) != 0;
      case Intent::book: return st.bookings_confirmed.count(it.ref.domain) != 0;
      default: return true;
    }
  };
  std::erase_if(st.agenda, stale);

  std::vector<ExpertSimState::Item> emit;
  if (!st.agenda.empty()) {
    emit.push_back(st.agenda.front());
    if (st.agenda.size() > 1 && st.agenda[1].intent == emit[0].intent &&
        st.agenda[1].ref.domain == emit[0].ref.domain && emit[0].intent != Intent::book)
      emit.push_back(st.agenda[1]);
    st.agenda.erase(st.agenda.begin(), st.agenda.begin() + static_cast<long>(emit.size()));
  } else {
    // Nothing left on the agenda but the goal is open: repeat what is missing.
    for (const auto& ref : goal.requests) {
      if (st.satisfied_requests.count(ref)) continue;
      if (!emit.empty() && (emit.size() == 2 || emit[0].ref.domain != ref.domain)) break;
      emit.push_back({Intent::request, ref});
    }
    if (emit.empty()) {
      for (const int d : bookings)
        if (!st.bookings_confirmed.count(d)) {
          emit.push_back({Intent::book, {d, -1}});
          break;
        }
    }
  }

  ActSet out;
  for (const auto& it : emit) {
    out.insert(*user_vocab_.find(it.intent, it.ref.domain, it.ref.slot));
    if (it.intent == Intent::inform) st.informed[it.ref] = goal.constraints.at(it.ref);
  }
  return {std::move(out), std::move(st)};
}

ActSet ToyEnv::oracle_act(const AgentState& state, const UserGoal& goal) const {
  std::set<SlotRef> answered;
  std::set<int> booked;
  for (const auto& [u, a] : state.history) {
    for (const int i : a) {
      const auto& act = agent_vocab_.act(i);
      if (act.intent == Intent::inform) answered.insert({act.domain, act.slot});
      if (act.intent == Intent::book) booked.insert(act.domain);
    }
  }
  for (const int d : goal.domains) {
    for (const auto& [ref, value] : goal.constraints)
      if (ref.domain == d && !state.revealed.count(ref))
        return ActSet{*agent_vocab_.find(Intent::request, d, ref.slot)};
    ActSet answers;
    for (const auto& ref : goal.requests)
      if (ref.domain == d && !answered.count(ref)) answers.insert(*agent_vocab_.find(Intent::inform, d, ref.slot));
    if (!answers.empty()) return answers;
    if (spec_.domains[d].bookable && !booked.count(d)) return ActSet{*agent_vocab_.find(Intent::book, d, -1)};
  }
  return ActSet{agent_vocab_.end_index()};
}

namespace {

DialogueOutcome score(const ToyEnv& env, const UserGoal& goal, const std::map<SlotRef, int>& informed,
                      const std::map<int, int>& booked, int turns) {
  DialogueOutcome out;
  out.turns = turns;
  std::size_t hit = 0;
  bool all_correct = true;
  for (const auto& ref : goal.requests) {
    const auto it = informed.find(ref);
    if (it != informed.end()) ++hit;
    const auto target = env.target_entity(goal, ref.domain);
    if (it == informed.end() || !target || it->second != env.kb().value(ref.domain, *target, ref.slot))
      all_correct = false;
  }
  out.inform_precision = informed.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(informed.size());
  out.inform_recall = goal.requests.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(goal.requests.size());
  const double pr = out.inform_precision + out.inform_recall;
  out.inform_f1 = pr > 0.0 ? 2.0 * out.inform_precision * out.inform_recall / pr : 0.0;

  const auto bookings = goal.bookings(env.spec());
  if (bookings.empty()) {
    out.match = 1.0;
  } else {
    double m = 0.0;
    for (const int d : bookings) {
      const auto it = booked.find(d);
      if (it != booked.end() && env.entity_matches(goal, d, it->second)) m += 1.0;
    }
    out.match = m / static_cast<double>(bookings.size());
  }
  out.success = (all_correct && out.match == 1.0) ? 1 : 0;
  return out;
}

}  // namespace

DialogueOutcome ToyEnv::evaluate_dialogue(const Trajectory& traj, const UserGoal& goal) const {
  if (!traj.terminated()) throw ContractError("evaluate_dialogue needs a terminated trajectory");
  std::map<SlotRef, int> informed;
  std::map<int, int> booked;
  const int end = user_vocab_.end_index();
  for (const auto& t : traj.tuples) {
    if (t.a_user.contains(end)) break;
    for (const int i : t.a_agent) {
      const auto& a = agent_vocab_.act(i);
      if (a.intent == Intent::inform) {
        informed[{a.domain, a.slot}] = ground_inform(t.s_agent.revealed, {a.domain, a.slot});
      } else if (a.intent == Intent::book) {
        if (const auto e = top_entity(a.domain, t.s_agent.revealed)) booked[a.domain] = *e;
      }
    }
  }
  return score(*this, goal, informed, booked, static_cast<int>(traj.size()));
}

// ---------------------------------------------------------------------------

DialogueSession::DialogueSession(const ToyEnv& env, UserGoal goal) : env_(&env), goal_(std::move(goal)) {}

DialogueSession DialogueSession::resume_after(const ToyEnv& env, const InteractionTuple& tuple) {
  DialogueSession s(env, tuple.s_user.goal);
  for (const auto& [u, a] : tuple.s_agent.history) {
    s.begin_turn(u);
    s.end_turn(a);
  }
  s.begin_turn(tuple.a_user);
  s.end_turn(tuple.a_agent);
  return s;
}

UserState DialogueSession::user_state() const {
  UserState s;
  s.goal = goal_;
  for (const auto& [u, a] : history_) s.agent_acts.push_back(a);
  return s;
}

AgentState DialogueSession::agent_state() const {
  AgentState s;
  if (env_->spec().agent_sees_full_goal) {
    s.goal_view = goal_;
  } else {
    // Partially observed: only what the user has said so far.
    s.goal_view.domains = goal_.domains;
    s.goal_view.constraints = revealed_;
    const auto& vocab = env_->user_vocab();
    auto add_requests = [&](const ActSet& acts) {
      for (const int i : acts) {
        const auto& a = vocab.act(i);
        if (a.intent == Intent::request && goal_.requests.count({a.domain, a.slot}))
          s.goal_view.requests.insert({a.domain, a.slot});
      }
    };
    for (const auto& [u, a] : history_) add_requests(u);
    if (pending_user_act_) add_requests(*pending_user_act_);
  }
  s.history = history_;
  if (pending_user_act_) s.user_act = *pending_user_act_;
  s.revealed = revealed_;
  for (int d = 0; d < env_->spec().num_domains(); ++d)
    s.db_summary.push_back(db_bucket(env_->db_query(d, revealed_).size()));
  return s;
}

AgentState DialogueSession::begin_turn(const ActSet& user_act) {
  if (finished_) throw ContractError("begin_turn on a finished dialogue");
  if (pending_user_act_) throw ContractError("begin_turn called twice without end_turn");
  if (user_act.empty()) throw ContractError("user act must not be empty");
  env_->reveal(goal_, user_act, revealed_);
  pending_user_act_ = user_act;
  return agent_state();
}

void DialogueSession::ground(const ActSet& agent_act) {
  const auto& vocab = env_->agent_vocab();
  for (const int i : agent_act) {
    const auto& a = vocab.act(i);
    if (a.intent == Intent::inform) {
      informed_[{a.domain, a.slot}] = env_->ground_inform(revealed_, {a.domain, a.slot});
    } else if (a.intent == Intent::book) {
      if (const auto e = env_->top_entity(a.domain, revealed_)) booked_[a.domain] = *e;
    }
  }
}

std::pair<double, bool> DialogueSession::end_turn(const ActSet& agent_act) {
  if (!pending_user_act_) throw ContractError("end_turn without begin_turn");
  const bool user_ended = pending_user_act_->contains(env_->user_vocab().end_index());
  if (!user_ended) ground(agent_act);
  history_.emplace_back(*pending_user_act_, agent_act);
  pending_user_act_.reset();
  const bool terminal = user_ended || static_cast<int>(history_.size()) >= env_->max_turns();
  if (!terminal) return {reward(StepKind::intermediate, env_->max_turns()), false};
  finished_ = true;
  return {reward(success() ? StepKind::terminal_success : StepKind::terminal_fail, env_->max_turns()), true};
}

bool DialogueSession::success() const { return outcome().success == 1; }

DialogueOutcome DialogueSession::outcome() const {
  return score(*env_, goal_, informed_, booked_, static_cast<int>(history_.size()));
}

}  // namespace isee
