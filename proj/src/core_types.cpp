#include "isee/core_types.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>

#include <json.hpp>

#include "isee/errors.hpp"

namespace isee {

using Json = nlohmann::json;

std::string to_string(Intent intent) {
  switch (intent) {
    case Intent::inform: return "inform";
    case Intent::request: return "request";
    case Intent::book: return "book";
    case Intent::confirm: return "confirm";
    case Intent::end: return "end";
    case Intent::no_match: return "no_match";
  }
  return "?";
}

ActVocabulary::ActVocabulary(const EnvSpec& spec, Side side) : side_(side) {
  for (int d = 0; d < spec.num_domains(); ++d) {
    const auto& dom = spec.domains[d];
    if (dom.bookable) acts_.push_back({Intent::book, d, -1});
    if (side == Side::agent) {
      acts_.push_back({Intent::confirm, d, -1});
      acts_.push_back({Intent::no_match, d, -1});
    }
    for (int s = 0; s < spec.num_slots(d); ++s) {
      acts_.push_back({Intent::inform, d, s});
      acts_.push_back({Intent::request, d, s});
    }
  }
  acts_.push_back({Intent::end, -1, -1});
  for (int i = 0; i < size(); ++i) {
    const auto& a = acts_[i];
    lookup_[{a.domain, a.slot, static_cast<int>(a.intent)}] = i;
  }
}

std::optional<int> ActVocabulary::find(Intent intent, int domain, int slot) const {
  if (intent == Intent::end) return end_index();
  const auto it = lookup_.find({domain, slot, static_cast<int>(intent)});
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

int ActVocabulary::index_of(const DialogueAct& act) const {
  const auto idx = find(act.intent, act.domain, act.slot);
  if (!idx)
    throw VocabularyError("act " + to_string(act.intent) + "(" + std::to_string(act.domain) + "," +
                          std::to_string(act.slot) + ") is not in the " +
                          (side_ == Side::user ? "user" : "agent") + " vocabulary");
  return *idx;
}

const DialogueAct& ActVocabulary::act(int index) const {
  if (index < 0 || index >= size())
    throw VocabularyError("act index " + std::to_string(index) + " out of range");
  return acts_[index];
}

std::string ActVocabulary::describe(int index, const EnvSpec& spec) const {
  const auto& a = act(index);
  if (a.intent == Intent::end) return "end";
  std::string out = to_string(a.intent) + "(" + spec.domains.at(a.domain).name;
  if (a.slot >= 0) out += "." + spec.slot(a.domain, a.slot).name;
  return out + ")";
}

ActSet::ActSet(std::initializer_list<int> acts) : ActSet(std::vector<int>(acts)) {}

ActSet::ActSet(std::vector<int> acts) : acts_(std::move(acts)) {
  std::sort(acts_.begin(), acts_.end());
  acts_.erase(std::unique(acts_.begin(), acts_.end()), acts_.end());
}

void ActSet::insert(int act) {
  const auto it = std::lower_bound(acts_.begin(), acts_.end(), act);
  if (it == acts_.end() || *it != act) acts_.insert(it, act);
}

bool ActSet::contains(int act) const { return std::binary_search(acts_.begin(), acts_.end(), act); }

std::vector<double> vectorize_actset(const ActSet& acts, const ActVocabulary& vocab) {
  std::vector<double> v(static_cast<std::size_t>(vocab.size()), 0.0);
  for (const int a : acts) {
    if (a < 0 || a >= vocab.size())
      throw VocabularyError("act index " + std::to_string(a) + " out of range");
    v[static_cast<std::size_t>(a)] = 1.0;
  }
  return v;
}

ActSet devectorize_actset(std::span<const double> v) {
  std::vector<int> acts;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] > 0.5) acts.push_back(static_cast<int>(i));
  return ActSet(std::move(acts));
}

bool UserGoal::is_active(int domain) const {
  return std::find(domains.begin(), domains.end(), domain) != domains.end();
}

std::vector<int> UserGoal::bookings(const EnvSpec& spec) const {
  std::vector<int> out;
  for (const int d : domains)
    if (spec.domains.at(d).bookable) out.push_back(d);
  return out;
}

std::map<SlotRef, int> UserGoal::constraints_of(int domain) const {
  std::map<SlotRef, int> out;
  for (const auto& [ref, value] : constraints)
    if (ref.domain == domain) out.emplace(ref, value);
  return out;
}

void UserGoal::validate(const EnvSpec& spec) const {
  auto check_ref = [&](const SlotRef& r) {
    if (r.domain < 0 || r.domain >= spec.num_domains() || r.slot < 0 ||
        r.slot >= spec.num_slots(r.domain))
      throw SpecError("goal references a slot outside the spec");
  };
  if (requests.empty()) throw SpecError("goal has no requests");
  for (const auto& [ref, value] : constraints) {
    check_ref(ref);
    if (value < 0 || value >= spec.slot(ref.domain, ref.slot).num_values)
      throw SpecError("goal constraint value out of range");
    if (requests.count(ref)) throw SpecError("goal constraint and request overlap");
  }
  for (const auto& ref : requests) check_ref(ref);
}

int db_bucket(std::size_t count) {
  if (count == 0) return 0;
  if (count == 1) return 1;
  if (count <= 4) return 2;
  return 3;
}

std::size_t goal_block_size(const EnvSpec& spec) {
  std::size_t n = 0;
  for (const auto& d : spec.domains)
    for (const auto& s : d.slots) n += 2 + static_cast<std::size_t>(s.num_values);
  return n;
}

void encode_goal(const EnvSpec& spec, const UserGoal& goal, std::span<double> out) {
  if (out.size() != goal_block_size(spec)) throw ContractError("encode_goal: wrong block size");
  std::fill(out.begin(), out.end(), 0.0);
  std::size_t off = 0;
  for (int d = 0; d < spec.num_domains(); ++d) {
    for (int s = 0; s < spec.num_slots(d); ++s) {
      const auto nv = static_cast<std::size_t>(spec.slot(d, s).num_values);
      const auto it = goal.constraints.find({d, s});
      if (it != goal.constraints.end()) {
        out[off] = 1.0;
        out[off + 1 + static_cast<std::size_t>(it->second)] = 1.0;
      }
      if (goal.requests.count({d, s})) out[off + 1 + nv] = 1.0;
      off += 2 + nv;
    }
  }
}

void or_pool(const ActSet& acts, std::span<double> out) {
  for (const int a : acts) {
    if (a < 0 || static_cast<std::size_t>(a) >= out.size())
      throw VocabularyError("act index " + std::to_string(a) + " out of range");
    out[static_cast<std::size_t>(a)] = 1.0;
  }
}

double Trajectory::total_return() const {
  double r = 0.0;
  for (const auto& t : tuples) r += t.reward;
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json acts_to_json(const ActSet& a) { return Json(a.indices()); }

ActSet acts_from_json(const Json& j) { return ActSet(j.get<std::vector<int>>()); }

Json slotmap_to_json(const std::map<SlotRef, int>& m) {
  Json out = Json::array();
  for (const auto& [ref, v] : m) out.push_back({ref.domain, ref.slot, v});
  return out;
}

std::map<SlotRef, int> slotmap_from_json(const Json& j) {
  std::map<SlotRef, int> m;
  for (const auto& e : j) m[{e.at(0).get<int>(), e.at(1).get<int>()}] = e.at(2).get<int>();
  return m;
}

Json goal_to_json(const UserGoal& g) {
  Json reqs = Json::array();
  for (const auto& r : g.requests) reqs.push_back({r.domain, r.slot});
  return {slotmap_to_json(g.constraints), reqs, g.domains};
}

UserGoal goal_from_json(const Json& j) {
  UserGoal g;
  g.constraints = slotmap_from_json(j.at(0));
  for (const auto& r : j.at(1)) g.requests.insert({r.at(0).get<int>(), r.at(1).get<int>()});
  g.domains = j.at(2).get<std::vector<int>>();
  return g;
}

Json user_state_to_json(const UserState& s) {
  Json hist = Json::array();
  for (const auto& a : s.agent_acts) hist.push_back(acts_to_json(a));
  return {goal_to_json(s.goal), hist};
}

UserState user_state_from_json(const Json& j) {
  UserState s;
  s.goal = goal_from_json(j.at(0));
  for (const auto& a : j.at(1)) s.agent_acts.push_back(acts_from_json(a));
  return s;
}

Json agent_state_to_json(const AgentState& s) {
  Json hist = Json::array();
  for (const auto& [u, a] : s.history) hist.push_back({acts_to_json(u), acts_to_json(a)});
  return {goal_to_json(s.goal_view), hist, acts_to_json(s.user_act), slotmap_to_json(s.revealed),
          s.db_summary};
}

AgentState agent_state_from_json(const Json& j) {
  AgentState s;
  s.goal_view = goal_from_json(j.at(0));
  for (const auto& p : j.at(1)) s.history.emplace_back(acts_from_json(p.at(0)), acts_from_json(p.at(1)));
  s.user_act = acts_from_json(j.at(2));
  s.revealed = slotmap_from_json(j.at(3));
  s.db_summary = j.at(4).get<std::vector<int>>();
  return s;
}

Json tuple_fields(const InteractionTuple& t) {
  return {agent_state_to_json(t.s_agent), acts_to_json(t.a_agent), t.reward,
          user_state_to_json(t.s_user), acts_to_json(t.a_user), t.terminal};
}

InteractionTuple tuple_from_fields(const Json& j, std::size_t offset) {
  InteractionTuple t;
  t.s_agent = agent_state_from_json(j.at(offset + 0));
  t.a_agent = acts_from_json(j.at(offset + 1));
  t.reward = j.at(offset + 2).get<double>();
  t.s_user = user_state_from_json(j.at(offset + 3));
  t.a_user = acts_from_json(j.at(offset + 4));
  t.terminal = j.at(offset + 5).get<bool>();
  return t;
}

std::string provenance_to_string(const Provenance& p) {
  return p.kind == Provenance::Kind::expert ? "expert" : "dvs:" + std::to_string(p.model_id);
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "expert") return Provenance::expert();
  if (s.rfind("dvs:", 0) == 0) return Provenance::diversified(std::stoi(s.substr(4)));
  throw FormatError("bad provenance label: " + s);
}

}  // namespace

std::string tuple_to_line(const InteractionTuple& t) { return tuple_fields(t).dump(); }

InteractionTuple tuple_from_line(const std::string& line) {
  try {
    return tuple_from_fields(Json::parse(line), 0);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad tuple record: ") + e.what());
  }
}

void write_trajectories(std::ostream& out, std::span<const Trajectory> trajs) {
  for (const auto& traj : trajs) {
    for (std::size_t i = 0; i < traj.size(); ++i) {
      Json row = {traj.id, i, provenance_to_string(traj.provenance.at(i)),
                  traj.branch_point ? Json(*traj.branch_point) : Json(nullptr)};
      for (auto& f : tuple_fields(traj.tuples[i])) row.push_back(std::move(f));
      out << row.dump() << '\n';
    }
  }
}

std::vector<Trajectory> read_trajectories(std::istream& in) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const Json row = Json::parse(line);
      const auto id = row.at(0).get<std::int64_t>();
      const auto turn = row.at(1).get<std::size_t>();
      if (turn == 0 || out.empty() || out.back().id != id) {
        if (turn != 0) throw FormatError("trajectory does not start at turn 0");
        out.emplace_back();
        out.back().id = id;
        if (!row.at(3).is_null()) out.back().branch_point = row.at(3).get<std::size_t>();
      } else if (turn != out.back().size()) {
        throw FormatError("turn index out of order");
      }
      out.back().push(tuple_from_fields(row, 4), provenance_from_string(row.at(2).get<std::string>()));
    } catch (const Json::exception& e) {
      throw FormatError("dump line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("dump line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_trajectories(const std::string& path, std::span<const Trajectory> trajs) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  write_trajectories(out, trajs);
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  return read_trajectories(in);
}

}  // namespace isee
