#include "isee/env_spec.hpp"

#include <set>

#include "isee/errors.hpp"

namespace isee {

EnvSpec EnvSpec::default_spec() {
  EnvSpec spec;
  auto make = [](std::string name, std::string c0, std::string c1) {
    DomainSpec d;
    d.name = std::move(name);
    d.slots = {{std::move(c0), 5, true, false},
               {std::move(c1), 5, true, false},
               {"address", 5, false, true},
               {"phone", 5, false, true}};
    return d;
  };
  spec.domains = {make("hotel", "area", "stars"), make("restaurant", "area", "food")};
  return spec;
}

EnvSpec EnvSpec::from_config(const KeyValueConfig& cfg) {
  const EnvSpec defaults = default_spec();
  EnvSpec spec;
  spec.kb_seed = cfg.get_uint("env.kb_seed", defaults.kb_seed);
  spec.entities_per_domain =
      static_cast<int>(cfg.get_int("env.entities_per_domain", defaults.entities_per_domain));
  spec.max_turns = static_cast<int>(cfg.get_int("env.max_turns", defaults.max_turns));
  spec.patience = static_cast<int>(cfg.get_int("env.patience", defaults.patience));
  spec.max_active_domains =
      static_cast<int>(cfg.get_int("env.max_active_domains", defaults.max_active_domains));
  spec.agent_sees_full_goal = cfg.get_bool("env.agent_sees_full_goal", defaults.agent_sees_full_goal);

  if (!cfg.has("env.domains")) {
    spec.domains = defaults.domains;
    return spec;
  }
  for (const auto& name : cfg.get_list("env.domains", {})) {
    DomainSpec d;
    d.name = name;
    const std::string prefix = "env." + name + ".";
    d.active_prob = cfg.get_double(prefix + "active_prob", 0.5);
    d.bookable = cfg.get_bool(prefix + "bookable", true);
    const auto values = static_cast<int>(cfg.get_int(prefix + "values", 5));
    for (const auto& s : cfg.get_list(prefix + "constrainable", {}))
      d.slots.push_back({s, values, true, false});
    for (const auto& s : cfg.get_list(prefix + "requestable", {}))
      d.slots.push_back({s, values, false, true});
    for (auto& s : d.slots)
      s.num_values = static_cast<int>(cfg.get_int(prefix + s.name + ".values", s.num_values));
    spec.domains.push_back(std::move(d));
  }
  return spec;
}

void EnvSpec::write_config(KeyValueConfig& cfg) const {
  cfg.set("env.kb_seed", std::to_string(kb_seed));
  cfg.set("env.entities_per_domain", std::to_string(entities_per_domain));
  cfg.set("env.max_turns", std::to_string(max_turns));
  cfg.set("env.patience", std::to_string(patience));
  cfg.set("env.max_active_domains", std::to_string(max_active_domains));
  cfg.set("env.agent_sees_full_goal", agent_sees_full_goal ? "true" : "false");
  std::string names;
  for (const auto& d : domains) {
    names += (names.empty() ? "" : ",") + d.name;
    const std::string prefix = "env." + d.name + ".";
    std::string cons, reqs;
    for (const auto& s : d.slots) {
      auto& list = s.constrainable ? cons : reqs;
      list += (list.empty() ? "" : ",") + s.name;
      cfg.set(prefix + s.name + ".values", std::to_string(s.num_values));
    }
    cfg.set(prefix + "constrainable", cons);
    cfg.set(prefix + "requestable", reqs);
    cfg.set(prefix + "active_prob", std::to_string(d.active_prob));
    cfg.set(prefix + "bookable", d.bookable ? "true" : "false");
  }
  cfg.set("env.domains", names);
}

void EnvSpec::validate() const {
  if (domains.empty()) throw SpecError("spec has no domains");
  if (max_turns < 2) throw SpecError("max_turns must be at least 2");
  if (patience < 1) throw SpecError("patience must be at least 1");
  if (entities_per_domain < 1) throw SpecError("entities_per_domain must be positive");
  if (max_active_domains < 1) throw SpecError("max_active_domains must be positive");
  std::set<std::string> names;
  for (const auto& d : domains) {
    if (!names.insert(d.name).second) throw SpecError("duplicate domain: " + d.name);
    if (d.active_prob <= 0.0 || d.active_prob > 1.0)
      throw SpecError("domain " + d.name + ": active_prob must be in (0, 1]");
    bool has_constraint = false, has_request = false;
    std::set<std::string> slot_names;
    for (const auto& s : d.slots) {
      if (!slot_names.insert(s.name).second)
        throw SpecError("domain " + d.name + ": duplicate slot " + s.name);
      if (s.num_values < 1) throw SpecError("slot " + d.name + "." + s.name + ": needs values");
      if (s.constrainable && s.requestable)
        throw SpecError("slot " + d.name + "." + s.name + ": cannot be both constrainable and requestable");
      has_constraint |= s.constrainable;
      has_request |= s.requestable;
    }
    if (!has_constraint) throw SpecError("domain " + d.name + ": needs a constrainable slot");
    if (!has_request) throw SpecError("domain " + d.name + ": needs a requestable slot");
  }
}

}  // namespace isee
