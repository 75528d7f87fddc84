#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isee/config.hpp"

namespace isee {

struct SlotSpec {
  std::string name;
  int num_values = 5;
  bool constrainable = false;
  bool requestable = false;
};

struct DomainSpec {
  std::string name;
  std::vector<SlotSpec> slots;
  double active_prob = 0.5;
  bool bookable = true;
};

// Declarative description of the synthetic slot-filling world.
struct EnvSpec {
  std::vector<DomainSpec> domains;
  std::uint64_t kb_seed = 7;
  int entities_per_domain = 50;
  int max_turns = 20;
  int patience = 3;
  int max_active_domains = 2;
  bool agent_sees_full_goal = true;

  // Two domains (hotel, restaurant), four slots each: two constrainable and
  // two requestable, five values per slot.
  static EnvSpec default_spec();

  // Reads the `env.*` keys; missing keys keep their defaults.
  static EnvSpec from_config(const KeyValueConfig& cfg);
  void write_config(KeyValueConfig& cfg) const;

  // Throws SpecError on structural problems.
  void validate() const;

  int num_domains() const { return static_cast<int>(domains.size()); }
  int num_slots(int domain) const { return static_cast<int>(domains.at(domain).slots.size()); }
  const SlotSpec& slot(int domain, int slot) const { return domains.at(domain).slots.at(slot); }
};

}  // namespace isee
