// isee: train, evaluate and inspect dialogue agents on the toy environment.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "isee/agents.hpp"
#include "isee/dume.hpp"
#include "isee/errors.hpp"
#include "isee/runner.hpp"

using namespace isee;

namespace {

EnvSpec spec_from(const std::string& config_path) {
  if (config_path.empty()) return EnvSpec::default_spec();
  auto kv = KeyValueConfig::load(config_path);
  return IseeConfig::from_config(kv).env;
}

std::vector<UserState> user_states(const std::vector<Trajectory>& trajs) {
  std::vector<UserState> out;
  for (const auto& t : trajs)
    for (const auto& tuple : t.tuples) out.push_back(tuple.s_user);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"I-SEE dialogue policy training on a synthetic slot-filling world"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, ensemble_dir, states_path, data_path;
  int episodes = 500, dialogues = 2000, members = 1;
  std::uint64_t seed = 1;
  double epsilon = 0.2;
  bool symmetric = false;
  std::vector<int> sizes;

  auto* train = app.add_subcommand("train", "run the outer training loop for every configured seed");
  train->add_option("--config", config, "flat key = value config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "artifact directory")->required();

  auto* eval = app.add_subcommand("eval", "greedy evaluation of a learner checkpoint against the expert user");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed);

  auto* div = app.add_subcommand("diversity", "pairwise KL of an ensemble over dumped user states");
  div->add_option("--ensemble", ensemble_dir)->required()->check(CLI::ExistingDirectory);
  div->add_option("--states", states_path, "trajectory dump")->required()->check(CLI::ExistingFile);
  div->add_flag("--symmetric", symmetric, "symmetrized KL over unordered pairs");
  div->add_option("--sizes", sizes, "also report the first k members for each k")->delimiter(',');

  auto* bc = app.add_subcommand("bc-train", "behavior-clone user models from a trajectory dump");
  bc->add_option("--data", data_path, "trajectory dump")->required()->check(CLI::ExistingFile);
  bc->add_option("--config", config, "config for env.* and bc.* keys")->check(CLI::ExistingFile);
  bc->add_option("--members", members, "ensemble size")->check(CLI::PositiveNumber);
  bc->add_option("--seed", seed);
  bc->add_option("--out", out, "ensemble directory")->required();

  auto* collect = app.add_subcommand("collect", "dump expert dialogues driven by the scripted collector");
  collect->add_option("--config", config)->check(CLI::ExistingFile);
  collect->add_option("--dialogues", dialogues)->check(CLI::PositiveNumber);
  collect->add_option("--epsilon", epsilon)->check(CLI::Range(0.0, 1.0));
  collect->add_option("--seed", seed);
  collect->add_option("--out", out, "trajectory dump")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      run_experiment(config, out);
      std::cout << "wrote " << out << '\n';
    } else if (*eval) {
      auto [learner, spec] = load_learner(checkpoint);
      const ToyEnv env(spec);
      const auto m = evaluate_policy(learner, env, episodes, seed);
      std::cout << "success,inform_f1,match,turns,mean_return\n"
                << format_double(m.success) << ',' << format_double(m.inform_f1) << ',' << format_double(m.match)
                << ',' << format_double(m.turns) << ',' << format_double(m.mean_return) << '\n';
    } else if (*div) {
      EnvSpec spec;
      const auto e = load_ensemble(ensemble_dir, &spec);
      const ToyEnv env(spec);
      const UserStateEncoder enc(spec, env.agent_vocab().size());
      const auto states = user_states(load_trajectories(states_path));
      if (sizes.empty()) sizes.push_back(static_cast<int>(e.size()));
      std::cout << "members,states,mean_kl,std_kl\n";
      for (const int k : sizes) {
        if (k < 2 || k > static_cast<int>(e.size()))
          throw ContractError("--sizes entries must lie in [2, " + std::to_string(e.size()) + "]");
        const std::span members(e.models.data(), static_cast<std::size_t>(k));
        const auto d = ensemble_diversity(members, enc, states, env.user_vocab().size(), 1e-6, symmetric);
        std::cout << k << ',' << states.size() << ',' << format_double(d.mean_kl) << ','
                  << format_double(d.std_kl) << '\n';
      }
    } else if (*bc) {
      IseeConfig cfg;
      if (!config.empty()) cfg = IseeConfig::load(config);
      const ToyEnv env(cfg.env);
      const UserStateEncoder enc(cfg.env, env.agent_vocab().size());
      const auto data = load_trajectories(data_path);
      const auto examples = make_bc_examples(data, enc, env.user_vocab());
      const auto e = build_ensemble(examples, members, seed, cfg.bc, enc.describe());
      save_ensemble(out, e, cfg.env);
      std::ofstream losses(std::filesystem::path(out) / "loss.csv");
      losses << "member,epoch,loss\n";
      for (std::size_t j = 0; j < e.size(); ++j)
        for (std::size_t k = 0; k < e.models[j].training_log.size(); ++k)
          losses << j << ',' << k + 1 << ',' << format_double(e.models[j].training_log[k]) << '\n';
      for (std::size_t j = 0; j < e.size(); ++j)
        std::cout << "member " << j << " final loss " << format_double(e.models[j].training_log.back())
                  << " imitation f1 " << format_double(imitation_f1(e.models[j], enc, data)) << '\n';
    } else if (*collect) {
      const ToyEnv env(spec_from(config));
      const auto trajs = collect_expert_dialogues(env, dialogues, epsilon, RngStream(seed, 0));
      save_trajectories(out, trajs);
      std::cout << "wrote " << trajs.size() << " dialogues to " << out << '\n';
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
