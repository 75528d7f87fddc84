#include "isee/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "isee/errors.hpp"

namespace isee {

std::string to_string(DivMode mode) {
  switch (mode) {
    case DivMode::none: return "none";
    case DivMode::full: return "full";
    case DivMode::isee: return "isee";
  }
  return "?";
}

DivMode div_mode_from_string(const std::string& s) {
  if (s == "none") return DivMode::none;
  if (s == "full") return DivMode::full;
  if (s == "isee") return DivMode::isee;
  throw ConfigError("unknown diversification mode: " + s);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------

IseeConfig IseeConfig::from_config(const KeyValueConfig& kv) {
  IseeConfig c;
  c.env = EnvSpec::from_config(kv);
  c.learner = learner_kind_from_string(kv.get_string("agent.kind", to_string(c.learner)));
  c.agent = LearnerHyper::from_config(kv);
  c.bc.hidden = kv.get_uint("bc.hidden", c.bc.hidden);
  c.bc.epochs = static_cast<int>(kv.get_int("bc.epochs", c.bc.epochs));
  c.bc.lr = kv.get_double("bc.lr", c.bc.lr);
  c.bc.batch_size = kv.get_uint("bc.batch_size", c.bc.batch_size);
  c.bc.refresh_epochs = static_cast<int>(kv.get_int("bc.refresh_epochs", c.bc.refresh_epochs));
  c.mode = div_mode_from_string(kv.get_string("isee.mode", to_string(c.mode)));
  c.E = static_cast<int>(kv.get_int("isee.E", c.E));
  c.H = static_cast<int>(kv.get_int("isee.H", c.H));
  c.eta = kv.get_double("isee.eta", c.eta);
  c.episodes_per_iteration = static_cast<int>(kv.get_int("run.episodes_per_iteration", c.episodes_per_iteration));
  c.iterations = static_cast<int>(kv.get_int("run.iterations", c.iterations));
  std::vector<std::string> seed_text;
  for (const auto s : c.seeds) seed_text.push_back(std::to_string(s));
  c.seeds.clear();
  for (const auto& s : kv.get_list("run.seeds", seed_text)) {
    try {
      std::size_t used = 0;
      c.seeds.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::logic_error&) {
      throw ConfigError("run.seeds: not an unsigned integer: " + s);
    }
  }
  c.eval_episodes = static_cast<int>(kv.get_int("eval.episodes", c.eval_episodes));
  c.eval_every = static_cast<int>(kv.get_int("eval.every", c.eval_every));
  c.eval_seed = kv.get_uint("eval.seed", c.eval_seed);
  c.pretrain_dialogues = static_cast<int>(kv.get_int("dume.pretrain_dialogues", c.pretrain_dialogues));
  c.behavior_epsilon = kv.get_double("dume.behavior_epsilon", c.behavior_epsilon);
  c.diversity_states = static_cast<int>(kv.get_int("dume.diversity_states", c.diversity_states));
  kv.ensure_all_consumed();
  c.validate();
  return c;
}

IseeConfig IseeConfig::load(const std::string& path) { return from_config(KeyValueConfig::load(path)); }

KeyValueConfig IseeConfig::to_config() const {
  KeyValueConfig kv;
  env.write_config(kv);
  agent.write_config(kv);
  kv.set("agent.kind", to_string(learner));
  kv.set("bc.hidden", std::to_string(bc.hidden));
  kv.set("bc.epochs", std::to_string(bc.epochs));
  kv.set("bc.lr", format_double(bc.lr));
  kv.set("bc.batch_size", std::to_string(bc.batch_size));
  kv.set("bc.refresh_epochs", std::to_string(bc.refresh_epochs));
  kv.set("isee.mode", to_string(mode));
  kv.set("isee.E", std::to_string(E));
  kv.set("isee.H", std::to_string(H));
  kv.set("isee.eta", format_double(eta));
  kv.set("run.episodes_per_iteration", std::to_string(episodes_per_iteration));
  kv.set("run.iterations", std::to_string(iterations));
  std::string seeds_text;
  for (const auto s : seeds) seeds_text += (seeds_text.empty() ? "" : ",") + std::to_string(s);
  kv.set("run.seeds", seeds_text);
  kv.set("eval.episodes", std::to_string(eval_episodes));
  kv.set("eval.every", std::to_string(eval_every));
  kv.set("eval.seed", std::to_string(eval_seed));
  kv.set("dume.pretrain_dialogues", std::to_string(pretrain_dialogues));
  kv.set("dume.behavior_epsilon", format_double(behavior_epsilon));
  kv.set("dume.diversity_states", std::to_string(diversity_states));
  return kv;
}

void IseeConfig::validate() const {
  env.validate();
  if (mode == DivMode::isee && E == 0) throw ConfigError("isee.E must be positive in isee mode");
  if (E < 1) throw ConfigError("isee.E must be >= 1");
  if (H < 1) throw ConfigError("isee.H must be >= 1");
  if (!(eta >= 0.0)) throw ConfigError("isee.eta must be >= 0");
  if (episodes_per_iteration < 1) throw ConfigError("run.episodes_per_iteration must be >= 1");
  if (iterations < 0) throw ConfigError("run.iterations must be >= 0");
  if (eval_episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (eval_every < 1) throw ConfigError("eval.every must be >= 1");
  if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (mode != DivMode::none && pretrain_dialogues < 1) throw ConfigError("dume.pretrain_dialogues must be >= 1");
  if (behavior_epsilon < 0.0 || behavior_epsilon > 1.0) throw ConfigError("dume.behavior_epsilon must be in [0, 1]");
  if (bc.hidden == 0 || bc.batch_size == 0 || bc.epochs < 1 || bc.refresh_epochs < 0)
    throw ConfigError("bc sizes must be positive");
}

// ---------------------------------------------------------------------------

ExpertUser::ExpertUser(const ToyEnv& env, const UserGoal& goal) : env_(&env), state_(env.expert_start(goal)) {}

ActSet ExpertUser::act(const UserState&, const std::optional<ActSet>& last_agent_act) {
  auto [acts, next] = env_->expert_policy(state_, last_agent_act);
  state_ = std::move(next);
  return acts;
}

ModelUser::ModelUser(const UserModel& model, const UserStateEncoder& enc, int model_id)
    : model_(&model), enc_(&enc), id_(model_id) {}

ActSet ModelUser::act(const UserState& s, const std::optional<ActSet>&) {
  return decode_user_action(*model_, *enc_, s);
}

DialoguePolicy learner_policy(PolicyLearner& l, const AgentStateEncoder& enc, const AgentActionSpace& space,
                              Mode mode) {
  return [&l, &enc, &space, mode](const AgentState& s) {
    return space.acts(select_action(l, enc.encode(s), mode));
  };
}

DialoguePolicy oracle_policy(const ToyEnv& env, const UserGoal& goal) {
  return [&env, goal](const AgentState& s) { return env.oracle_act(s, goal); };
}

DialoguePolicy behavior_policy(const ToyEnv& env, const UserGoal& goal, const AgentActionSpace& space,
                               double epsilon, RngStream& rng) {
  return [&env, goal, &space, epsilon, &rng](const AgentState& s) {
    if (rng.uniform() < epsilon) return space.acts(static_cast<int>(rng.below(space.size())));
    return env.oracle_act(s, goal);
  };
}

DialoguePolicy random_policy(const AgentActionSpace& space, RngStream& rng) {
  return [&space, &rng](const AgentState&) { return space.acts(static_cast<int>(rng.below(space.size()))); };
}

Trajectory generate_trajectory(UserSimulator& sim, const DialoguePolicy& policy, DialogueSession& session,
                               int t_max) {
  if (t_max < 1) throw ContractError("generate_trajectory: T_max must be >= 1");
  if (session.finished()) throw ContractError("generate_trajectory: dialogue already finished");
  Trajectory traj;
  for (int t = 0; t < t_max; ++t) {
    InteractionTuple tuple;
    tuple.s_user = session.user_state();
    std::optional<ActSet> last;
    if (!tuple.s_user.agent_acts.empty()) last = tuple.s_user.agent_acts.back();
    tuple.a_user = sim.act(tuple.s_user, last);
    tuple.s_agent = session.begin_turn(tuple.a_user);
    tuple.a_agent = policy(tuple.s_agent);
    const auto [r, terminal] = session.end_turn(tuple.a_agent);
    tuple.reward = r;
    tuple.terminal = terminal;
    traj.push(std::move(tuple), sim.provenance());
    if (terminal) break;
  }
  return traj;
}

Trajectory branch_trajectory(const ToyEnv& env, const Trajectory& base, std::size_t p, UserSimulator& model,
                             const DialoguePolicy& policy, int h) {
  if (p == 0) throw ContractError("branch_trajectory: branch point must be > 0");
  if (p >= base.size()) throw ContractError("branch_trajectory: branch point out of range");
  if (base.tuples[p].terminal) throw ContractError("branch_trajectory: cannot branch at a terminal tuple");
  if (h < 1) throw ContractError("branch_trajectory: horizon must be >= 1");
  Trajectory seg;
  seg.id = base.id;
  seg.branch_point = p;
  seg.push(base.tuples[p], base.provenance.at(p));
  auto session = DialogueSession::resume_after(env, base.tuples[p]);
  auto cont = generate_trajectory(model, policy, session, h);
  for (std::size_t i = 0; i < cont.size(); ++i) seg.push(std::move(cont.tuples[i]), cont.provenance[i]);
  return seg;
}

// ---------------------------------------------------------------------------

EvalMetrics evaluate_policy(const ToyEnv& env, const std::function<DialoguePolicy(const UserGoal&)>& make_policy,
                            int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ContractError("evaluate_policy: need at least one episode");
  RngStream goals(seed, 0);
  EvalMetrics m;
  for (int e = 0; e < episodes; ++e) {
    const auto goal = env.sample_goal(goals);
    DialogueSession session(env, goal);
    ExpertUser user(env, goal);
    const auto traj = generate_trajectory(user, make_policy(goal), session, env.max_turns());
    const auto out = session.outcome();
    m.success += out.success;
    m.inform_f1 += out.inform_f1;
    m.match += out.match;
    m.turns += out.turns;
    m.mean_return += traj.total_return();
  }
  const double n = episodes;
  m.success /= n;
  m.inform_f1 /= n;
  m.match /= n;
  m.turns /= n;
  m.mean_return /= n;
  return m;
}

EvalMetrics evaluate_policy(PolicyLearner& l, const ToyEnv& env, int episodes, std::uint64_t seed) {
  const AgentActionSpace space(env);
  const AgentStateEncoder enc(env.spec(), env.user_vocab().size(), env.agent_vocab().size());
  if (static_cast<int>(l.net.dims.out) != space.size() || l.net.dims.in != enc.size())
    throw ContractError("evaluate_policy: learner does not fit this environment");
  const auto policy = learner_policy(l, enc, space, Mode::eval);
  return evaluate_policy(env, [&](const UserGoal&) { return policy; }, episodes, seed);
}

std::vector<Trajectory> collect_expert_dialogues(const ToyEnv& env, int dialogues, double epsilon, RngStream rng) {
  const AgentActionSpace space(env);
  auto goals = rng.derive(1);
  auto actions = rng.derive(2);
  std::vector<Trajectory> out;
  for (int i = 0; i < dialogues; ++i) {
    const auto goal = env.sample_goal(goals);
    DialogueSession session(env, goal);
    ExpertUser user(env, goal);
    auto traj = generate_trajectory(user, behavior_policy(env, goal, space, epsilon, actions), session,
                                    env.max_turns());
    traj.id = i;
    out.push_back(std::move(traj));
  }
  return out;
}

double imitation_f1(const UserModel& m, const UserStateEncoder& enc, std::span<const Trajectory> expert) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& traj : expert) {
    for (const auto& t : traj.tuples) {
      const auto pred = decode_user_action(m, enc, t.s_user);
      for (const int a : pred) (t.a_user.contains(a) ? tp : fp) += 1;
      for (const int a : t.a_user)
        if (!pred.contains(a)) fn += 1;
    }
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

// ---------------------------------------------------------------------------

void TrajectoryStore::clear() {
  base.clear();
  dvs.clear();
  base_tuples = dvs_tuples = 0;
}

double TrajectoryStore::eta_realized() const {
  if (base_tuples == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(dvs_tuples) / static_cast<double>(base_tuples);
}

IseeLog isee_train(const IseeConfig& cfg, const ToyEnv& env, Ensemble& ensemble, PolicyLearner& learner,
                   std::uint64_t seed, std::span<const UserState> diversity_states) {
  cfg.validate();
  if (cfg.mode != DivMode::none) {
    if (ensemble.models.empty()) throw ContractError("isee_train: this mode needs a pretrained ensemble");
    ensemble.validate();
  }
  const AgentActionSpace space(env);
  const AgentStateEncoder agent_enc(env.spec(), env.user_vocab().size(), env.agent_vocab().size());
  const UserStateEncoder user_enc(env.spec(), env.agent_vocab().size());
  const int user_end = env.user_vocab().end_index();
  const RngStream root(seed, 0);
  auto goal_rng = root.derive(5);
  auto branch_rng = root.derive(6);
  const auto train_policy = learner_policy(learner, agent_enc, space, Mode::train);

  IseeLog log;
  TrajectoryStore store;
  std::int64_t episodes = 0;

  auto log_diversity = [&](int it) {
    if (ensemble.models.size() < 2 || diversity_states.empty()) return;
    log.diversity.push_back({it, static_cast<int>(ensemble.models.size()),
                             ensemble_diversity(ensemble.models, user_enc, diversity_states,
                                                env.user_vocab().size())});
  };
  auto evaluate = [&](int it) {
    CurveRow row;
    row.iteration = it;
    row.episodes = episodes;
    row.metrics = evaluate_policy(learner, env, cfg.eval_episodes, cfg.eval_seed);
    row.eta_realized = store.eta_realized();  // nan before any data and in mode full
    log.curve.push_back(row);
    if (cfg.mode != DivMode::none) log_diversity(it);
  };

  evaluate(0);
  for (int it = 1; it <= cfg.iterations; ++it) {
    store.clear();
    for (int e = 0; e < cfg.episodes_per_iteration; ++e) {
      const auto goal = env.sample_goal(goal_rng);
      DialogueSession session(env, goal);
      Trajectory traj;
      if (cfg.mode == DivMode::full) {
        const auto j = static_cast<int>(branch_rng.below(ensemble.models.size()));
        ModelUser user(ensemble.models[static_cast<std::size_t>(j)], user_enc, j);
        traj = generate_trajectory(user, train_policy, session, env.max_turns());
        log.model_turns += static_cast<std::int64_t>(traj.size());
        traj.id = episodes;
        store.dvs_tuples += traj.size();
        log.episode_returns.push_back(traj.total_return());
        store.dvs.push_back(std::move(traj));
      } else {
        ExpertUser user(env, goal);
        traj = generate_trajectory(user, train_policy, session, env.max_turns());
        log.expert_training_turns += static_cast<std::int64_t>(traj.size());
        traj.id = episodes;
        store.base_tuples += traj.size();
        log.episode_returns.push_back(traj.total_return());
        store.base.push_back(std::move(traj));
      }
      ++episodes;
    }

    std::size_t max_segment = 0;
    if (cfg.mode == DivMode::isee && cfg.eta > 0.0) {
      std::vector<std::pair<std::size_t, std::size_t>> points;
      for (std::size_t b = 0; b < store.base.size(); ++b)
        for (std::size_t p = 1; p < store.base[b].size(); ++p)
          if (!store.base[b].tuples[p].terminal) points.emplace_back(b, p);
      const double target = cfg.eta * static_cast<double>(store.base_tuples);
      while (!points.empty() && static_cast<double>(store.dvs_tuples) < target) {
        const auto j = static_cast<int>(branch_rng.below(ensemble.models.size()));
        const auto [b, p] = points[branch_rng.below(points.size())];
        ModelUser user(ensemble.models[static_cast<std::size_t>(j)], user_enc, j);
        auto seg = branch_trajectory(env, store.base[b], p, user, train_policy, cfg.H);
        const auto fresh = seg.size() - 1;
        log.model_turns += static_cast<std::int64_t>(fresh);
        store.dvs_tuples += fresh;
        max_segment = std::max(max_segment, fresh);
        store.dvs.push_back(std::move(seg));
      }
    }

    log.updates.push_back({store.base_tuples, store.dvs_tuples, max_segment});
    std::vector<Trajectory> batch = store.base;
    batch.insert(batch.end(), store.dvs.begin(), store.dvs.end());
    learn_from(learner, batch, agent_enc, space, user_end);

    // Full mode has no expert data to refresh from; none has no models.
    if (cfg.mode == DivMode::isee && cfg.bc.refresh_epochs > 0 && !store.base.empty()) {
      const auto examples = make_bc_examples(store.base, user_enc, env.user_vocab());
      for (auto& m : ensemble.models) fine_tune(m, examples, cfg.bc.refresh_epochs, cfg.bc);
    }

    if (it % cfg.eval_every == 0 || it == cfg.iterations) evaluate(it);
  }
  return log;
}

SeedRun run_seed(const IseeConfig& cfg, std::uint64_t seed) {
  const ToyEnv env(cfg.env);
  const AgentActionSpace space(env);
  const AgentStateEncoder agent_enc(env.spec(), env.user_vocab().size(), env.agent_vocab().size());
  const UserStateEncoder user_enc(env.spec(), env.agent_vocab().size());
  const RngStream root(seed, 0);

  SeedRun run;
  std::vector<UserState> states;
  if (cfg.mode != DivMode::none) {
    const auto data = collect_expert_dialogues(env, cfg.pretrain_dialogues, cfg.behavior_epsilon, root.derive(1));
    const auto examples = make_bc_examples(data, user_enc, env.user_vocab());
    run.ensemble = build_ensemble(examples, cfg.E, root.derive(3).next_u64(), cfg.bc, user_enc.describe());
    for (const auto& traj : data) {
      for (const auto& t : traj.tuples) {
        if (static_cast<int>(states.size()) >= cfg.diversity_states) break;
        states.push_back(t.s_user);
      }
    }
  }
  run.learner = make_learner(cfg.learner, agent_enc.size(), space.size(), cfg.agent, root.derive(4));
  run.log = isee_train(cfg, env, run.ensemble, run.learner, seed, states);
  return run;
}

void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows) {
  out << "iteration,episodes,success,inform_f1,match,turns,mean_return,eta_realized\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.episodes << ',' << format_double(r.metrics.success) << ','
        << format_double(r.metrics.inform_f1) << ',' << format_double(r.metrics.match) << ','
        << format_double(r.metrics.turns) << ',' << format_double(r.metrics.mean_return) << ','
        << format_double(r.eta_realized) << '\n';
  }
}

void write_diversity_csv(std::ostream& out, std::span<const DiversityRow> rows) {
  out << "iteration,members,mean_kl,std_kl\n";
  for (const auto& r : rows)
    out << r.iteration << ',' << r.members << ',' << format_double(r.stats.mean_kl) << ','
        << format_double(r.stats.std_kl) << '\n';
}

namespace fs = std::filesystem;

void save_ensemble(const std::string& dir, const Ensemble& e, const EnvSpec& spec) {
  fs::create_directories(dir);
  KeyValueConfig kv;
  spec.write_config(kv);
  std::ofstream(fs::path(dir) / "env.cfg") << kv.to_string();
  for (std::size_t j = 0; j < e.models.size(); ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "member_%03zu.umd", j);
    save_user_model((fs::path(dir) / name).string(), e.models[j]);
  }
}

Ensemble load_ensemble(const std::string& dir, EnvSpec* spec) {
  if (!fs::is_directory(dir)) throw FormatError("not an ensemble directory: " + dir);
  if (spec) *spec = EnvSpec::from_config(KeyValueConfig::load((fs::path(dir) / "env.cfg").string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".umd") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  Ensemble e;
  for (const auto& f : files) {
    e.models.push_back(load_user_model(f.string()));
    e.seeds.push_back(e.models.back().params.seed);
  }
  e.validate();
  return e;
}

void run_experiment(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = IseeConfig::load(config_path);
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "config.snapshot") << cfg.to_config().to_string();
  for (const auto seed : cfg.seeds) {
    const auto dir = fs::path(out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    auto run = run_seed(cfg, seed);
    std::ofstream curve(dir / "curve.csv");
    write_curve_csv(curve, run.log.curve);
    std::ofstream div(dir / "diversity.csv");
    write_diversity_csv(div, run.log.diversity);
    save_learner((dir / "learner.ckpt").string(), run.learner, cfg.env);
    if (!run.ensemble.models.empty()) save_ensemble((dir / "ensemble").string(), run.ensemble, cfg.env);
  }
}

}  // namespace isee
