#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "isee/errors.hpp"

using namespace isee;
namespace fs = std::filesystem;

namespace {

IseeConfig small_config(DivMode mode) {
  IseeConfig c;
  c.mode = mode;
  c.E = 3;
  c.episodes_per_iteration = 10;
  c.iterations = 4;
  c.eval_episodes = 30;
  c.eval_every = 2;
  c.pretrain_dialogues = 80;
  c.bc.epochs = 5;
  c.diversity_states = 60;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  ToyEnv env{EnvSpec::default_spec()};
  AgentActionSpace space{env};
  UserStateEncoder user_enc{env.spec(), env.agent_vocab().size()};
  std::vector<Trajectory> base = testing_util::sample_dialogues(env, 60, 77, 0.3);
  UserModel model = [&] {
    BcHyper h;
    h.epochs = 10;
    return train_user_model(make_bc_examples(base, user_enc, env.user_vocab()), RngStream(1, 1), h,
                            user_enc.describe());
  }();
};

}  // namespace

TEST_CASE("trajectory generation") {
  Fixture f;
  const int end = f.env.user_vocab().end_index();
  RngStream rng(5, 0);
  for (int i = 0; i < 50; ++i) {
    const auto goal = f.env.sample_goal(rng);
    DialogueSession session(f.env, goal);
    ExpertUser user(f.env, goal);
    const auto traj = generate_trajectory(user, oracle_policy(f.env, goal), session, f.env.max_turns());
    // The user ended before the cap: length is the ending turn.
    const auto k = traj.size();
    CHECK(k < static_cast<std::size_t>(f.env.max_turns()));
    CHECK(traj.tuples[k - 1].a_user.contains(end));
    for (std::size_t t = 0; t + 1 < k; ++t) {
      CHECK_FALSE(traj.tuples[t].terminal);
      CHECK_FALSE(traj.tuples[t].a_user.contains(end));
      CHECK(traj.tuples[t].s_user.agent_acts.size() == t);
      CHECK_FALSE(traj.tuples[t].a_agent.empty());
      CHECK(traj.tuples[t].reward == -1.0);
    }
    for (const auto& p : traj.provenance) CHECK(p == Provenance::expert());

    DialogueSession short_session(f.env, goal);
    ModelUser mu(f.model, f.user_enc, 0);
    CHECK(generate_trajectory(mu, oracle_policy(f.env, goal), short_session, 5).size() <= 5);
  }
  const auto goal = f.env.sample_goal(rng);
  DialogueSession session(f.env, goal);
  ExpertUser user(f.env, goal);
  CHECK_THROWS_AS(generate_trajectory(user, oracle_policy(f.env, goal), session, 0), ContractError);
}

TEST_CASE("branching") {
  Fixture f;
  RngStream acts(3, 3);
  std::size_t checked = 0;
  for (const auto& b : f.base) {
    const auto& goal = b.tuples[0].s_user.goal;
    CHECK_THROWS_AS(branch_trajectory(f.env, b, 0, *std::make_unique<ModelUser>(f.model, f.user_enc, 0),
                                      oracle_policy(f.env, goal), 5),
                    ContractError);
    CHECK_THROWS_AS(branch_trajectory(f.env, b, b.size() - 1,
                                      *std::make_unique<ModelUser>(f.model, f.user_enc, 0),
                                      oracle_policy(f.env, goal), 5),
                    ContractError);
    for (std::size_t p = 1; p + 1 < b.size(); ++p) {
      for (const int h : {1, 3, 5}) {
        ModelUser mu(f.model, f.user_enc, 2);
        const auto seg = branch_trajectory(f.env, b, p, mu, oracle_policy(f.env, goal), h);
        CHECK(seg.branch_point == p);
        CHECK(seg.tuples[0] == b.tuples[p]);
        CHECK(tuple_to_line(seg.tuples[0]) == tuple_to_line(b.tuples[p]));
        CHECK(seg.provenance[0] == b.provenance[p]);
        CHECK(seg.size() >= 2);
        CHECK(seg.size() - 1 <= static_cast<std::size_t>(h));
        for (std::size_t i = 1; i < seg.size(); ++i) CHECK(seg.provenance[i] == Provenance::diversified(2));
        // The continuation sees the same history as the base dialogue did.
        CHECK(seg.tuples[1].s_user == b.tuples[p + 1].s_user);
        ++checked;
      }
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("a model trained against the expert changes the first diversified act") {
  Fixture f;
  const int end = f.env.user_vocab().end_index();
  // First base tuple whose next expert act is not the end act.
  const Trajectory* found = nullptr;
  for (const auto& t : f.base)
    if (t.size() >= 4 && !t.tuples[2].a_user.contains(end)) {
      found = &t;
      break;
    }
  REQUIRE(found != nullptr);
  const auto& b = *found;
  const std::size_t p = 1;
  const auto& expert_next = b.tuples[p + 1].a_user;
  BcExample crafted{f.user_enc.encode(b.tuples[p + 1].s_user),
                    vectorize_actset(ActSet{end}, f.env.user_vocab())};
  BcHyper h;
  h.hidden = 16;
  h.epochs = 300;
  h.lr = 1e-2;
  const auto inverse = train_user_model(std::vector<BcExample>(8, crafted), RngStream(2, 2), h, f.user_enc.describe());
  ModelUser mu(inverse, f.user_enc, 0);
  const auto seg = branch_trajectory(f.env, b, p, mu, oracle_policy(f.env, b.tuples[0].s_user.goal), 5);
  CHECK(seg.tuples[0] == b.tuples[p]);
  CHECK(seg.tuples[1].a_user != expert_next);
  CHECK(seg.tuples[1].a_user == ActSet{end});
}

TEST_CASE("evaluation baselines") {
  const ToyEnv env(EnvSpec::default_spec());
  const AgentActionSpace space(env);
  const auto oracle = evaluate_policy(env, [&](const UserGoal& g) { return oracle_policy(env, g); }, 300, 1);
  CHECK(oracle.success == 1.0);
  CHECK(oracle.match == 1.0);
  CHECK(oracle.turns <= env.max_turns());
  RngStream r(4, 4);
  const auto random = evaluate_policy(env, [&](const UserGoal&) { return random_policy(space, r); }, 500, 2);
  CHECK(random.success <= 0.05);

  auto l = make_learner(LearnerKind::dqn, AgentStateEncoder(env.spec(), 19, 23).size(), space.size(), {},
                        RngStream(1, 1));
  std::stringstream a, b;
  const std::vector<CurveRow> ra{{0, 0, evaluate_policy(l, env, 100, 9), 0.0}};
  const std::vector<CurveRow> rb{{0, 0, evaluate_policy(l, env, 100, 9), 0.0}};
  write_curve_csv(a, ra);
  write_curve_csv(b, rb);
  CHECK(a.str() == b.str());
}

TEST_CASE("config loading") {
  SUBCASE("round trip") {
    auto c = small_config(DivMode::full);
    c.seeds = {3, 9};
    c.learner = LearnerKind::ppo;
    c.eta = 0.35;
    const auto text = c.to_config().to_string();
    const auto back = IseeConfig::from_config(KeyValueConfig::parse(text));
    CHECK(back.to_config().to_string() == text);
    CHECK(back.seeds == std::vector<std::uint64_t>{3, 9});
    CHECK(back.mode == DivMode::full);
  }
  SUBCASE("unknown key names the key") {
    CHECK_THROWS_WITH_AS(IseeConfig::from_config(KeyValueConfig::parse("isee.mode = isee\nisee.horizon = 5\n")),
                         "unknown config key: isee.horizon", ConfigError);
  }
  SUBCASE("invalid values") {
    CHECK_THROWS_AS(IseeConfig::from_config(KeyValueConfig::parse("isee.E = 0\n")), ConfigError);
    CHECK_THROWS_AS(IseeConfig::from_config(KeyValueConfig::parse("isee.H = 0\n")), ConfigError);
    CHECK_THROWS_AS(IseeConfig::from_config(KeyValueConfig::parse("isee.eta = -0.1\n")), ConfigError);
    CHECK_THROWS_AS(IseeConfig::from_config(KeyValueConfig::parse("isee.mode = half\n")), ConfigError);
    CHECK_THROWS_AS(IseeConfig::from_config(KeyValueConfig::parse("agent.kind = a2c\n")), ConfigError);
    CHECK_THROWS_AS(IseeConfig::from_config(KeyValueConfig::parse("run.seeds = 1,x\n")), ConfigError);
  }
}

TEST_CASE("outer loop accounting") {
  SUBCASE("eta zero under isee reproduces mode none") {
    auto iso = small_config(DivMode::isee);
    iso.eta = 0.0;
    auto none = small_config(DivMode::none);
    const auto a = run_seed(iso, 4);
    const auto b = run_seed(none, 4);
    for (const auto& u : a.log.updates) CHECK(u.dvs_tuples == 0);
    CHECK(a.log.model_turns == 0);
    CHECK(a.log.episode_returns == b.log.episode_returns);
    CHECK(a.learner.net == b.learner.net);
    std::stringstream ca, cb;
    write_curve_csv(ca, a.log.curve);
    write_curve_csv(cb, b.log.curve);
    CHECK(ca.str() == cb.str());
  }
  SUBCASE("realized ratio stays within one segment of the target") {
    for (const double eta : {0.1, 0.2, 0.5}) {
      auto c = small_config(DivMode::isee);
      c.eta = eta;
      const auto run = run_seed(c, 2);
      REQUIRE(run.log.updates.size() == 4);
      for (const auto& u : run.log.updates) {
        const double base = static_cast<double>(u.base_tuples);
        CHECK(u.dvs_tuples >= eta * base);
        CHECK(static_cast<double>(u.dvs_tuples) < eta * base + c.H);
        CHECK(u.max_segment <= static_cast<std::size_t>(c.H));
      }
      CHECK(run.log.model_turns > 0);
      CHECK(run.log.expert_training_turns > 0);
    }
  }
  SUBCASE("mode none never asks a user model, full never asks the expert") {
    const auto none = run_seed(small_config(DivMode::none), 1);
    CHECK(none.log.model_turns == 0);
    CHECK(none.ensemble.models.empty());
    const auto full = run_seed(small_config(DivMode::full), 1);
    CHECK(full.log.expert_training_turns == 0);
    CHECK(full.log.model_turns > 0);
    for (const auto& u : full.log.updates) CHECK(u.base_tuples == 0);
  }
  SUBCASE("curve rows and diversity rows") {
    const auto run = run_seed(small_config(DivMode::isee), 3);
    REQUIRE(run.log.curve.size() == 3);  // iterations 0, 2, 4
    CHECK(run.log.curve[0].iteration == 0);
    CHECK(run.log.curve[2].iteration == 4);
    CHECK(run.log.curve[2].episodes == 40);
    CHECK(run.log.episode_returns.size() == 40);
    REQUIRE(run.log.diversity.size() == 3);
    for (const auto& d : run.log.diversity) {
      CHECK(d.members == 3);
      CHECK(d.stats.mean_kl > 0.0);
    }
  }
  SUBCASE("isee needs an ensemble") {
    const ToyEnv env(EnvSpec::default_spec());
    Ensemble empty;
    auto l = make_learner(LearnerKind::dqn, 106, 17, {}, RngStream(1, 1));
    CHECK_THROWS_AS(isee_train(small_config(DivMode::isee), env, empty, l, 1), ContractError);
  }
}

TEST_CASE("experiment artifacts") {
  const auto root = fs::temp_directory_path() / "isee_test_experiment";
  fs::remove_all(root);
  fs::create_directories(root);
  std::string header;
  for (const auto mode : {DivMode::none, DivMode::full, DivMode::isee}) {
    auto c = small_config(mode);
    c.iterations = 2;
    const auto cfg_path = root / (to_string(mode) + ".cfg");
    std::ofstream(cfg_path) << c.to_config().to_string();
    const auto out = root / to_string(mode);
    run_experiment(cfg_path.string(), out.string());
    const auto curve = read_file(out / "seed_1" / "curve.csv");
    const auto first_line = curve.substr(0, curve.find('\n'));
    if (header.empty()) header = first_line;
    CHECK(first_line == header);
    CHECK(fs::exists(out / "config.snapshot"));
    CHECK(fs::exists(out / "seed_1" / "learner.ckpt"));
    CHECK(fs::exists(out / "seed_1" / "diversity.csv"));
    CHECK(fs::exists(out / "seed_1" / "ensemble") == (mode != DivMode::none));
    if (mode == DivMode::isee) {
      EnvSpec spec;
      const auto e = load_ensemble((out / "seed_1" / "ensemble").string(), &spec);
      CHECK(e.size() == 3);
      auto [learner, lspec] = load_learner((out / "seed_1" / "learner.ckpt").string());
      const ToyEnv env(lspec);
      CHECK_NOTHROW(evaluate_policy(learner, env, 10, 1));
    }
  }
  CHECK(header == "iteration,episodes,success,inform_f1,match,turns,mean_return,eta_realized");
  std::ofstream(root / "bad.cfg") << "isee.mode = isee\nisee.banana = 3\n";
  CHECK_THROWS_WITH_AS(run_experiment((root / "bad.cfg").string(), (root / "bad").string()),
                       "unknown config key: isee.banana", ConfigError);
  fs::remove_all(root);
}

TEST_CASE("number formatting") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0 / 3.0) == "0.333333333");
  CHECK(format_double(-23.04) == "-23.04");
  CHECK(format_double(std::nan("")) == "nan");
}
