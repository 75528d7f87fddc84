#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "isee/errors.hpp"

using namespace isee;
using testing_util::random_vector;

namespace {

// The loss written as a plain double loop.
double scalar_bc_loss(const MlpParams& p, const std::vector<BcExample>& batch) {
  double total = 0;
  for (const auto& ex : batch) {
    const auto y = testing_util::straight_line_forward(p, ex.x);
    for (std::size_t i = 0; i < y.size(); ++i) {
      double c = y[i];
      if (c < 1e-7) c = 1e-7;
      if (c > 1 - 1e-7) c = 1 - 1e-7;
      total += -(ex.y[i] * std::log(c) + (1 - ex.y[i]) * std::log(1 - c));
    }
  }
  return total / (static_cast<double>(p.dims.out) * static_cast<double>(batch.size()));
}

std::vector<BcExample> random_batch(RngStream& r, std::size_t n, std::size_t in, std::size_t out) {
  std::vector<BcExample> b;
  for (std::size_t i = 0; i < n; ++i) {
    BcExample ex{random_vector(r, in), std::vector<double>(out)};
    for (auto& v : ex.y) v = r.bernoulli(0.3) ? 1.0 : 0.0;
    b.push_back(ex);
  }
  return b;
}

}  // namespace

TEST_CASE("user state encoding") {
  const ToyEnv env(EnvSpec::default_spec());
  const UserStateEncoder enc(env.spec(), env.agent_vocab().size());
  CHECK(enc.goal_size() == 56);
  CHECK(enc.size() == 56 + 23);
  RngStream rng(1, 1);
  UserState s;
  s.goal = env.sample_goal(rng);
  const auto x0 = enc.encode(s);
  for (std::size_t i = 56; i < x0.size(); ++i) CHECK(x0[i] == 0.0);
  s.agent_acts = {ActSet{3, 5}, ActSet{7}};
  const auto x1 = enc.encode(s);
  s.agent_acts.push_back(ActSet{3});
  s.agent_acts.push_back(ActSet{7, 5});
  CHECK(enc.encode(s) == x1);
  CHECK(x1[56 + 3] == 1.0);
  CHECK(x1[56 + 4] == 0.0);
}

TEST_CASE("behavior cloning loss closed forms") {
  SUBCASE("one pair, two acts, outputs one half") {
    auto p = mlp_init({3, 2, 2}, Head::sigmoid, RngStream(1, 1));
    for (auto* v : testing_util::param_slots(p)) *v = 0.0;
    const std::vector<BcExample> batch{{{0.2, 0.1, -0.3}, {1.0, 0.0}}};
    CHECK(std::abs(bc_loss_and_grad(p, batch).first - std::log(2.0)) < 1e-12);
  }
  SUBCASE("saturated outputs equal to the targets") {
    auto p = mlp_init({3, 2, 2}, Head::sigmoid, RngStream(1, 1));
    for (auto* v : testing_util::param_slots(p)) *v = 0.0;
    p.b2 = {60.0, -60.0};
    const std::vector<BcExample> batch{{{0.2, 0.1, -0.3}, {1.0, 0.0}}};
    const double loss = bc_loss_and_grad(p, batch).first;
    CHECK(loss >= 0.0);
    CHECK(loss <= 1.01e-7);
  }
  SUBCASE("empty batch") {
    const auto p = mlp_init({3, 2, 2}, Head::sigmoid, RngStream(1, 1));
    CHECK_THROWS_AS(bc_loss_and_grad(p, std::span<const BcExample>{}), ContractError);
  }
}

TEST_CASE("behavior cloning loss against the scalar loop and finite differences") {
  RngStream r(31, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = mlp_init({10, 6, 4}, Head::sigmoid, RngStream(trial, 4));
    const auto batch = random_batch(r, 8, 10, 4);
    const auto [loss, grads] = bc_loss_and_grad(p, batch);
    CHECK(std::abs(loss - scalar_bc_loss(p, batch)) < 1e-10);
    CHECK(loss >= 0.0);
    auto f = [&](const MlpParams& q) { return bc_loss_and_grad(q, batch).first; };
    CHECK(testing_util::gradient_error(p, grads, f) < 1e-4);
  }
}

TEST_CASE("memorizes a single repeated pair") {
  const std::vector<BcExample> data(16, BcExample{{0.5, -0.5, 1.0, 0.0}, {1.0, 0.0, 1.0}});
  BcHyper h;
  h.hidden = 8;
  h.epochs = 200;
  h.lr = 1e-2;
  const auto m = train_user_model(data, RngStream(2, 1), h, "test");
  const auto y = forward(m.params, data[0].x);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - data[0].y[i]) < 0.05);
  CHECK(m.training_log.size() == 200);
}

TEST_CASE("training on expert dialogues") {
  const ToyEnv env(EnvSpec::default_spec());
  const UserStateEncoder enc(env.spec(), env.agent_vocab().size());
  const auto data = testing_util::sample_dialogues(env, 150, 41);
  const auto ex = make_bc_examples(data, enc, env.user_vocab());
  std::size_t tuples = 0;
  for (const auto& t : data) tuples += t.size();
  CHECK(ex.size() == tuples);
  BcHyper h;
  h.epochs = 8;
  const auto a = train_user_model(ex, RngStream(5, 1), h, enc.describe());
  const auto b = train_user_model(ex, RngStream(5, 1), h, enc.describe());
  CHECK(a == b);
  CHECK(a.training_log.back() < a.training_log.front());
  CHECK(a.params.all_finite());

  SUBCASE("ensemble members differ and keep distinct seeds") {
    const auto e = build_ensemble(ex, 3, 99, h, enc.describe());
    CHECK(e.size() == 3);
    CHECK_FALSE(e.models[0].params == e.models[1].params);
    CHECK_FALSE(e.models[1].params == e.models[2].params);
    CHECK(e.seeds[0] == RngStream(99, 1));
    auto dup = e;
    dup.seeds[1] = dup.seeds[0];
    CHECK_THROWS_AS(dup.validate(), ContractError);
    CHECK(build_ensemble(ex, 1, 99, h, enc.describe()).size() == 1);
    CHECK_THROWS_AS(build_ensemble(ex, 0, 99, h, enc.describe()), ContractError);
  }
  SUBCASE("fine-tuning continues deterministically") {
    auto c = a, d = a;
    fine_tune(c, ex, 2, h);
    fine_tune(d, ex, 2, h);
    CHECK(c == d);
    CHECK(c.refreshes == 1);
    CHECK(c.training_log.size() == a.training_log.size() + 2);
    CHECK_FALSE(c.params == a.params);
  }
  SUBCASE("user model checkpoints round-trip") {
    const auto path = (std::filesystem::temp_directory_path() / "isee_test_user.umd").string();
    save_user_model(path, a);
    CHECK(load_user_model(path) == a);
    std::filesystem::remove(path);
  }
}

TEST_CASE("decoding") {
  CHECK(decode_probabilities(std::vector<double>{0.9, 0.1, 0.8, 0.3}) == ActSet{0, 2});
  CHECK(decode_probabilities(std::vector<double>{0.1, 0.2, 0.3, 0.45, 0.2}) == ActSet{3});
  CHECK(decode_probabilities(std::vector<double>{0.2, 0.4, 0.4}) == ActSet{1});
  CHECK(decode_probabilities(std::vector<double>{0.5, 0.5}) == ActSet{0});
  RngStream r(4, 4);
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(decode_probabilities(random_vector(r, 7, 0, 0.6)).empty());
}

TEST_CASE("KL divergence") {
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  CHECK(kl_divergence(p, q) == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)).epsilon(1e-14));
  CHECK(kl_divergence(p, q) == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(kl_divergence(q, q) == 0.0);
}

TEST_CASE("ensemble diversity") {
  const ToyEnv env(EnvSpec::default_spec());
  const UserStateEncoder enc(env.spec(), env.agent_vocab().size());
  const auto data = testing_util::sample_dialogues(env, 150, 43);
  const auto ex = make_bc_examples(data, enc, env.user_vocab());
  std::vector<UserState> states;
  for (const auto& t : data)
    for (const auto& tuple : t.tuples) states.push_back(tuple.s_user);
  BcHyper h;
  h.epochs = 3;
  const auto e = build_ensemble(ex, 4, 7, h, enc.describe());
  const int vocab = env.user_vocab().size();

  SUBCASE("duplicated models have zero divergence") {
    const std::vector<UserModel> same{e.models[0], e.models[0], e.models[0]};
    const auto d = ensemble_diversity(same, enc, states, vocab);
    CHECK(d.mean_kl == 0.0);
    CHECK(d.std_kl == 0.0);
  }
  SUBCASE("distinct seeds diverge and member order does not matter") {
    const auto d = ensemble_diversity(e.models, enc, states, vocab);
    CHECK(d.mean_kl > 0.0);
    const std::vector<UserModel> perm{e.models[2], e.models[0], e.models[3], e.models[1]};
    const auto dp = ensemble_diversity(perm, enc, states, vocab);
    CHECK(dp.mean_kl == d.mean_kl);
    CHECK(dp.std_kl == d.std_kl);
    const auto sym = ensemble_diversity(e.models, enc, states, vocab, 1e-6, true);
    CHECK(sym.mean_kl > 0.0);
  }
  SUBCASE("smoothed distributions") {
    const auto p = act_distribution(e.models[0], enc, states, vocab, 1e-6);
    double s = 0;
    for (const double v : p) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(kl_divergence(p, p) == 0.0);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(ensemble_diversity(std::span(e.models).first(1), enc, states, vocab), ContractError);
    CHECK_THROWS_AS(ensemble_diversity(e.models, enc, {}, vocab), ContractError);
  }
}
