#include "isee/dume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "isee/errors.hpp"

namespace isee {

UserStateEncoder::UserStateEncoder(const EnvSpec& spec, int agent_vocab_size)
    : spec_(spec), goal_size_(goal_block_size(spec)), history_size_(static_cast<std::size_t>(agent_vocab_size)) {}

std::vector<double> UserStateEncoder::encode(const UserState& s) const {
  std::vector<double> x(size(), 0.0);
  encode_goal(spec_, s.goal, std::span(x).first(goal_size_));
  const auto hist = std::span(x).subspan(goal_size_);
  for (const auto& a : s.agent_acts) or_pool(a, hist);
  return x;
}

std::string UserStateEncoder::describe() const {
  return "user-state:goal=" + std::to_string(goal_size_) + ",agent-history-or=" + std::to_string(history_size_);
}

std::vector<BcExample> make_bc_examples(std::span<const Trajectory> trajs, const UserStateEncoder& enc,
                                        const ActVocabulary& user_vocab) {
  std::vector<BcExample> out;
  for (const auto& traj : trajs)
    for (const auto& t : traj.tuples) out.push_back({enc.encode(t.s_user), vectorize_actset(t.a_user, user_vocab)});
  return out;
}

std::pair<double, Gradients> bc_loss_and_grad(const MlpParams& p, std::span<const BcExample* const> batch) {
  if (batch.empty()) throw ContractError("bc_loss_and_grad: empty batch");
  if (p.head != Head::sigmoid) throw ContractError("bc_loss_and_grad: user model needs a sigmoid head");
  const auto acts = p.dims.out;
  const double scale = 1.0 / (static_cast<double>(acts) * static_cast<double>(batch.size()));
  double loss = 0.0;
  auto grads = Gradients::zeros_like(p);
  ForwardCache cache;
  std::vector<double> d_out(acts);
  for (const BcExample* ex : batch) {
    if (ex->y.size() != acts) throw ContractError("bc_loss_and_grad: target width mismatch");
    forward(p, ex->x, cache);
    for (std::size_t i = 0; i < acts; ++i) {
      const double y = cache.output[i];
      const double c = std::clamp(y, kProbClip, 1.0 - kProbClip);
      const double a = ex->y[i];
      loss -= a * std::log(c) + (1.0 - a) * std::log(1.0 - c);
      // The clamp is flat outside its range.
      d_out[i] = (y == c) ? scale * (-a / c + (1.0 - a) / (1.0 - c)) : 0.0;
    }
    const auto dz = head_backward(p.head, cache, d_out);
    backward_logits(p, ex->x, cache, dz, grads);
  }
  return {loss * scale, std::move(grads)};
}

std::pair<double, Gradients> bc_loss_and_grad(const MlpParams& p, std::span<const BcExample> batch) {
  std::vector<const BcExample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return bc_loss_and_grad(p, ptrs);
}

namespace {

void run_epochs(UserModel& m, std::span<const BcExample> data, int epochs, const BcHyper& hyper, RngStream& rng) {
  if (data.empty()) throw ContractError("behavior cloning needs at least one example");
  AdamConfig adam;
  adam.lr = hyper.lr;
  auto state = AdamState::for_params(m.params);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const BcExample*> batch;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const auto stop = std::min(order.size(), start + hyper.batch_size);
      batch.clear();
      for (auto i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      auto [loss, grads] = bc_loss_and_grad(m.params, batch);
      total += loss * static_cast<double>(batch.size());
      adam_step(m.params, grads, state, adam);
    }
    m.training_log.push_back(total / static_cast<double>(data.size()));
  }
  if (!m.params.all_finite()) throw NumericError("user model parameters became non-finite");
}

}  // namespace

UserModel train_user_model(std::span<const BcExample> data, const RngStream& seed, const BcHyper& hyper,
                           const std::string& encoder_desc) {
  if (data.empty()) throw ContractError("train_user_model: empty dataset");
  UserModel m;
  m.params = mlp_init({data[0].x.size(), hyper.hidden, data[0].y.size()}, Head::sigmoid, seed);
  m.encoder = encoder_desc;
  auto rng = m.params.seed.derive(0);
  run_epochs(m, data, hyper.epochs, hyper, rng);
  return m;
}

void fine_tune(UserModel& m, std::span<const BcExample> data, int epochs, const BcHyper& hyper) {
  ++m.refreshes;
  auto rng = m.params.seed.derive(m.refreshes);
  run_epochs(m, data, epochs, hyper, rng);
}

ActSet decode_probabilities(std::span<const double> probs) {
  if (probs.empty()) throw ContractError("decode: empty probability vector");
  std::vector<int> acts;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.5) acts.push_back(static_cast<int>(i));
  if (acts.empty())
    acts.push_back(static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
  return ActSet(std::move(acts));
}

ActSet decode_user_action(const UserModel& m, const UserStateEncoder& enc, const UserState& s) {
  return decode_probabilities(forward(m.params, enc.encode(s)));
}

void Ensemble::validate() const {
  if (models.empty()) throw ContractError("ensemble needs at least one model");
  if (seeds.size() != models.size()) throw ContractError("ensemble seed list does not match its models");
  std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
  for (const auto& s : seeds)
    if (!seen.insert({s.seed(), s.stream()}).second) throw ContractError("ensemble seeds must be distinct");
  for (const auto& m : models)
    if (!(m.params.dims == models[0].params.dims) || m.encoder != models[0].encoder)
      throw ContractError("ensemble members must share architecture and encoder");
}

Ensemble build_ensemble(std::span<const BcExample> data, int members, std::uint64_t base_seed, const BcHyper& hyper,
                        const std::string& encoder_desc) {
  if (members < 1) throw ContractError("build_ensemble: need at least one member");
  Ensemble e;
  for (int j = 0; j < members; ++j) {
    e.seeds.emplace_back(base_seed, static_cast<std::uint64_t>(j + 1));
    e.models.push_back(train_user_model(data, e.seeds.back(), hyper, encoder_desc));
  }
  e.validate();
  return e;
}

std::vector<double> act_distribution(const UserModel& m, const UserStateEncoder& enc,
                                     std::span<const UserState> states, int vocab_size, double alpha) {
  std::vector<double> counts(static_cast<std::size_t>(vocab_size), 0.0);
  double total = 0.0;
  for (const auto& s : states) {
    for (const int a : decode_user_action(m, enc, s)) {
      counts.at(static_cast<std::size_t>(a)) += 1.0;
      total += 1.0;
    }
  }
  double norm = 0.0;
  for (auto& c : counts) norm += (c = c / total + alpha);
  for (auto& c : counts) c /= norm;
  return counts;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ContractError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

DiversityStats ensemble_diversity(std::span<const UserModel> models, const UserStateEncoder& enc,
                                  std::span<const UserState> states, int vocab_size, double alpha, bool symmetric) {
  if (models.size() < 2) throw ContractError("ensemble_diversity needs at least two models");
  if (states.empty()) throw ContractError("ensemble_diversity needs at least one state");
  std::vector<std::vector<double>> dists;
  for (const auto& m : models) dists.push_back(act_distribution(m, enc, states, vocab_size, alpha));
  std::vector<double> kls;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    for (std::size_t j = 0; j < dists.size(); ++j) {
      if (i == j) continue;
      if (symmetric) {
        if (j < i) continue;
        kls.push_back(0.5 * (kl_divergence(dists[i], dists[j]) + kl_divergence(dists[j], dists[i])));
      } else {
        kls.push_back(kl_divergence(dists[i], dists[j]));
      }
    }
  }
  // Sorted before summing so the result does not depend on member order.
  std::sort(kls.begin(), kls.end());
  DiversityStats out;
  for (const double k : kls) out.mean_kl += k;
  out.mean_kl /= static_cast<double>(kls.size());
  double var = 0.0;
  for (const double k : kls) var += (k - out.mean_kl) * (k - out.mean_kl);
  out.std_kl = std::sqrt(var / static_cast<double>(kls.size()));
  return out;
}

namespace {
constexpr char kUserModelMagic[8] = {'I', 'S', 'E', 'E', 'U', 'M', 'D', '\0'};
}

void save_user_model(const std::string& path, const UserModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(kUserModelMagic, sizeof kUserModelMagic);
  binio::put_u64(out, m.refreshes);
  binio::put_u64(out, m.encoder.size());
  out.write(m.encoder.data(), static_cast<std::streamsize>(m.encoder.size()));
  binio::put_u64(out, m.training_log.size());
  for (const double l : m.training_log) binio::put_f64(out, l);
  save_mlp(out, m.params);
}

UserModel load_user_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kUserModelMagic))
    throw FormatError(path + ": not a user model checkpoint");
  UserModel m;
  m.refreshes = binio::get_u64(in);
  const auto n = binio::get_u64(in);
  if (n > 4096) throw FormatError(path + ": bad encoder description");
  m.encoder.resize(n);
  in.read(m.encoder.data(), static_cast<std::streamsize>(n));
  const auto epochs = binio::get_u64(in);
  if (epochs > (1u << 24)) throw FormatError(path + ": bad training log");
  for (std::uint64_t i = 0; i < epochs; ++i) m.training_log.push_back(binio::get_f64(in));
  m.params = load_mlp(in);
  if (m.params.head != Head::sigmoid) throw FormatError(path + ": user model must use a sigmoid head");
  return m;
}

}  // namespace isee
