#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isee/core_types.hpp"
#include "isee/neural.hpp"
#include "isee/rng.hpp"

namespace isee {

// Lower clamp for predicted act probabilities before any logarithm.
inline constexpr double kProbClip = 1e-7;

// Featurizes s^u_t = (G, union of past agent acts): goal block followed by
// an OR-pooled block of width |A^s|.
class UserStateEncoder {
 public:
  UserStateEncoder(const EnvSpec& spec, int agent_vocab_size);

  std::size_t goal_size() const { return goal_size_; }
  std::size_t size() const { return goal_size_ + history_size_; }
  std::vector<double> encode(const UserState& s) const;
  std::string describe() const;

 private:
  EnvSpec spec_;
  std::size_t goal_size_;
  std::size_t history_size_;
};

// One (s^u, a^u) example as feature and 0/1 target vectors.
struct BcExample {
  std::vector<double> x;
  std::vector<double> y;
};

// Flattens every tuple of every trajectory into state-action pairs.
std::vector<BcExample> make_bc_examples(std::span<const Trajectory> trajs, const UserStateEncoder& enc,
                                        const ActVocabulary& user_vocab);

// Mean binary cross-entropy over acts and examples of clipped sigmoid
// outputs, and its exact gradient. Throws ContractError on an empty batch.
std::pair<double, Gradients> bc_loss_and_grad(const MlpParams& p, std::span<const BcExample* const> batch);
std::pair<double, Gradients> bc_loss_and_grad(const MlpParams& p, std::span<const BcExample> batch);

struct BcHyper {
  std::size_t hidden = 64;
  int epochs = 40;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  int refresh_epochs = 2;
};

struct UserModel {
  MlpParams params;
  std::string encoder;
  std::vector<double> training_log;  // mean loss per epoch
  std::uint64_t refreshes = 0;

  bool operator==(const UserModel&) const = default;
};

// Mini-batch Adam on bc_loss; the seed drives both initialization and the
// per-epoch shuffles.
UserModel train_user_model(std::span<const BcExample> data, const RngStream& seed, const BcHyper& hyper,
                           const std::string& encoder_desc);

// Continues training for `epochs` more passes (fresh optimizer state).
void fine_tune(UserModel& m, std::span<const BcExample> data, int epochs, const BcHyper& hyper);

// Act i is chosen iff p_i > 0.5; with none above, the lowest-index argmax.
ActSet decode_probabilities(std::span<const double> probs);
ActSet decode_user_action(const UserModel& m, const UserStateEncoder& enc, const UserState& s);

struct Ensemble {
  std::vector<UserModel> models;
  std::vector<RngStream> seeds;

  std::size_t size() const { return models.size(); }
  // Throws ContractError on an empty ensemble or repeated seeds.
  void validate() const;
};

// Member j uses stream j+1 of base_seed.
Ensemble build_ensemble(std::span<const BcExample> data, int members, std::uint64_t base_seed, const BcHyper& hyper,
                        const std::string& encoder_desc);

// Pools the acts a model decodes along the states into a distribution over
// A^u, with additive smoothing `alpha` and renormalization.
std::vector<double> act_distribution(const UserModel& m, const UserStateEncoder& enc,
                                     std::span<const UserState> states, int vocab_size, double alpha);

double kl_divergence(std::span<const double> p, std::span<const double> q);

struct DiversityStats {
  double mean_kl = 0.0;
  double std_kl = 0.0;
};

// Mean and population std of KL over all ordered pairs i != j (or of the
// symmetrized KL over unordered pairs). Needs >= 2 models and >= 1 state.
DiversityStats ensemble_diversity(std::span<const UserModel> models, const UserStateEncoder& enc,
                                  std::span<const UserState> states, int vocab_size, double alpha = 1e-6,
                                  bool symmetric = false);

void save_user_model(const std::string& path, const UserModel& m);
UserModel load_user_model(const std::string& path);

}  // namespace isee
