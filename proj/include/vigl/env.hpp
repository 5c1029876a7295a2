#pragma once

// Number-guessing IGL environments. A context is an image (or a one-hot code
// in the synthetic variant) with a class label; the learner guesses a label,
// the latent reward is 1 exactly when the guess is right, and the only signal
// it sees is a feedback image of digit r, occasionally replaced by noise.

#include "vigl/oracle.hpp"
#include "vigl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vigl {

enum class NoiseType { kNone, kIndependent, kAction, kContext, kContextAction };

NoiseType parse_noise_type(std::string_view name);  // none | I | A | C | CA
std::string_view to_string(NoiseType type);

struct FeedbackSpec {
  NoiseType type = NoiseType::kNone;
  double level = 0.0;

  /// Throws ConfigError when level is outside [0, 1].
  void validate() const;
  /// Probability that the noisy branch replaces the clean feedback.
  double effective_level() const { return type == NoiseType::kNone ? 0.0 : level; }
};

/// Images (one per row, values in [0, 1]) with their integer labels.
struct LabeledImages {
  Matrix features;
  std::vector<int> labels;
};

/// Reads an IDX image file (magic 0x00000803) and scales bytes to [0, 1].
Matrix read_idx_images(std::istream& in);
/// Reads an IDX label file (magic 0x00000801).
std::vector<int> read_idx_labels(std::istream& in);
/// Loads a matching image/label pair; counts must agree.
LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Uniform logging policy over a finite action set.
class UniformPolicy {
 public:
  explicit UniformPolicy(int num_actions);
  int num_actions() const { return num_actions_; }
  double probability(int action) const;
  int sample(std::mt19937_64& rng) const;

 private:
  int num_actions_;
};

struct StepResult {
  int reward = 0;          // hidden from the learner
  int feedback_class = 0;  // digit 0..P-1, or P / P+1 for the letters t / f
  bool noisy = false;
  RowVector feedback;
};

class Environment {
 public:
  /// `feedback_pool` rows are grouped into classes by `feedback_classes`;
  /// `num_digits` digit classes come first, then the true/false letters.
  Environment(LabeledImages train_contexts, LabeledImages test_contexts, int num_actions, int num_digits,
              Matrix feedback_pool, std::vector<int> feedback_classes, FeedbackSpec noise, double jitter);

  int num_actions() const { return num_actions_; }
  int num_digits() const { return num_digits_; }
  int num_feedback_classes() const { return num_digits_ + 2; }
  int letter_true_class() const { return num_digits_; }
  int letter_false_class() const { return num_digits_ + 1; }
  int context_dim() const { return static_cast<int>(train_.features.cols()); }
  int feedback_dim() const { return static_cast<int>(feedback_pool_.cols()); }
  const FeedbackSpec& noise() const { return noise_; }
  double jitter() const { return jitter_; }
  const LabeledImages& train_contexts() const { return train_; }
  const LabeledImages& test_contexts() const { return test_; }

  /// Feedback class that the noisy branch emits for (label, action, reward).
  int noisy_class(int label, int action, int reward) const;

  /// One interaction: r = 1[action == label], then the feedback.
  StepResult step(int label, int action, std::mt19937_64& rng) const;

  /// Draws one feedback vector of the given class.
  RowVector sample_feedback(int feedback_class, std::mt19937_64& rng) const;
  /// Noise-free representative of a class (its first pool member).
  RowVector prototype(int feedback_class) const;

  /// Exact p(x, a, r, y-class) with x the context label, a uniform, y the
  /// feedback class. Jitter and within-class image variation are ignored.
  oracle::DiscreteJoint enumerate_joint() const;

 private:
  LabeledImages train_;
  LabeledImages test_;
  int num_actions_;
  int num_digits_;
  Matrix feedback_pool_;
  std::vector<std::vector<int>> members_;  // pool rows per feedback class
  FeedbackSpec noise_;
  double jitter_;
};

/// One-hot contexts and one-hot feedback prototypes with Gaussian jitter.
/// Digit classes number max(num_contexts, num_actions); feedback_dim must
/// leave room for them plus the two letter classes.
Environment make_synthetic_env(int num_contexts, int num_actions, int feedback_dim, FeedbackSpec noise,
                               double jitter = 0.05);

/// MNIST number guessing from a directory holding the four standard IDX
/// files. Letter feedback comes from EMNIST-Letters (t/f) when `emnist_dir`
/// is given, otherwise from two drawn 28x28 glyphs.
Environment make_mnist_env(const std::filesystem::path& mnist_dir, const std::optional<std::filesystem::path>& emnist_dir,
                           FeedbackSpec noise);

struct DatasetInfo {
  std::string behavior = "uniform";
  std::uint64_t seed = 0;
  int num_actions = 0;
  FeedbackSpec noise;
};

/// Ground-truth columns, reachable only through Dataset::evaluation().
struct EvaluationView {
  std::span<const int> rewards;
  std::span<const int> labels;
  std::span<const int> feedback_classes;
};

/// Logged interactions (x, a, y). Rewards are kept for evaluation only.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Matrix contexts, std::vector<int> actions, Matrix feedback, std::vector<int> rewards,
          std::vector<int> labels, std::vector<int> feedback_classes, DatasetInfo info);

  std::size_t size() const { return actions_.size(); }
  int context_dim() const { return static_cast<int>(contexts_.cols()); }
  int feedback_dim() const { return static_cast<int>(feedback_.cols()); }
  const DatasetInfo& info() const { return info_; }

  const Matrix& contexts() const { return contexts_; }
  std::span<const int> actions() const { return actions_; }
  const Matrix& feedback() const { return feedback_; }

  EvaluationView evaluation() const { return {rewards_, labels_, feedback_classes_}; }

 private:
  Matrix contexts_;
  std::vector<int> actions_;
  Matrix feedback_;
  std::vector<int> rewards_;
  std::vector<int> labels_;
  std::vector<int> feedback_classes_;
  DatasetInfo info_;
};

/// K i.i.d. interactions: x uniform over the training pool, a from the
/// behavior policy, (r, y) from the environment.
Dataset collect(const Environment& env, const UniformPolicy& behavior, std::size_t count, std::uint64_t seed);

/// CSV: one '#'-prefixed header line with key=value metadata, then one row per
/// sample: x..., a, y..., r_true, label, feedback_class.
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);
/// Binary: "VIGLDSET" magic, uint32 header length, header text (same keys as
/// the CSV header), then float32 contexts, int32 actions, float32 feedback,
/// int32 rewards, labels and feedback classes.
void write_dataset_binary(std::ostream& out, const Dataset& data);
Dataset read_dataset_binary(std::istream& in);
/// Picks the format from the extension (".csv" or anything else = binary).
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace vigl
