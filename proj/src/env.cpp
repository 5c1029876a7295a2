#include "vigl/env.hpp"

#include "vigl/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace vigl {

NoiseType parse_noise_type(std::string_view name) {
  if (name == "none" || name == "N") return NoiseType::kNone;
  if (name == "I") return NoiseType::kIndependent;
  if (name == "A") return NoiseType::kAction;
  if (name == "C") return NoiseType::kContext;
  if (name == "CA" || name == "C-A") return NoiseType::kContextAction;
  throw ConfigError("unknown noise type '" + std::string(name) + "' (expected none, I, A, C or CA)");
}

std::string_view to_string(NoiseType type) {
  switch (type) {
    case NoiseType::kNone: return "none";
    case NoiseType::kIndependent: return "I";
    case NoiseType::kAction: return "A";
    case NoiseType::kContext: return "C";
    case NoiseType::kContextAction: return "CA";
  }
  return "none";
}

void FeedbackSpec::validate() const {
  if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("noise level must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(std::istream& in, std::size_t& offset, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("IDX truncated reading ") + what, offset);
  offset += 4;
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Matrix read_idx_images(std::istream& in) {
  std::size_t offset = 0;
  const auto magic = read_be32(in, offset, "magic");
  if (magic != kIdxImages) {
    std::ostringstream msg;
    msg << "bad IDX image magic 0x" << std::hex << magic;
    throw FormatError(msg.str(), 0);
  }
  const auto count = read_be32(in, offset, "image count");
  const auto rows = read_be32(in, offset, "row count");
  const auto cols = read_be32(in, offset, "column count");
  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  Matrix out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim))) {
      throw FormatError("IDX image data truncated in image " + std::to_string(i), offset + static_cast<std::size_t>(in.gcount()));
    }
    offset += dim;
    for (std::size_t j = 0; j < dim; ++j) out(i, static_cast<Eigen::Index>(j)) = buf[j] / 255.0;
  }
  return out;
}

std::vector<int> read_idx_labels(std::istream& in) {
  std::size_t offset = 0;
  const auto magic = read_be32(in, offset, "magic");
  if (magic != kIdxLabels) {
    std::ostringstream msg;
    msg << "bad IDX label magic 0x" << std::hex << magic;
    throw FormatError(msg.str(), 0);
  }
  const auto count = read_be32(in, offset, "label count");
  std::vector<unsigned char> buf(count);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count))) {
    throw FormatError("IDX label data truncated", offset + static_cast<std::size_t>(in.gcount()));
  }
  return {buf.begin(), buf.end()};
}

LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open IDX image file: " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open IDX label file: " + labels.string());
  LabeledImages out{read_idx_images(img), read_idx_labels(lab)};
  if (static_cast<std::size_t>(out.features.rows()) != out.labels.size()) {
    throw FormatError("IDX image and label counts differ (" + std::to_string(out.features.rows()) + " vs " +
                          std::to_string(out.labels.size()) + ")",
                      4);
  }
  return out;
}

// ---------------------------------------------------------------------------

UniformPolicy::UniformPolicy(int num_actions) : num_actions_(num_actions) {
  if (num_actions < 1) throw ConfigError("behavior policy needs at least one action");
}

double UniformPolicy::probability(int action) const {
  return action >= 0 && action < num_actions_ ? 1.0 / num_actions_ : 0.0;
}

int UniformPolicy::sample(std::mt19937_64& rng) const {
  return std::uniform_int_distribution<int>(0, num_actions_ - 1)(rng);
}

// ---------------------------------------------------------------------------

Environment::Environment(LabeledImages train_contexts, LabeledImages test_contexts, int num_actions, int num_digits,
                         Matrix feedback_pool, std::vector<int> feedback_classes, FeedbackSpec noise, double jitter)
    : train_(std::move(train_contexts)),
      test_(std::move(test_contexts)),
      num_actions_(num_actions),
      num_digits_(num_digits),
      feedback_pool_(std::move(feedback_pool)),
      members_(static_cast<std::size_t>(num_digits + 2)),
      noise_(noise),
      jitter_(jitter) {
  noise_.validate();
  if (num_actions_ < 2 || num_digits_ < 2) throw ConfigError("environment needs at least two actions and digits");
  if (train_.features.rows() == 0) throw ConfigError("environment has no training contexts");
  if (static_cast<std::size_t>(feedback_pool_.rows()) != feedback_classes.size()) {
    throw ShapeError("feedback pool and class list differ in length");
  }
  for (std::size_t i = 0; i < feedback_classes.size(); ++i) {
    const int c = feedback_classes[i];
    if (c >= 0 && c < num_feedback_classes()) members_[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < num_feedback_classes(); ++c) {
    if (members_[static_cast<std::size_t>(c)].empty()) {
      throw ConfigError("feedback class " + std::to_string(c) + " has no images");
    }
  }
}

int Environment::noisy_class(int label, int action, int reward) const {
  const auto wrap = [this](int v) { return ((v % num_digits_) + num_digits_) % num_digits_; };
  switch (noise_.type) {
    case NoiseType::kNone: return reward;
    case NoiseType::kIndependent: return reward == 1 ? letter_true_class() : letter_false_class();
    case NoiseType::kAction: return wrap(action + 6 * reward - 3);
    case NoiseType::kContext: return wrap(label + 6 * reward - 3);
    case NoiseType::kContextAction: return wrap(label + action + 6 * reward - 3);
  }
  return reward;
}

StepResult Environment::step(int label, int action, std::mt19937_64& rng) const {
  if (action < 0 || action >= num_actions_) {
    throw ContractError("action " + std::to_string(action) + " outside [0, " + std::to_string(num_actions_) + ")");
  }
  StepResult out;
  out.reward = action == label ? 1 : 0;
  out.feedback_class = out.reward;
  const double p = noise_.effective_level();
  if (p > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p) {
    out.noisy = true;
    out.feedback_class = noisy_class(label, action, out.reward);
  }
  out.feedback = sample_feedback(out.feedback_class, rng);
  return out;
}

RowVector Environment::sample_feedback(int feedback_class, std::mt19937_64& rng) const {
  if (feedback_class < 0 || feedback_class >= num_feedback_classes()) throw ContractError("feedback class out of range");
  const auto& pool = members_[static_cast<std::size_t>(feedback_class)];
  const int pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  RowVector y = feedback_pool_.row(pick);
  if (jitter_ > 0.0) {
    std::normal_distribution<double> noise(0.0, jitter_);
    for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += noise(rng);
  }
  return y;
}

RowVector Environment::prototype(int feedback_class) const {
  if (feedback_class < 0 || feedback_class >= num_feedback_classes()) throw ContractError("feedback class out of range");
  return feedback_pool_.row(members_[static_cast<std::size_t>(feedback_class)].front());
}

oracle::DiscreteJoint Environment::enumerate_joint() const {
  int num_labels = num_digits_;
  for (int l : train_.labels) num_labels = std::max(num_labels, l + 1);
  std::vector<double> label_mass(static_cast<std::size_t>(num_labels), 0.0);
  for (int l : train_.labels) label_mass[static_cast<std::size_t>(l)] += 1.0;
  for (double& m : label_mass) m /= static_cast<double>(train_.labels.size());

  oracle::DiscreteJoint joint(num_labels, num_actions_, num_feedback_classes());
  const double pa = 1.0 / num_actions_;
  const double p = noise_.effective_level();
  for (int x = 0; x < num_labels; ++x) {
    const double px = label_mass[static_cast<std::size_t>(x)];
    if (px == 0.0) continue;
    for (int a = 0; a < num_actions_; ++a) {
      const int r = a == x ? 1 : 0;
      joint.at(x, a, r, r) += px * pa * (1.0 - p);
      if (p > 0.0) joint.at(x, a, r, noisy_class(x, a, r)) += px * pa * p;
    }
  }
  return joint;
}

Environment make_synthetic_env(int num_contexts, int num_actions, int feedback_dim, FeedbackSpec noise,
                               double jitter) {
  if (num_contexts < 2 || num_actions < 2 || feedback_dim < 2) {
    throw ConfigError("synthetic environment counts must all be at least 2");
  }
  const int digits = std::max(num_contexts, num_actions);
  if (feedback_dim < digits + 2) {
    throw ConfigError("synthetic feedback_dim must be at least " + std::to_string(digits + 2) +
                      " (one slot per digit class plus two letters)");
  }
  LabeledImages contexts{Matrix::Identity(num_contexts, num_contexts), {}};
  for (int x = 0; x < num_contexts; ++x) contexts.labels.push_back(x);
  Matrix prototypes = Matrix::Identity(digits + 2, feedback_dim);
  std::vector<int> classes(static_cast<std::size_t>(digits + 2));
  for (int c = 0; c < digits + 2; ++c) classes[static_cast<std::size_t>(c)] = c;
  LabeledImages test = contexts;
  return Environment(std::move(contexts), std::move(test), num_actions, digits, std::move(prototypes),
                     std::move(classes), noise, jitter);
}

namespace {

// 28x28 stand-ins for the EMNIST letters t and f.
Matrix letter_glyphs() {
  Matrix g = Matrix::Zero(2, 28 * 28);
  auto fill = [&](int row, int r0, int r1, int c0, int c1) {
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) g(row, r * 28 + c) = 1.0;
  };
  fill(0, 5, 7, 5, 22);    // t: crossbar
  fill(0, 5, 23, 12, 15);  //    stem
  fill(1, 5, 23, 7, 10);   // f: stem
  fill(1, 5, 7, 7, 21);    //    top bar
  fill(1, 13, 15, 7, 18);  //    middle bar
  return g;
}

}  // namespace

Environment make_mnist_env(const std::filesystem::path& mnist_dir, const std::optional<std::filesystem::path>& emnist_dir,
                           FeedbackSpec noise) {
  LabeledImages train = load_idx(mnist_dir / "train-images-idx3-ubyte", mnist_dir / "train-labels-idx1-ubyte");
  LabeledImages test = load_idx(mnist_dir / "t10k-images-idx3-ubyte", mnist_dir / "t10k-labels-idx1-ubyte");
  constexpr int kDigits = 10;

  Matrix letters;
  std::vector<int> letter_classes;
  if (emnist_dir) {
    LabeledImages em = load_idx(*emnist_dir / "emnist-letters-train-images-idx3-ubyte",
                                *emnist_dir / "emnist-letters-train-labels-idx1-ubyte");
    // EMNIST letters: labels 1..26, images stored transposed.
    constexpr int kLetterT = 20;
    constexpr int kLetterF = 6;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < em.labels.size(); ++i) {
      if (em.labels[i] == kLetterT || em.labels[i] == kLetterF) {
        rows.push_back(static_cast<Eigen::Index>(i));
        letter_classes.push_back(em.labels[i] == kLetterT ? kDigits : kDigits + 1);
      }
    }
    letters.resize(static_cast<Eigen::Index>(rows.size()), em.features.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (int r = 0; r < 28; ++r)
        for (int c = 0; c < 28; ++c) letters(static_cast<Eigen::Index>(k), r * 28 + c) = em.features(rows[k], c * 28 + r);
    }
  } else {
    letters = letter_glyphs();
    letter_classes = {kDigits, kDigits + 1};
  }

  Matrix pool(train.features.rows() + letters.rows(), train.features.cols());
  pool.topRows(train.features.rows()) = train.features;
  pool.bottomRows(letters.rows()) = letters;
  std::vector<int> classes = train.labels;
  classes.insert(classes.end(), letter_classes.begin(), letter_classes.end());
  return Environment(std::move(train), std::move(test), kDigits, kDigits, std::move(pool), std::move(classes), noise,
                     0.0);
}

// ---------------------------------------------------------------------------

Dataset::Dataset(Matrix contexts, std::vector<int> actions, Matrix feedback, std::vector<int> rewards,
                 std::vector<int> labels, std::vector<int> feedback_classes, DatasetInfo info)
    : contexts_(std::move(contexts)),
      actions_(std::move(actions)),
      feedback_(std::move(feedback)),
      rewards_(std::move(rewards)),
      labels_(std::move(labels)),
      feedback_classes_(std::move(feedback_classes)),
      info_(std::move(info)) {
  const auto k = static_cast<Eigen::Index>(actions_.size());
  if (contexts_.rows() != k || feedback_.rows() != k || rewards_.size() != actions_.size() ||
      labels_.size() != actions_.size() || feedback_classes_.size() != actions_.size()) {
    throw ShapeError("dataset columns differ in length");
  }
}

Dataset collect(const Environment& env, const UniformPolicy& behavior, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw ContractError("collect needs K >= 1");
  std::mt19937_64 rng(seed);
  const auto& pool = env.train_contexts();
  std::uniform_int_distribution<Eigen::Index> pick(0, pool.features.rows() - 1);
  Matrix contexts(static_cast<Eigen::Index>(count), pool.features.cols());
  Matrix feedback(static_cast<Eigen::Index>(count), env.feedback_dim());
  std::vector<int> actions(count), rewards(count), labels(count), classes(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Eigen::Index i = pick(rng);
    const int label = pool.labels[static_cast<std::size_t>(i)];
    const int a = behavior.sample(rng);
    StepResult s = env.step(label, a, rng);
    const auto row = static_cast<Eigen::Index>(k);
    contexts.row(row) = pool.features.row(i);
    feedback.row(row) = s.feedback;
    actions[k] = a;
    rewards[k] = s.reward;
    labels[k] = label;
    classes[k] = s.feedback_class;
  }
  DatasetInfo info{"uniform", seed, env.num_actions(), env.noise()};
  return Dataset(std::move(contexts), std::move(actions), std::move(feedback), std::move(rewards), std::move(labels),
                 std::move(classes), std::move(info));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string header_text(const Dataset& d) {
  std::ostringstream h;
  h << "vigl-dataset v1 K=" << d.size() << " x_dim=" << d.context_dim() << " y_dim=" << d.feedback_dim()
    << " num_actions=" << d.info().num_actions << " seed=" << d.info().seed << " noise=" << to_string(d.info().noise.type)
    << " noise_level=" << d.info().noise.level << " behavior=" << d.info().behavior;
  return h.str();
}

struct Header {
  std::size_t k = 0;
  int x_dim = 0;
  int y_dim = 0;
  DatasetInfo info;
};

Header parse_header(const std::string& text) {
  std::istringstream in(text);
  std::string tag, version;
  in >> tag >> version;
  if (tag != "vigl-dataset" || version != "v1") throw FormatError("not a vigl dataset header", 0);
  std::map<std::string, std::string> kv;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("dataset header missing ") + key, 0);
    return it->second;
  };
  Header h;
  h.k = std::stoull(need("K"));
  h.x_dim = std::stoi(need("x_dim"));
  h.y_dim = std::stoi(need("y_dim"));
  h.info.num_actions = std::stoi(need("num_actions"));
  h.info.seed = std::stoull(need("seed"));
  h.info.noise.type = parse_noise_type(need("noise"));
  h.info.noise.level = std::stod(need("noise_level"));
  h.info.behavior = need("behavior");
  return h;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, std::size_t& offset) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("dataset file truncated", offset);
  offset += sizeof(T);
  return v;
}

constexpr char kDatasetMagic[8] = {'V', 'I', 'G', 'L', 'D', 'S', 'E', 'T'};

}  // namespace

void write_dataset_csv(std::ostream& out, const Dataset& d) {
  out << "# " << header_text(d) << '\n';
  const auto eval = d.evaluation();
  out.precision(17);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    for (Eigen::Index j = 0; j < d.contexts().cols(); ++j) out << d.contexts()(row, j) << ',';
    out << d.actions()[k];
    for (Eigen::Index j = 0; j < d.feedback().cols(); ++j) out << ',' << d.feedback()(row, j);
    out << ',' << eval.rewards[k] << ',' << eval.labels[k] << ',' << eval.feedback_classes[k] << '\n';
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError("dataset CSV missing header line", 0);
  const Header h = parse_header(line.substr(2));
  offset += line.size() + 1;
  Matrix x(static_cast<Eigen::Index>(h.k), h.x_dim), y(static_cast<Eigen::Index>(h.k), h.y_dim);
  std::vector<int> a(h.k), r(h.k), l(h.k), c(h.k);
  const std::size_t fields = static_cast<std::size_t>(h.x_dim + h.y_dim) + 4;
  std::vector<double> values;
  for (std::size_t k = 0; k < h.k; ++k) {
    if (!std::getline(in, line)) throw FormatError("dataset CSV has fewer rows than K", offset);
    values.clear();
    std::size_t start = 0;
    while (start <= line.size()) {
      const auto comma = std::min(line.find(',', start), line.size());
      double v = 0.0;
      const auto res = std::from_chars(line.data() + start, line.data() + comma, v);
      if (res.ec != std::errc()) throw FormatError("bad number in dataset CSV", offset + start);
      values.push_back(v);
      start = comma + 1;
    }
    if (values.size() != fields) throw FormatError("dataset CSV row has wrong field count", offset);
    const auto row = static_cast<Eigen::Index>(k);
    std::size_t at = 0;
    for (int j = 0; j < h.x_dim; ++j) x(row, j) = values[at++];
    a[k] = static_cast<int>(values[at++]);
    for (int j = 0; j < h.y_dim; ++j) y(row, j) = values[at++];
    r[k] = static_cast<int>(values[at++]);
    l[k] = static_cast<int>(values[at++]);
    c[k] = static_cast<int>(values[at++]);
    offset += line.size() + 1;
  }
  return Dataset(std::move(x), std::move(a), std::move(y), std::move(r), std::move(l), std::move(c), h.info);
}

void write_dataset_binary(std::ostream& out, const Dataset& d) {
  const std::string header = header_text(d);
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (Eigen::Index i = 0; i < d.contexts().size(); ++i) put<float>(out, static_cast<float>(d.contexts().data()[i]));
  for (int v : d.actions()) put<std::int32_t>(out, v);
  for (Eigen::Index i = 0; i < d.feedback().size(); ++i) put<float>(out, static_cast<float>(d.feedback().data()[i]));
  const auto eval = d.evaluation();
  for (int v : eval.rewards) put<std::int32_t>(out, v);
  for (int v : eval.labels) put<std::int32_t>(out, v);
  for (int v : eval.feedback_classes) put<std::int32_t>(out, v);
  if (!out) throw std::runtime_error("dataset write failed");
}

Dataset read_dataset_binary(std::istream& in) {
  std::size_t offset = 0;
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw FormatError("bad dataset magic", 0);
  }
  offset += sizeof(magic);
  const auto len = get<std::uint32_t>(in, offset);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("dataset header truncated", offset);
  offset += len;
  const Header h = parse_header(text);
  Matrix x(static_cast<Eigen::Index>(h.k), h.x_dim), y(static_cast<Eigen::Index>(h.k), h.y_dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = get<float>(in, offset);
  std::vector<int> a(h.k), r(h.k), l(h.k), c(h.k);
  for (auto& v : a) v = get<std::int32_t>(in, offset);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = get<float>(in, offset);
  for (auto& v : r) v = get<std::int32_t>(in, offset);
  for (auto& v : l) v = get<std::int32_t>(in, offset);
  for (auto& v : c) v = get<std::int32_t>(in, offset);
  return Dataset(std::move(x), std::move(a), std::move(y), std::move(r), std::move(l), std::move(c), h.info);
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path.string());
  if (path.extension() == ".csv") {
    write_dataset_csv(out, data);
  } else {
    write_dataset_binary(out, data);
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  return path.extension() == ".csv" ? read_dataset_csv(in) : read_dataset_binary(in);
}

}  // namespace vigl
