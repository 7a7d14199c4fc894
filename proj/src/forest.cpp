#include "hic/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>
#include <tuple>
#include <unordered_map>

#include "binary_io.hpp"
#include "hic/error.hpp"
#include "hic/rng.hpp"

namespace hic {

namespace {

constexpr std::uint32_t kCodebookVersion = 1;

double count_entropy(std::span<const std::size_t> counts, std::size_t total) {
  if (total == 0) throw Error(ErrorCode::EmptyNode, "entropy of an empty node");
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

// Contiguous remap so node statistics fit in flat count arrays.
struct LabelIndex {
  std::unordered_map<std::int32_t, std::size_t> to_index;
  std::size_t size() const { return to_index.size(); }

  void insert(std::int32_t label) { to_index.emplace(label, to_index.size()); }
  std::size_t at(std::int32_t label) const { return to_index.at(label); }
};

struct TrainView {
  std::span<const LabeledDescriptor> data;
  LabelIndex fine;
  LabelIndex coarse;
  int dim = 0;
};

struct SplitChoice {
  bool valid = false;
  std::int32_t feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

double node_objective_entropy(const TrainView& view, TreeObjective objective,
                              std::span<const std::size_t> samples,
                              std::vector<std::size_t>& fine_counts,
                              std::vector<std::size_t>& coarse_counts) {
  std::fill(fine_counts.begin(), fine_counts.end(), 0);
  std::fill(coarse_counts.begin(), coarse_counts.end(), 0);
  for (std::size_t i : samples) {
    fine_counts[view.fine.at(view.data[i].fine_label)]++;
    coarse_counts[view.coarse.at(view.data[i].coarse_label)]++;
  }
  switch (objective) {
    case TreeObjective::Fine: return count_entropy(fine_counts, samples.size());
    case TreeObjective::Coarse: return count_entropy(coarse_counts, samples.size());
    case TreeObjective::CoFi:
      return count_entropy(coarse_counts, samples.size()) +
             count_entropy(fine_counts, samples.size());
  }
  throw Error(ErrorCode::InvalidConfig, "unknown tree objective");
}

// Draws candidate_splits_per_node (feature, threshold) pairs and keeps the
// strictly best admissible one. RNG consumption is identical whether or not a
// candidate is admissible, so results do not depend on evaluation shortcuts.
SplitChoice best_split(const TrainView& view, TreeObjective objective,
                       std::span<const std::size_t> samples, const ForestConfig& cfg, Rng& rng) {
  SplitChoice choice;
  if (samples.size() < 2 * static_cast<std::size_t>(cfg.min_samples_per_leaf)) return choice;

  std::vector<std::size_t> fine_counts(view.fine.size());
  std::vector<std::size_t> coarse_counts(view.coarse.size());
  const double parent = node_objective_entropy(view, objective, samples, fine_counts, coarse_counts);

  std::vector<std::size_t> left_fine(view.fine.size());
  std::vector<std::size_t> left_coarse(view.coarse.size());
  std::vector<std::size_t> right_fine(view.fine.size());
  std::vector<std::size_t> right_coarse(view.coarse.size());

  for (int c = 0; c < cfg.candidate_splits_per_node; ++c) {
    const auto feature = static_cast<std::int32_t>(rng.next_index(view.dim));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i : samples) {
      double v = view.data[i].descriptor.values[feature];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double threshold = rng.uniform(lo, hi);
    if (!(lo < hi)) continue;  // constant feature in this node

    std::size_t n_left = 0;
    std::fill(left_fine.begin(), left_fine.end(), 0);
    std::fill(left_coarse.begin(), left_coarse.end(), 0);
    for (std::size_t i : samples) {
      if (view.data[i].descriptor.values[feature] < threshold) {
        ++n_left;
        left_fine[view.fine.at(view.data[i].fine_label)]++;
        left_coarse[view.coarse.at(view.data[i].coarse_label)]++;
      }
    }
    const std::size_t n_right = samples.size() - n_left;
    if (n_left < static_cast<std::size_t>(cfg.min_samples_per_leaf) ||
        n_right < static_cast<std::size_t>(cfg.min_samples_per_leaf))
      continue;

    for (std::size_t k = 0; k < left_fine.size(); ++k) right_fine[k] = fine_counts[k] - left_fine[k];
    for (std::size_t k = 0; k < left_coarse.size(); ++k)
      right_coarse[k] = coarse_counts[k] - left_coarse[k];

    const double wl = static_cast<double>(n_left) / samples.size();
    const double wr = static_cast<double>(n_right) / samples.size();
    double children = 0.0;
    if (objective == TreeObjective::Fine || objective == TreeObjective::CoFi)
      children += wl * count_entropy(left_fine, n_left) + wr * count_entropy(right_fine, n_right);
    if (objective == TreeObjective::Coarse || objective == TreeObjective::CoFi)
      children +=
          wl * count_entropy(left_coarse, n_left) + wr * count_entropy(right_coarse, n_right);
    const double gain = parent - children;

    if (gain > 0.0 && (!choice.valid || gain > choice.gain)) {
      choice.valid = true;
      choice.feature = feature;
      choice.threshold = threshold;
      choice.gain = gain;
    }
  }
  return choice;
}

struct PendingNode {
  std::int32_t node = -1;
  std::vector<std::size_t> samples;
  SplitChoice split;
};

Tree train_tree(const TrainView& view, TreeObjective objective, const ForestConfig& cfg,
                std::uint64_t seed, std::vector<std::size_t>* bootstrap_out) {
  Rng rng(seed);

  // Bootstrap sample, same size as the input pool.
  std::vector<std::size_t> bootstrap(view.data.size());
  for (std::size_t& i : bootstrap) i = rng.next_index(view.data.size());
  if (bootstrap_out) *bootstrap_out = bootstrap;

  Tree tree;
  tree.objective = objective;
  tree.nodes.push_back(TreeNode{});

  // Best-first growth: each applied split converts one leaf into an internal
  // node, so leaves = splits + 1 and the budget is hit exactly unless the
  // data runs out of admissible splits first.
  auto cmp = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;  // stable: earlier nodes win ties
  };
  std::priority_queue<std::pair<double, std::size_t>, std::vector<std::pair<double, std::size_t>>,
                      decltype(cmp)>
      frontier(cmp);
  std::vector<PendingNode> pending;

  pending.push_back(PendingNode{0, std::move(bootstrap), {}});
  pending[0].split = best_split(view, objective, pending[0].samples, cfg, rng);
  if (pending[0].split.valid) frontier.emplace(pending[0].split.gain, 0);

  int leaves = 1;
  while (leaves < cfg.max_leaves_per_tree && !frontier.empty()) {
    const std::size_t p = frontier.top().second;
    frontier.pop();

    PendingNode& parent = pending[p];
    const SplitChoice split = parent.split;
    const std::int32_t left_child = static_cast<std::int32_t>(tree.nodes.size());
    const std::int32_t right_child = left_child + 1;
    {
      TreeNode& node = tree.nodes[parent.node];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.gain = split.gain;
      node.left = left_child;
      node.right = right_child;
    }

    std::vector<std::size_t> left_samples, right_samples;
    for (std::size_t i : parent.samples) {
      if (view.data[i].descriptor.values[split.feature] < split.threshold)
        left_samples.push_back(i);
      else
        right_samples.push_back(i);
    }
    parent.samples.clear();
    parent.samples.shrink_to_fit();

    tree.nodes.push_back(TreeNode{});
    tree.nodes.push_back(TreeNode{});
    ++leaves;

    for (auto [child, samples] :
         {std::pair{left_child, &left_samples}, std::pair{right_child, &right_samples}}) {
      pending.push_back(PendingNode{child, std::move(*samples), {}});
      PendingNode& entry = pending.back();
      entry.split = best_split(view, objective, entry.samples, cfg, rng);
      if (entry.split.valid) frontier.emplace(entry.split.gain, pending.size() - 1);
    }
  }

  // Leaf ids in node order so routing alone reproduces them.
  for (TreeNode& node : tree.nodes)
    if (node.is_leaf()) node.leaf_id = tree.leaf_count++;
  return tree;
}

TreeObjective objective_for(const ForestConfig& cfg, int tree_index) {
  switch (cfg.variant) {
    case ForestVariant::Fine: return TreeObjective::Fine;
    case ForestVariant::Coarse: return TreeObjective::Coarse;
    case ForestVariant::CoFi: return TreeObjective::CoFi;
    case ForestVariant::JCoFi:
      return tree_index < cfg.resolved_coarse_trees() ? TreeObjective::Coarse : TreeObjective::Fine;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown forest variant");
}

}  // namespace

const char* forest_variant_name(ForestVariant v) {
  switch (v) {
    case ForestVariant::Fine: return "fine";
    case ForestVariant::Coarse: return "coarse";
    case ForestVariant::JCoFi: return "jcofi";
    case ForestVariant::CoFi: return "cofi";
  }
  return "fine";
}

ForestVariant forest_variant_from_name(const std::string& name) {
  if (name == "fine") return ForestVariant::Fine;
  if (name == "coarse") return ForestVariant::Coarse;
  if (name == "jcofi") return ForestVariant::JCoFi;
  if (name == "cofi") return ForestVariant::CoFi;
  throw Error(ErrorCode::ConfigError,
              "unknown codebook variant '" + name + "' (fine, coarse, jcofi, cofi)");
}

void ForestConfig::validate() const {
  if (num_trees < 1)
    throw Error(ErrorCode::InvalidConfig, "forest needs at least one tree");
  if (max_leaves_per_tree < 1)
    throw Error(ErrorCode::InvalidConfig, "trees need at least one leaf");
  if (candidate_splits_per_node < 1)
    throw Error(ErrorCode::InvalidConfig, "candidate splits per node must be >= 1");
  if (min_samples_per_leaf < 1)
    throw Error(ErrorCode::InvalidConfig, "min samples per leaf must be >= 1");
  if (coarse_trees > num_trees)
    throw Error(ErrorCode::InvalidConfig, "coarse tree count exceeds the forest size");
}

double entropy(std::span<const double> class_histogram) {
  double total = 0.0;
  for (double v : class_histogram) {
    if (v < 0.0) throw Error(ErrorCode::NumericFailure, "negative mass in a class histogram");
    total += v;
  }
  if (total <= 0.0) throw Error(ErrorCode::EmptyNode, "entropy of an empty node");
  double h = 0.0;
  for (double v : class_histogram) {
    if (v <= 0.0) continue;
    double p = v / total;
    h -= p * std::log2(p);
  }
  return h;
}

double label_entropy(std::span<const std::int32_t> labels) {
  if (labels.empty()) throw Error(ErrorCode::EmptyNode, "entropy of an empty node");
  std::unordered_map<std::int32_t, std::size_t> counts;
  for (std::int32_t l : labels) counts[l]++;
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(labels.size());
    h -= p * std::log2(p);
  }
  return h;
}

double information_gain(std::span<const std::int32_t> node_labels,
                        std::span<const std::int32_t> left_labels,
                        std::span<const std::int32_t> right_labels) {
  if (left_labels.empty() || right_labels.empty())
    throw Error(ErrorCode::DegenerateSplit, "a split must send samples both ways");
  const double wl = static_cast<double>(left_labels.size()) / node_labels.size();
  const double wr = static_cast<double>(right_labels.size()) / node_labels.size();
  return label_entropy(node_labels) - wl * label_entropy(left_labels) -
         wr * label_entropy(right_labels);
}

double cofi_gain(const CofiLabels& node, const CofiLabels& left, const CofiLabels& right) {
  return information_gain(node.coarse, left.coarse, right.coarse) +
         information_gain(node.fine, left.fine, right.fine);
}

int Tree::route(std::span<const double> x) const {
  std::int32_t i = 0;
  while (!nodes[i].is_leaf()) {
    const TreeNode& n = nodes[i];
    i = x[n.feature] < n.threshold ? n.left : n.right;
  }
  return nodes[i].leaf_id + leaf_id_offset;
}

Codebook train(std::span<const LabeledDescriptor> data, const ForestConfig& cfg,
               ForestDiagnostics* diagnostics) {
  cfg.validate();
  if (data.empty())
    throw Error(ErrorCode::EmptyTrainingSet, "cannot train a codebook without descriptors");

  TrainView view;
  view.data = data;
  view.dim = static_cast<int>(data[0].descriptor.values.size());
  if (view.dim < 1)
    throw Error(ErrorCode::EmptyTrainingSet, "descriptors have zero dimensions");
  for (const LabeledDescriptor& d : data) {
    if (static_cast<int>(d.descriptor.values.size()) != view.dim)
      throw Error(ErrorCode::DimensionMismatch, "descriptors disagree on dimensionality");
  }
  // Insertion order is first appearance, which is deterministic for a fixed
  // input ordering; the remap never leaves this translation unit.
  for (const LabeledDescriptor& d : data) {
    if (!view.fine.to_index.contains(d.fine_label)) view.fine.insert(d.fine_label);
    if (!view.coarse.to_index.contains(d.coarse_label)) view.coarse.insert(d.coarse_label);
  }

  Codebook book;
  book.config = cfg;
  book.dim = view.dim;
  if (diagnostics) diagnostics->bootstrap_indices.assign(cfg.num_trees, {});

  for (int t = 0; t < cfg.num_trees; ++t) {
    std::vector<std::size_t>* boot = diagnostics ? &diagnostics->bootstrap_indices[t] : nullptr;
    Tree tree = train_tree(view, objective_for(cfg, t), cfg,
                           derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(t)), boot);
    tree.leaf_id_offset = book.vocab_size;
    book.vocab_size += tree.leaf_count;
    book.trees.push_back(std::move(tree));
  }
  return book;
}

BowHistogram quantize(const ImageFeatures& features, const Codebook& codebook) {
  BowHistogram hist;
  hist.counts.assign(static_cast<std::size_t>(codebook.vocab_size), 0);
  for (const Descriptor& d : features.descriptors) {
    if (static_cast<int>(d.values.size()) != codebook.dim)
      throw Error(ErrorCode::DimensionMismatch, "descriptor length does not match the codebook");
    for (const Tree& tree : codebook.trees) hist.counts[tree.route(d.values)]++;
  }
  return hist;
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  io::Writer w(path);
  w.magic("HICF");
  w.scalar<std::uint32_t>(kCodebookVersion);
  w.scalar<std::int32_t>(codebook.config.num_trees);
  w.scalar<std::int32_t>(codebook.config.max_leaves_per_tree);
  w.scalar<std::uint8_t>(static_cast<std::uint8_t>(codebook.config.variant));
  w.scalar<std::int32_t>(codebook.config.coarse_trees);
  w.scalar<std::int32_t>(codebook.config.candidate_splits_per_node);
  w.scalar<std::int32_t>(codebook.config.min_samples_per_leaf);
  w.scalar<std::uint64_t>(codebook.config.rng_seed);
  w.scalar<std::int32_t>(codebook.dim);
  w.scalar<std::int32_t>(codebook.vocab_size);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(codebook.trees.size()));
  for (const Tree& tree : codebook.trees) {
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(tree.objective));
    w.scalar<std::int32_t>(tree.leaf_count);
    w.scalar<std::int32_t>(tree.leaf_id_offset);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const TreeNode& n : tree.nodes) {
      w.scalar<std::int32_t>(n.feature);
      w.scalar<double>(n.threshold);
      w.scalar<std::int32_t>(n.left);
      w.scalar<std::int32_t>(n.right);
      w.scalar<std::int32_t>(n.leaf_id);
      w.scalar<double>(n.gain);
    }
  }
}

Codebook load_codebook(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("HICF", "codebook");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCodebookVersion)
    throw Error(ErrorCode::CorruptRecord, "unsupported codebook version " + std::to_string(version));

  Codebook book;
  book.config.num_trees = r.scalar<std::int32_t>();
  book.config.max_leaves_per_tree = r.scalar<std::int32_t>();
  const auto variant = r.scalar<std::uint8_t>();
  if (variant > static_cast<std::uint8_t>(ForestVariant::CoFi))
    throw Error(ErrorCode::CorruptRecord, "codebook stores an unknown variant");
  book.config.variant = static_cast<ForestVariant>(variant);
  book.config.coarse_trees = r.scalar<std::int32_t>();
  book.config.candidate_splits_per_node = r.scalar<std::int32_t>();
  book.config.min_samples_per_leaf = r.scalar<std::int32_t>();
  book.config.rng_seed = r.scalar<std::uint64_t>();
  book.dim = r.scalar<std::int32_t>();
  book.vocab_size = r.scalar<std::int32_t>();
  const auto num_trees = r.scalar<std::uint32_t>();

  int leaf_total = 0;
  for (std::uint32_t t = 0; t < num_trees; ++t) {
    Tree tree;
    const auto objective = r.scalar<std::uint8_t>();
    if (objective > static_cast<std::uint8_t>(TreeObjective::CoFi))
      throw Error(ErrorCode::CorruptRecord, "codebook stores an unknown tree objective");
    tree.objective = static_cast<TreeObjective>(objective);
    tree.leaf_count = r.scalar<std::int32_t>();
    tree.leaf_id_offset = r.scalar<std::int32_t>();
    const auto num_nodes = r.scalar<std::uint32_t>();
    tree.nodes.resize(num_nodes);
    for (TreeNode& n : tree.nodes) {
      n.feature = r.scalar<std::int32_t>();
      n.threshold = r.scalar<double>();
      n.left = r.scalar<std::int32_t>();
      n.right = r.scalar<std::int32_t>();
      n.leaf_id = r.scalar<std::int32_t>();
      n.gain = r.scalar<double>();
      if (!n.is_leaf() &&
          (n.left <= 0 || n.right <= 0 || n.left >= static_cast<std::int32_t>(num_nodes) ||
           n.right >= static_cast<std::int32_t>(num_nodes)))
        throw Error(ErrorCode::CorruptRecord, "codebook node points outside its tree");
      if (n.is_leaf() && (n.leaf_id < 0 || n.leaf_id >= tree.leaf_count))
        throw Error(ErrorCode::CorruptRecord, "codebook leaf id out of range");
    }
    if (tree.nodes.empty())
      throw Error(ErrorCode::CorruptRecord, "codebook stores an empty tree");
    leaf_total += tree.leaf_count;
    book.trees.push_back(std::move(tree));
  }
  if (leaf_total != book.vocab_size)
    throw Error(ErrorCode::CorruptRecord, "codebook vocabulary does not match its leaves");
  return book;
}

}  // namespace hic
