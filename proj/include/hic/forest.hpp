#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hic/phog.hpp"

namespace hic {

using FineClassId = std::int32_t;
using CoarseClassId = std::int32_t;

struct LabeledDescriptor {
  Descriptor descriptor;
  FineClassId fine_label = 0;
  CoarseClassId coarse_label = 0;
};

enum class ForestVariant { Fine, Coarse, JCoFi, CoFi };
enum class TreeObjective : std::uint8_t { Fine = 0, Coarse = 1, CoFi = 2 };

const char* forest_variant_name(ForestVariant v);
ForestVariant forest_variant_from_name(const std::string& name);  // throws ConfigError

struct ForestConfig {
  int num_trees = 10;
  int max_leaves_per_tree = 100;
  ForestVariant variant = ForestVariant::Fine;
  int coarse_trees = -1;  // JCoFi ratio r; -1 picks num_trees/2
  int candidate_splits_per_node = 32;
  int min_samples_per_leaf = 2;
  std::uint64_t rng_seed = 0;

  static ForestConfig cifar_preset() {
    ForestConfig cfg;
    cfg.max_leaves_per_tree = 50;
    return cfg;
  }

  int resolved_coarse_trees() const { return coarse_trees < 0 ? num_trees / 2 : coarse_trees; }
  void validate() const;  // throws InvalidConfig
};

struct TreeNode {
  std::int32_t feature = -1;   // split dimension; -1 for leaves
  double threshold = 0.0;      // x[feature] < threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t leaf_id = -1;   // tree-local leaf index, -1 for internal nodes
  double gain = 0.0;           // training gain of the chosen split (diagnostic)

  bool is_leaf() const { return left < 0; }
};

struct Tree {
  TreeObjective objective = TreeObjective::Fine;
  std::vector<TreeNode> nodes;
  int leaf_count = 0;
  int leaf_id_offset = 0;  // global leaf numbering across the forest

  // leaf's global codebook id for one descriptor
  int route(std::span<const double> x) const;
};

struct Codebook {
  std::vector<Tree> trees;
  int dim = 0;
  int vocab_size = 0;
  ForestConfig config;
};

struct BowHistogram {
  std::vector<std::uint32_t> counts;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

// Shannon entropy (bits) of a class histogram; entries are normalized
// internally, 0*log(0) counts as 0. Throws EmptyNode when the mass is zero.
double entropy(std::span<const double> class_histogram);

// entropy of a label multiset, convenience for the gain functions
double label_entropy(std::span<const std::int32_t> labels);

// parent entropy minus size-weighted child entropies; throws DegenerateSplit
// when either side is empty
double information_gain(std::span<const std::int32_t> node_labels,
                        std::span<const std::int32_t> left_labels,
                        std::span<const std::int32_t> right_labels);

struct CofiLabels {
  std::span<const std::int32_t> coarse;
  std::span<const std::int32_t> fine;
};

// joint objective: coarse-label gain plus fine-label gain
double cofi_gain(const CofiLabels& node, const CofiLabels& left, const CofiLabels& right);

// Per-tree bootstrap sample indices, exposed so tests can re-derive every
// chosen split from public pieces.
struct ForestDiagnostics {
  std::vector<std::vector<std::size_t>> bootstrap_indices;
};

Codebook train(std::span<const LabeledDescriptor> data, const ForestConfig& cfg,
               ForestDiagnostics* diagnostics = nullptr);

BowHistogram quantize(const ImageFeatures& features, const Codebook& codebook);

// Versioned binary serialization, magic "HICF".
void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace hic
