#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hic/error.hpp"
#include "hic/forest.hpp"
#include "hic/rng.hpp"

using namespace hic;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("hic_forest_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

template <typename Fn>
std::optional<ErrorCode> code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

LabeledDescriptor point(std::vector<double> values, FineClassId fine, CoarseClassId coarse) {
  LabeledDescriptor d;
  d.descriptor.values = std::move(values);
  d.fine_label = fine;
  d.coarse_label = coarse;
  return d;
}

// Interleaved label blocks along one axis: splits keep finding impure nodes,
// so best-first growth can always spend its full leaf budget.
std::vector<LabeledDescriptor> line_data(int n) {
  std::vector<LabeledDescriptor> data;
  for (int i = 0; i < n; ++i)
    data.push_back(point({static_cast<double>(i), static_cast<double>(i % 3)},
                         (i / 2) % 2, (i / 8) % 2));
  return data;
}

std::vector<LabeledDescriptor> two_cluster_data(int per_class) {
  std::vector<LabeledDescriptor> data;
  for (int i = 0; i < per_class; ++i) {
    data.push_back(point({0.1, 0.5}, 0, 0));
    data.push_back(point({0.9, 0.5}, 1, 1));
  }
  return data;
}

std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("entropy of simple distributions") {
  CHECK(entropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(entropy(std::vector<double>{1.0}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK(entropy(std::vector<double>{2.0, 2.0}) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(label_entropy(std::vector<std::int32_t>{0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(label_entropy(std::vector<std::int32_t>{7, 7, 7}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(label_entropy(std::vector<std::int32_t>{0, 1, 2, 3}) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("entropy rejects empty or negative mass") {
  CHECK(code_of([] { entropy(std::vector<double>{}); }) == ErrorCode::EmptyNode);
  CHECK(code_of([] { entropy(std::vector<double>{0.0, 0.0}); }) == ErrorCode::EmptyNode);
  CHECK(code_of([] { entropy(std::vector<double>{-1.0, 2.0}); }) == ErrorCode::NumericFailure);
  CHECK(code_of([] { label_entropy(std::vector<std::int32_t>{}); }) == ErrorCode::EmptyNode);
}

TEST_CASE("information gain on perfect, useless, and lopsided splits") {
  const std::vector<std::int32_t> node{0, 0, 1, 1};
  CHECK(information_gain(node, std::vector<std::int32_t>{0, 0}, std::vector<std::int32_t>{1, 1}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(information_gain(node, std::vector<std::int32_t>{0, 1}, std::vector<std::int32_t>{0, 1}) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(information_gain(node, std::vector<std::int32_t>{0, 0, 1}, std::vector<std::int32_t>{1}) ==
        doctest::Approx(0.3112781244591328).epsilon(1e-12));
}

TEST_CASE("splits that starve one side are degenerate") {
  const std::vector<std::int32_t> node{0, 1};
  CHECK(code_of([&] {
          information_gain(node, std::vector<std::int32_t>{}, std::vector<std::int32_t>{0, 1});
        }) == ErrorCode::DegenerateSplit);
}

TEST_CASE("the joint gain is the sum of the coarse and fine gains") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 4 + static_cast<int>(rng.next_index(37));
    std::vector<std::int32_t> coarse(n), fine(n);
    for (int i = 0; i < n; ++i) {
      coarse[i] = static_cast<std::int32_t>(rng.next_index(3));
      fine[i] = static_cast<std::int32_t>(rng.next_index(5));
    }
    const int cut = 1 + static_cast<int>(rng.next_index(n - 1));
    CofiLabels node{coarse, fine};
    CofiLabels left{std::span(coarse).subspan(0, cut), std::span(fine).subspan(0, cut)};
    CofiLabels right{std::span(coarse).subspan(cut), std::span(fine).subspan(cut)};

    const double joint = cofi_gain(node, left, right);
    const double coarse_gain = information_gain(node.coarse, left.coarse, right.coarse);
    const double fine_gain = information_gain(node.fine, left.fine, right.fine);
    REQUIRE(std::abs(joint - (coarse_gain + fine_gain)) <= 1e-12);
  }
}

TEST_CASE("constant coarse labels leave only the fine term") {
  const std::vector<std::int32_t> coarse{0, 0, 0, 0};
  const std::vector<std::int32_t> fine{0, 1, 2, 3};
  CofiLabels node{coarse, fine};
  CofiLabels left{std::span(coarse).subspan(0, 2), std::span(fine).subspan(0, 2)};
  CofiLabels right{std::span(coarse).subspan(2), std::span(fine).subspan(2)};
  CHECK(cofi_gain(node, left, right) ==
        doctest::Approx(information_gain(fine, left.fine, right.fine)).epsilon(1e-12));
}

TEST_CASE("a split cutting both levels cleanly earns both gains") {
  // Two coarse groups holding two fine classes each, split along the coarse
  // boundary: one bit of coarse gain plus one bit of fine gain.
  const std::vector<std::int32_t> coarse{0, 0, 1, 1};
  const std::vector<std::int32_t> fine{0, 1, 2, 3};
  CofiLabels node{coarse, fine};
  CofiLabels left{std::span(coarse).subspan(0, 2), std::span(fine).subspan(0, 2)};
  CofiLabels right{std::span(coarse).subspan(2), std::span(fine).subspan(2)};
  CHECK(cofi_gain(node, left, right) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("a separable feature splits into two pure leaves") {
  const auto data = two_cluster_data(20);
  ForestConfig cfg;
  cfg.num_trees = 1;
  cfg.max_leaves_per_tree = 2;
  cfg.rng_seed = 1;
  const Codebook book = train(data, cfg);

  REQUIRE(book.trees.size() == 1);
  CHECK(book.trees[0].leaf_count == 2);
  CHECK(book.vocab_size == 2);

  ImageFeatures lo, hi;
  lo.descriptors.push_back(data[0].descriptor);
  hi.descriptors.push_back(data[1].descriptor);
  const BowHistogram hlo = quantize(lo, book);
  const BowHistogram hhi = quantize(hi, book);
  CHECK(hlo.total() == 1);
  CHECK(hhi.total() == 1);
  CHECK(hlo.counts != hhi.counts);
}

TEST_CASE("uniform labels leave single-leaf trees") {
  std::vector<LabeledDescriptor> data;
  for (int i = 0; i < 30; ++i) data.push_back(point({static_cast<double>(i), 1.0}, 4, 2));
  ForestConfig cfg;
  cfg.num_trees = 5;
  const Codebook book = train(data, cfg);
  for (const Tree& t : book.trees) CHECK(t.leaf_count == 1);
  CHECK(book.vocab_size == 5);

  ImageFeatures one;
  one.descriptors.push_back(data[0].descriptor);
  const BowHistogram h = quantize(one, book);
  CHECK(h.counts == std::vector<std::uint32_t>{1, 1, 1, 1, 1});
}

TEST_CASE("trees spend their full leaf budget on rich data") {
  const auto data = line_data(256);
  for (ForestVariant variant :
       {ForestVariant::Fine, ForestVariant::Coarse, ForestVariant::JCoFi, ForestVariant::CoFi}) {
    ForestConfig cfg;
    cfg.num_trees = 4;
    cfg.max_leaves_per_tree = 10;
    cfg.variant = variant;
    cfg.rng_seed = 3;
    const Codebook book = train(data, cfg);

    CHECK(book.dim == 2);
    CHECK(book.vocab_size == 40);
    int offset = 0;
    for (const Tree& t : book.trees) {
      CHECK(t.leaf_count == 10);
      CHECK(t.leaf_id_offset == offset);
      offset += t.leaf_count;
    }
  }
}

TEST_CASE("routing the training set reaches every leaf id") {
  const auto data = line_data(256);
  ForestConfig cfg;
  cfg.num_trees = 3;
  cfg.max_leaves_per_tree = 8;
  cfg.rng_seed = 7;
  const Codebook book = train(data, cfg);

  std::set<int> seen;
  for (const Tree& t : book.trees) {
    std::set<int> tree_ids;
    for (const LabeledDescriptor& d : data) {
      const int id = t.route(d.descriptor.values);
      CHECK(id >= t.leaf_id_offset);
      CHECK(id < t.leaf_id_offset + t.leaf_count);
      tree_ids.insert(id);
      seen.insert(id);
    }
    CHECK(static_cast<int>(tree_ids.size()) == t.leaf_count);
  }
  CHECK(static_cast<int>(seen.size()) == book.vocab_size);
}

TEST_CASE("internal nodes store strictly positive gains") {
  const auto data = line_data(200);
  for (ForestVariant variant : {ForestVariant::Fine, ForestVariant::CoFi}) {
    ForestConfig cfg;
    cfg.num_trees = 3;
    cfg.max_leaves_per_tree = 12;
    cfg.variant = variant;
    const Codebook book = train(data, cfg);
    for (const Tree& t : book.trees)
      for (const TreeNode& n : t.nodes)
        if (!n.is_leaf()) CHECK(n.gain > 0.0);
  }
}

TEST_CASE("the same seed reproduces the forest byte for byte") {
  const auto data = line_data(120);
  ForestConfig cfg;
  cfg.num_trees = 3;
  cfg.max_leaves_per_tree = 6;
  cfg.rng_seed = 42;

  TempDir tmp;
  save_codebook(train(data, cfg), tmp.path / "a.hicf");
  save_codebook(train(data, cfg), tmp.path / "b.hicf");
  cfg.rng_seed = 43;
  save_codebook(train(data, cfg), tmp.path / "c.hicf");

  CHECK(file_bytes(tmp.path / "a.hicf") == file_bytes(tmp.path / "b.hicf"));
  CHECK(file_bytes(tmp.path / "a.hicf") != file_bytes(tmp.path / "c.hicf"));
}

TEST_CASE("mixed forests put the coarse trees first") {
  const auto data = line_data(120);
  ForestConfig cfg;
  cfg.variant = ForestVariant::JCoFi;
  cfg.num_trees = 6;
  cfg.coarse_trees = 2;
  const Codebook book = train(data, cfg);
  REQUIRE(book.trees.size() == 6);
  for (int t = 0; t < 6; ++t)
    CHECK(book.trees[t].objective == (t < 2 ? TreeObjective::Coarse : TreeObjective::Fine));

  cfg.coarse_trees = -1;  // half the forest
  CHECK(cfg.resolved_coarse_trees() == 3);
}

TEST_CASE("an all-coarse mixed forest matches the coarse forest") {
  const auto data = line_data(120);
  ForestConfig jcofi;
  jcofi.variant = ForestVariant::JCoFi;
  jcofi.num_trees = 4;
  jcofi.coarse_trees = 4;
  jcofi.max_leaves_per_tree = 6;
  jcofi.rng_seed = 5;
  ForestConfig coarse = jcofi;
  coarse.variant = ForestVariant::Coarse;
  coarse.coarse_trees = -1;

  const Codebook a = train(data, jcofi);
  const Codebook b = train(data, coarse);
  REQUIRE(a.trees.size() == b.trees.size());
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    CHECK(a.trees[t].objective == TreeObjective::Coarse);
    REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
    for (std::size_t n = 0; n < a.trees[t].nodes.size(); ++n) {
      CHECK(a.trees[t].nodes[n].feature == b.trees[t].nodes[n].feature);
      CHECK(a.trees[t].nodes[n].threshold == b.trees[t].nodes[n].threshold);
      CHECK(a.trees[t].nodes[n].left == b.trees[t].nodes[n].left);
      CHECK(a.trees[t].nodes[n].right == b.trees[t].nodes[n].right);
      CHECK(a.trees[t].nodes[n].leaf_id == b.trees[t].nodes[n].leaf_id);
    }
  }
}

TEST_CASE("quantize accumulates one vote per tree") {
  const auto data = line_data(120);
  ForestConfig cfg;
  cfg.num_trees = 7;
  cfg.max_leaves_per_tree = 5;
  const Codebook book = train(data, cfg);

  ImageFeatures feats;
  for (int i = 0; i < 85; ++i) feats.descriptors.push_back(data[i % data.size()].descriptor);
  const BowHistogram h = quantize(feats, book);
  REQUIRE(h.counts.size() == static_cast<std::size_t>(book.vocab_size));
  CHECK(h.total() == 85u * 7u);

  ImageFeatures one;
  one.descriptors.push_back(data[0].descriptor);
  CHECK(quantize(one, book).total() == 7u);

  CHECK(quantize(feats, book).counts == h.counts);
}

TEST_CASE("dimension mismatches are rejected") {
  const auto data = line_data(60);
  const Codebook book = train(data, ForestConfig{});

  ImageFeatures wrong;
  wrong.descriptors.push_back(Descriptor{{1.0, 2.0, 3.0}, 0, 0});
  CHECK(code_of([&] { quantize(wrong, book); }) == ErrorCode::DimensionMismatch);

  auto bad = data;
  bad.push_back(point({1.0}, 0, 0));
  CHECK(code_of([&] { train(bad, ForestConfig{}); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("codebook files round trip") {
  const auto data = line_data(120);
  ForestConfig cfg;
  cfg.num_trees = 4;
  cfg.max_leaves_per_tree = 6;
  cfg.variant = ForestVariant::CoFi;
  const Codebook book = train(data, cfg);

  TempDir tmp;
  const auto path = tmp.path / "book.hicf";
  save_codebook(book, path);
  const Codebook back = load_codebook(path);

  CHECK(back.dim == book.dim);
  CHECK(back.vocab_size == book.vocab_size);
  CHECK(back.config.variant == book.config.variant);
  CHECK(back.config.num_trees == book.config.num_trees);
  ImageFeatures feats;
  for (int i = 0; i < 30; ++i) feats.descriptors.push_back(data[i].descriptor);
  CHECK(quantize(feats, back).counts == quantize(feats, book).counts);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK(code_of([&] { load_codebook(path); }) == ErrorCode::CorruptRecord);
  CHECK(code_of([&] { load_codebook(tmp.path / "absent.hicf"); }) == ErrorCode::IoError);
}

TEST_CASE("variant names round trip") {
  for (ForestVariant v :
       {ForestVariant::Fine, ForestVariant::Coarse, ForestVariant::JCoFi, ForestVariant::CoFi})
    CHECK(forest_variant_from_name(forest_variant_name(v)) == v);
  CHECK(code_of([] { forest_variant_from_name("forest"); }) == ErrorCode::ConfigError);
}

TEST_CASE("training demands data and a sane config") {
  CHECK(code_of([] { train({}, ForestConfig{}); }) == ErrorCode::EmptyTrainingSet);

  ForestConfig cfg;
  cfg.num_trees = 0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = ForestConfig{};
  cfg.max_leaves_per_tree = 0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = ForestConfig{};
  cfg.candidate_splits_per_node = 0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = ForestConfig{};
  cfg.min_samples_per_leaf = 0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = ForestConfig{};
  cfg.coarse_trees = cfg.num_trees + 1;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("the smaller preset trims the leaf budget") {
  const ForestConfig cfg = ForestConfig::cifar_preset();
  CHECK(cfg.max_leaves_per_tree == 50);
  CHECK(cfg.num_trees == 10);
}
