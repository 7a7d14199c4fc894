#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hic/image.hpp"
#include "hic/phog.hpp"
#include "hic/plsa.hpp"
#include "hic/rng.hpp"
#include "hic/taxonomy.hpp"

namespace hic {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

// Per-item read counters. The experiment harness audits these to prove that
// unseen-class training items are never touched before classification.
class AccessLog {
 public:
  explicit AccessLog(std::size_t n) : reads_(n) {}
  void record(std::size_t i) const { reads_[i].fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t reads(std::size_t i) const { return reads_[i].load(std::memory_order_relaxed); }
  std::size_t size() const { return reads_.size(); }

 private:
  mutable std::vector<std::atomic<std::uint64_t>> reads_;
};

// A loaded dataset. Items are raster images, precomputed descriptor sets, or
// bag-of-words histograms depending on the source. Every item access goes
// through the accessors below so reads land in the log.
class Dataset {
 public:
  enum class ItemKind { Images, Features, Histograms };

  Taxonomy taxonomy;
  std::vector<FineClassId> fine_labels;
  std::vector<Split> split;
  std::vector<std::string> item_ids;
  int vocab_size = 0;  // Histograms mode only

  Dataset() = default;
  Dataset(const Dataset&) = delete;
  Dataset& operator=(const Dataset&) = delete;
  Dataset(Dataset&&) = default;
  Dataset& operator=(Dataset&&) = default;

  ItemKind kind() const { return kind_; }
  std::size_t size() const { return fine_labels.size(); }

  const RasterImage& image(std::size_t i) const;
  const ImageFeatures& features(std::size_t i) const;
  const BowHistogram& histogram(std::size_t i) const;

  void set_images(std::vector<RasterImage> images);
  void set_features(std::vector<ImageFeatures> features);
  void set_histograms(std::vector<BowHistogram> histograms, int vocab);

  const AccessLog& access_log() const { return *log_; }
  std::uint64_t reads_of(std::size_t i) const { return log_->reads(i); }

  bool is_seen(std::size_t i) const { return taxonomy.fine_classes[fine_labels[i]].seen; }
  bool is_train(std::size_t i) const { return split[i] == Split::Train; }

 private:
  void init_log();

  ItemKind kind_ = ItemKind::Images;
  std::vector<RasterImage> images_;
  std::vector<ImageFeatures> features_;
  std::vector<BowHistogram> histograms_;
  std::shared_ptr<AccessLog> log_;
};

// --- Cifar-100 binary ---------------------------------------------------
// Record layout: coarse label byte, fine label byte, 3072 image bytes
// (32x32x3, channel-planar). train.bin and test.bin are pooled and re-split:
// train_per_class seeded-random training images per fine class, rest test.
Dataset load_cifar100(const std::filesystem::path& dir, int train_per_class, std::uint64_t seed);

constexpr std::size_t kCifarRecordSize = 3074;
std::array<std::uint8_t, kCifarRecordSize> encode_cifar_record(const RasterImage& image,
                                                               std::uint8_t coarse,
                                                               std::uint8_t fine);
RasterImage decode_cifar_pixels(const std::uint8_t* pixels3072);

// --- Labeled image folders ------------------------------------------------
// Layout: one directory per fine class under root, PNG/JPEG files inside.
// Every directory must name a taxonomy fine class (MissingClassDir lists the
// offenders otherwise).
struct SplitSpec {
  int train_per_class = 30;

  static SplitSpec parse(const std::string& text);  // accepts "<n>/rest"
};

Dataset load_image_folder(const std::filesystem::path& root, const Taxonomy& taxonomy,
                          const SplitSpec& split_spec, std::uint64_t seed);

// Marks exactly q seeded-random fine classes per coarse class unseen.
// Classes listed in designated_first are preferred before random picks (the
// synthetic union classes use this). Throws ConfigError when q is too large
// for some coarse class.
void mark_unseen(Taxonomy& taxonomy, int q, std::uint64_t seed,
                 std::span<const FineClassId> designated_first = {});

void write_split_manifest(const Dataset& dataset, const std::filesystem::path& path);

// --- Synthetic corpora -----------------------------------------------------
enum class TopicOverlap {
  Disjoint,       // fine class f mixes only topic f mod K
  SharedPrivate,  // siblings share one topic, own one private topic; the last
                  // sibling's support is the union of the others'
};

struct SyntheticSpec {
  int num_topics = 15;
  int vocab_size = 150;
  int coarse_count = 5;
  int fine_per_coarse = 3;
  int docs_per_class = 40;
  int tokens_per_doc = 150;
  TopicOverlap topic_overlap = TopicOverlap::SharedPrivate;
  std::uint64_t rng_seed = 0;
  int train_per_class = 30;

  void validate() const;  // throws InvalidSpec
};

struct SyntheticData {
  Dataset dataset;  // Histograms mode
  std::vector<double> true_topic_word;      // K x V row-major
  std::vector<std::vector<double>> class_mixtures;  // per fine class, length K
  std::vector<FineClassId> designated_unseen;       // union classes, one per coarse
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// --- Synthetic images -------------------------------------------------------
// Oriented sine gratings: every fine class owns a stripe angle; siblings sit
// in the same angular band so coarse structure is visible to the forest.
struct SyntheticImageSpec {
  int coarse_count = 3;
  int fine_per_coarse = 3;
  int images_per_class = 20;
  int width = 48;
  int height = 48;
  double noise = 8.0;  // additive uniform pixel noise amplitude
  std::uint64_t rng_seed = 0;
  int train_per_class = 12;

  void validate() const;
};

Dataset generate_synthetic_images(const SyntheticImageSpec& spec);

}  // namespace hic
