#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hic/plsa.hpp"
#include "hic/taxonomy.hpp"

namespace hic {

// Bitmask over topics. Capped at 64 topics, which is generous for a scheme
// that reasons over all 2^K subsets.
struct TopicSet {
  std::uint64_t bits = 0;

  bool contains(int k) const { return (bits >> k) & 1ULL; }
  void set(int k) { bits |= (1ULL << k); }
  int count() const { return __builtin_popcountll(bits); }
  bool empty() const { return bits == 0; }

  friend TopicSet operator|(TopicSet a, TopicSet b) { return TopicSet{a.bits | b.bits}; }
  friend bool operator==(TopicSet a, TopicSet b) { return a.bits == b.bits; }

  std::string to_hex() const;
  static TopicSet from_hex(const std::string& hex);
};

struct ClassTopicProfile {
  FineClassId class_id = -1;
  std::vector<double> profile;  // stochastic over K topics
};

// Mean of p(z|d) over the class's training documents. Throws EmptyClass when
// the class has no document.
ClassTopicProfile class_topic_profile(const PlsaModel& model,
                                      std::span<const FineClassId> doc_labels,
                                      FineClassId class_id);

// Signature topics: every topic whose class mass reaches the uniform level
// 1/K. Non-empty for any stochastic profile.
TopicSet signature_set(const ClassTopicProfile& profile);

// Reference scorer used by tests: scan all 2^K subsets for the one maximizing
// sum over included topics of (profile_k - 1/K).
TopicSet signature_set_bruteforce(const ClassTopicProfile& profile);

enum class PairPolicy { SeededRandom, Fixed, Exhaustive };

const char* pair_policy_name(PairPolicy policy);
PairPolicy pair_policy_from_name(const std::string& name);  // throws ConfigError

struct PairChoice {
  FineClassId g = -1;
  FineClassId h = -1;
};

struct ZeroShotOptions {
  PairPolicy policy = PairPolicy::SeededRandom;
  std::uint64_t rng_seed = 0;
  std::map<FineClassId, PairChoice> fixed_pairs;  // for PairPolicy::Fixed
  bool cross_class_norm = false;       // divide topic columns by their seen-class sums
  bool normalize_by_set_size = false;  // ablation: divide raw scores by |T|
};

struct ZeroShotClassifier {
  int num_topics = 0;
  Taxonomy taxonomy;
  std::vector<TopicSet> topic_sets;                     // per fine class
  std::vector<std::optional<PairChoice>> pair_choices;  // per fine class, set for unseen
  std::vector<std::vector<TopicSet>> exhaustive_sets;   // per fine class, Exhaustive policy only
  ZeroShotOptions options;

  void validate() const;  // throws IncompleteClassifier
};

// Profiles and signature sets for every seen class; unseen sets start empty.
ZeroShotClassifier build_seen_sets(const PlsaModel& model, const Taxonomy& taxonomy,
                                   std::span<const FineClassId> doc_labels,
                                   const ZeroShotOptions& options);

// For each unseen class, pick a pair (g, h) of seen siblings under the same
// coarse parent and take the union of their signature sets. Throws
// NoPairAvailable when a coarse class has fewer than two seen members.
void infer_unseen_sets(ZeroShotClassifier& classifier);

struct Prediction {
  FineClassId class_id = -1;
  double score = 0.0;
};

// Fold the test histogram into the topic space and score every fine class by
// its signature-topic mass, normalized across classes. Ranked best first;
// ties break toward the lowest class id.
std::vector<Prediction> classify(const ZeroShotClassifier& classifier, const PlsaModel& model,
                                 const BowHistogram& histogram, const EmConfig& em_cfg);

// Scores from an already folded-in topic mixture (classify = fold_in + this).
std::vector<Prediction> score_topic_mixture(const ZeroShotClassifier& classifier,
                                            std::span<const double> topic_mixture);

void save_classifier(const ZeroShotClassifier& classifier, const std::filesystem::path& path);
ZeroShotClassifier load_classifier(const std::filesystem::path& path);

}  // namespace hic
