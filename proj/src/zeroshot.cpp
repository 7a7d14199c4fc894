#include "hic/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hic/error.hpp"
#include "hic/rng.hpp"

namespace hic {

namespace {

constexpr int kMaxTopics = 64;       // TopicSet is a 64-bit mask
constexpr int kMaxBruteforce = 24;   // 2^K subsets stay enumerable

void check_topic_count(int num_topics) {
  if (num_topics < 1)
    throw Error(ErrorCode::InvalidK, "topic count must be >= 1");
  if (num_topics > kMaxTopics)
    throw Error(ErrorCode::InvalidK,
                "topic sets support at most " + std::to_string(kMaxTopics) + " topics, got " +
                    std::to_string(num_topics));
}

double set_score(TopicSet set, std::span<const double> mixture, bool normalize_by_set_size) {
  double s = 0.0;
  for (int k = 0; k < static_cast<int>(mixture.size()); ++k)
    if (set.contains(k)) s += mixture[k];
  if (normalize_by_set_size && set.count() > 0) s /= set.count();
  return s;
}

}  // namespace

std::string TopicSet::to_hex() const {
  std::ostringstream out;
  out << "0x" << std::hex << bits;
  return out.str();
}

TopicSet TopicSet::from_hex(const std::string& hex) {
  std::string body = hex;
  if (body.rfind("0x", 0) == 0 || body.rfind("0X", 0) == 0) body = body.substr(2);
  if (body.empty() || body.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
    throw Error(ErrorCode::ParseError, "bad topic set '" + hex + "'");
  if (body.size() > 16)
    throw Error(ErrorCode::ParseError, "topic set '" + hex + "' exceeds 64 bits");
  return TopicSet{std::stoull(body, nullptr, 16)};
}

ClassTopicProfile class_topic_profile(const PlsaModel& model,
                                      std::span<const FineClassId> doc_labels,
                                      FineClassId class_id) {
  if (doc_labels.size() != static_cast<std::size_t>(model.num_docs))
    throw Error(ErrorCode::DimensionMismatch, "labels are not parallel to the model documents");

  ClassTopicProfile out;
  out.class_id = class_id;
  out.profile.assign(static_cast<std::size_t>(model.num_topics), 0.0);
  std::size_t n = 0;
  for (int d = 0; d < model.num_docs; ++d) {
    if (doc_labels[d] != class_id) continue;
    const auto row = model.doc_row(d);
    for (int k = 0; k < model.num_topics; ++k) out.profile[k] += row[k];
    ++n;
  }
  if (n == 0)
    throw Error(ErrorCode::EmptyClass,
                "class " + std::to_string(class_id) + " has no training documents");
  for (double& v : out.profile) v /= static_cast<double>(n);
  return out;
}

TopicSet signature_set(const ClassTopicProfile& profile) {
  const int K = static_cast<int>(profile.profile.size());
  check_topic_count(K);
  const double uniform = 1.0 / K;
  TopicSet set;
  for (int k = 0; k < K; ++k)
    if (profile.profile[k] >= uniform) set.set(k);
  return set;
}

TopicSet signature_set_bruteforce(const ClassTopicProfile& profile) {
  const int K = static_cast<int>(profile.profile.size());
  check_topic_count(K);
  if (K > kMaxBruteforce)
    throw Error(ErrorCode::InvalidK, "subset scan is limited to " +
                                         std::to_string(kMaxBruteforce) + " topics");
  const double uniform = 1.0 / K;
  TopicSet best;
  double best_score = 0.0;  // the empty set scores zero
  for (std::uint64_t mask = 1; mask < (1ULL << K); ++mask) {
    double score = 0.0;
    for (int k = 0; k < K; ++k)
      if ((mask >> k) & 1ULL) score += profile.profile[k] - uniform;
    if (score > best_score) {
      best_score = score;
      best = TopicSet{mask};
    }
  }
  return best;
}

const char* pair_policy_name(PairPolicy policy) {
  switch (policy) {
    case PairPolicy::SeededRandom: return "seeded-random";
    case PairPolicy::Fixed: return "fixed";
    case PairPolicy::Exhaustive: return "exhaustive";
  }
  return "seeded-random";
}

PairPolicy pair_policy_from_name(const std::string& name) {
  if (name == "seeded-random") return PairPolicy::SeededRandom;
  if (name == "fixed") return PairPolicy::Fixed;
  if (name == "exhaustive") return PairPolicy::Exhaustive;
  throw Error(ErrorCode::ConfigError,
              "unknown pair policy '" + name + "' (seeded-random, fixed, exhaustive)");
}

void ZeroShotClassifier::validate() const {
  const std::size_t F = taxonomy.fine_classes.size();
  if (num_topics < 1 || num_topics > kMaxTopics)
    throw Error(ErrorCode::IncompleteClassifier, "classifier has a bad topic count");
  if (topic_sets.size() != F || pair_choices.size() != F || exhaustive_sets.size() != F)
    throw Error(ErrorCode::IncompleteClassifier,
                "classifier tables are not parallel to the taxonomy");
  const std::uint64_t valid_bits =
      num_topics == kMaxTopics ? ~0ULL : ((1ULL << num_topics) - 1);
  for (std::size_t f = 0; f < F; ++f) {
    const bool has_single = !topic_sets[f].empty();
    const bool has_candidates = !exhaustive_sets[f].empty();
    if (!has_single && !has_candidates)
      throw Error(ErrorCode::IncompleteClassifier,
                  "class '" + taxonomy.fine_classes[f].name + "' has no topic set");
    if ((topic_sets[f].bits & ~valid_bits) != 0)
      throw Error(ErrorCode::IncompleteClassifier,
                  "class '" + taxonomy.fine_classes[f].name + "' references unknown topics");
    for (TopicSet s : exhaustive_sets[f])
      if (s.empty() || (s.bits & ~valid_bits) != 0)
        throw Error(ErrorCode::IncompleteClassifier,
                    "class '" + taxonomy.fine_classes[f].name + "' has a bad candidate set");
  }
}

ZeroShotClassifier build_seen_sets(const PlsaModel& model, const Taxonomy& taxonomy,
                                   std::span<const FineClassId> doc_labels,
                                   const ZeroShotOptions& options) {
  check_topic_count(model.num_topics);

  ZeroShotClassifier clf;
  clf.num_topics = model.num_topics;
  clf.taxonomy = taxonomy;
  clf.options = options;
  const std::size_t F = taxonomy.fine_classes.size();
  clf.topic_sets.assign(F, TopicSet{});
  clf.pair_choices.assign(F, std::nullopt);
  clf.exhaustive_sets.assign(F, {});

  std::vector<ClassTopicProfile> profiles(F);
  for (std::size_t f = 0; f < F; ++f) {
    if (!taxonomy.fine_classes[f].seen) continue;
    profiles[f] = class_topic_profile(model, doc_labels, static_cast<FineClassId>(f));
  }

  if (options.cross_class_norm) {
    // Rescale each topic by its total mass across seen classes, then put the
    // profiles back on the simplex.
    std::vector<double> column(static_cast<std::size_t>(model.num_topics), 0.0);
    for (std::size_t f = 0; f < F; ++f)
      if (taxonomy.fine_classes[f].seen)
        for (int k = 0; k < model.num_topics; ++k) column[k] += profiles[f].profile[k];
    for (std::size_t f = 0; f < F; ++f) {
      if (!taxonomy.fine_classes[f].seen) continue;
      double sum = 0.0;
      for (int k = 0; k < model.num_topics; ++k) {
        if (column[k] > 0.0) profiles[f].profile[k] /= column[k];
        sum += profiles[f].profile[k];
      }
      if (sum > 0.0)
        for (double& v : profiles[f].profile) v /= sum;
    }
  }

  for (std::size_t f = 0; f < F; ++f)
    if (taxonomy.fine_classes[f].seen) clf.topic_sets[f] = signature_set(profiles[f]);
  return clf;
}

void infer_unseen_sets(ZeroShotClassifier& classifier) {
  const Taxonomy& tax = classifier.taxonomy;
  for (std::size_t f = 0; f < tax.fine_classes.size(); ++f) {
    if (tax.fine_classes[f].seen) continue;
    const auto fine_id = static_cast<FineClassId>(f);
    const std::vector<FineClassId> siblings = tax.seen_siblings(fine_id);
    if (siblings.size() < 2)
      throw Error(ErrorCode::NoPairAvailable,
                  "class '" + tax.fine_classes[f].name + "' needs two seen siblings, has " +
                      std::to_string(siblings.size()));

    auto union_of = [&](FineClassId g, FineClassId h) {
      return classifier.topic_sets[g] | classifier.topic_sets[h];
    };

    switch (classifier.options.policy) {
      case PairPolicy::SeededRandom: {
        Rng rng(derive_seed(classifier.options.rng_seed, static_cast<std::uint64_t>(f)));
        const std::size_t i = rng.next_index(siblings.size());
        std::size_t j = rng.next_index(siblings.size() - 1);
        if (j >= i) ++j;
        const PairChoice pair{siblings[i], siblings[j]};
        classifier.pair_choices[f] = pair;
        classifier.topic_sets[f] = union_of(pair.g, pair.h);
        break;
      }
      case PairPolicy::Fixed: {
        const auto it = classifier.options.fixed_pairs.find(fine_id);
        if (it == classifier.options.fixed_pairs.end())
          throw Error(ErrorCode::ConfigError,
                      "no fixed pair for class '" + tax.fine_classes[f].name + "'");
        const PairChoice pair = it->second;
        const bool ok = pair.g != pair.h &&
                        std::find(siblings.begin(), siblings.end(), pair.g) != siblings.end() &&
                        std::find(siblings.begin(), siblings.end(), pair.h) != siblings.end();
        if (!ok)
          throw Error(ErrorCode::ConfigError,
                      "fixed pair for class '" + tax.fine_classes[f].name +
                          "' must name two distinct seen siblings");
        classifier.pair_choices[f] = pair;
        classifier.topic_sets[f] = union_of(pair.g, pair.h);
        break;
      }
      case PairPolicy::Exhaustive: {
        // Every sibling pair stays a candidate; scoring takes the best one
        // per test histogram.
        for (std::size_t a = 0; a < siblings.size(); ++a)
          for (std::size_t b = a + 1; b < siblings.size(); ++b)
            classifier.exhaustive_sets[f].push_back(union_of(siblings[a], siblings[b]));
        classifier.topic_sets[f] = TopicSet{};
        break;
      }
    }
  }
}

std::vector<Prediction> classify(const ZeroShotClassifier& classifier, const PlsaModel& model,
                                 const BowHistogram& histogram, const EmConfig& em_cfg) {
  if (model.num_topics != classifier.num_topics)
    throw Error(ErrorCode::DimensionMismatch, "model and classifier disagree on topic count");
  const std::vector<double> theta = fold_in(model, histogram, em_cfg);
  return score_topic_mixture(classifier, theta);
}

std::vector<Prediction> score_topic_mixture(const ZeroShotClassifier& classifier,
                                            std::span<const double> topic_mixture) {
  classifier.validate();
  if (topic_mixture.size() != static_cast<std::size_t>(classifier.num_topics))
    throw Error(ErrorCode::DimensionMismatch, "topic mixture does not match the classifier");

  const std::size_t F = classifier.taxonomy.fine_classes.size();
  std::vector<Prediction> out(F);
  double total = 0.0;
  for (std::size_t f = 0; f < F; ++f) {
    out[f].class_id = static_cast<FineClassId>(f);
    double raw;
    if (!classifier.exhaustive_sets[f].empty()) {
      raw = 0.0;
      for (TopicSet s : classifier.exhaustive_sets[f])
        raw = std::max(raw,
                       set_score(s, topic_mixture, classifier.options.normalize_by_set_size));
    } else {
      raw = set_score(classifier.topic_sets[f], topic_mixture,
                      classifier.options.normalize_by_set_size);
    }
    out[f].score = raw;
    total += raw;
  }
  if (total > 0.0)
    for (Prediction& p : out) p.score /= total;

  std::stable_sort(out.begin(), out.end(), [](const Prediction& a, const Prediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.class_id < b.class_id;
  });
  return out;
}

void save_classifier(const ZeroShotClassifier& classifier, const std::filesystem::path& path) {
  classifier.validate();
  const Taxonomy& tax = classifier.taxonomy;

  nlohmann::json j;
  j["num_topics"] = classifier.num_topics;
  j["taxonomy"] = taxonomy_to_text(tax);

  nlohmann::json sets = nlohmann::json::object();
  for (std::size_t f = 0; f < tax.fine_classes.size(); ++f)
    if (!classifier.topic_sets[f].empty())
      sets[tax.fine_classes[f].name] = classifier.topic_sets[f].to_hex();
  j["topic_sets"] = sets;

  nlohmann::json pairs = nlohmann::json::object();
  for (std::size_t f = 0; f < tax.fine_classes.size(); ++f)
    if (classifier.pair_choices[f])
      pairs[tax.fine_classes[f].name] = {tax.fine_classes[classifier.pair_choices[f]->g].name,
                                         tax.fine_classes[classifier.pair_choices[f]->h].name};
  j["pair_choices"] = pairs;

  nlohmann::json candidates = nlohmann::json::object();
  for (std::size_t f = 0; f < tax.fine_classes.size(); ++f) {
    if (classifier.exhaustive_sets[f].empty()) continue;
    std::vector<std::string> hex;
    for (TopicSet s : classifier.exhaustive_sets[f]) hex.push_back(s.to_hex());
    candidates[tax.fine_classes[f].name] = hex;
  }
  j["exhaustive_sets"] = candidates;

  nlohmann::json fixed = nlohmann::json::object();
  for (const auto& [fine_id, pair] : classifier.options.fixed_pairs)
    fixed[tax.fine_classes[fine_id].name] = {tax.fine_classes[pair.g].name,
                                             tax.fine_classes[pair.h].name};
  j["options"] = {{"policy", pair_policy_name(classifier.options.policy)},
                  {"rng_seed", classifier.options.rng_seed},
                  {"cross_class_norm", classifier.options.cross_class_norm},
                  {"normalize_by_set_size", classifier.options.normalize_by_set_size},
                  {"fixed_pairs", fixed}};

  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

ZeroShotClassifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open classifier " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "bad classifier " + path.string() + ": " + e.what());
  }

  ZeroShotClassifier clf;
  try {
    clf.num_topics = j.at("num_topics").get<int>();
    clf.taxonomy = parse_taxonomy(j.at("taxonomy").get<std::string>(), TaxonomyMode::Permissive);
    const std::size_t F = clf.taxonomy.fine_classes.size();
    clf.topic_sets.assign(F, TopicSet{});
    clf.pair_choices.assign(F, std::nullopt);
    clf.exhaustive_sets.assign(F, {});

    auto fine_id_of = [&](const std::string& name) {
      const int f = clf.taxonomy.find_fine(name);
      if (f < 0)
        throw Error(ErrorCode::ParseError, "classifier names unknown class '" + name + "'");
      return static_cast<FineClassId>(f);
    };

    for (const auto& [name, hex] : j.at("topic_sets").items())
      clf.topic_sets[fine_id_of(name)] = TopicSet::from_hex(hex.get<std::string>());
    for (const auto& [name, pair] : j.at("pair_choices").items())
      clf.pair_choices[fine_id_of(name)] =
          PairChoice{fine_id_of(pair.at(0).get<std::string>()),
                     fine_id_of(pair.at(1).get<std::string>())};
    for (const auto& [name, list] : j.at("exhaustive_sets").items())
      for (const auto& hex : list)
        clf.exhaustive_sets[fine_id_of(name)].push_back(TopicSet::from_hex(hex.get<std::string>()));

    const auto& opt = j.at("options");
    clf.options.policy = pair_policy_from_name(opt.at("policy").get<std::string>());
    clf.options.rng_seed = opt.value("rng_seed", std::uint64_t{0});
    clf.options.cross_class_norm = opt.value("cross_class_norm", false);
    clf.options.normalize_by_set_size = opt.value("normalize_by_set_size", false);
    for (const auto& [name, pair] : opt.value("fixed_pairs", nlohmann::json::object()).items())
      clf.options.fixed_pairs[fine_id_of(name)] =
          PairChoice{fine_id_of(pair.at(0).get<std::string>()),
                     fine_id_of(pair.at(1).get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "bad classifier " + path.string() + ": " + e.what());
  }

  clf.validate();
  return clf;
}

}  // namespace hic
