#include "hic/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "hic/error.hpp"

namespace hic {

namespace {

using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const char* dataset_kind_name(DatasetSpec::Kind k) {
  switch (k) {
    case DatasetSpec::Kind::Cifar100: return "cifar100";
    case DatasetSpec::Kind::ImageFolder: return "image-folder";
    case DatasetSpec::Kind::SyntheticBow: return "synthetic-bow";
    case DatasetSpec::Kind::SyntheticImages: return "synthetic-images";
  }
  return "synthetic-bow";
}

DatasetSpec::Kind dataset_kind_from_name(const std::string& name) {
  if (name == "cifar100") return DatasetSpec::Kind::Cifar100;
  if (name == "image-folder") return DatasetSpec::Kind::ImageFolder;
  if (name == "synthetic-bow") return DatasetSpec::Kind::SyntheticBow;
  if (name == "synthetic-images") return DatasetSpec::Kind::SyntheticImages;
  throw Error(ErrorCode::ConfigError,
              "unknown dataset kind '" + name +
                  "' (cifar100, image-folder, synthetic-bow, synthetic-images)");
}

const char* overlap_name(TopicOverlap o) {
  return o == TopicOverlap::Disjoint ? "disjoint" : "shared-private";
}

TopicOverlap overlap_from_name(const std::string& name) {
  if (name == "disjoint") return TopicOverlap::Disjoint;
  if (name == "shared-private") return TopicOverlap::SharedPrivate;
  throw Error(ErrorCode::ConfigError,
              "unknown topic overlap '" + name + "' (disjoint, shared-private)");
}

const char* mode_name(TaxonomyMode m) {
  return m == TaxonomyMode::Strict ? "strict" : "permissive";
}

TaxonomyMode mode_from_name(const std::string& name) {
  if (name == "strict") return TaxonomyMode::Strict;
  if (name == "permissive") return TaxonomyMode::Permissive;
  throw Error(ErrorCode::ConfigError, "unknown taxonomy mode '" + name + "' (strict, permissive)");
}

json config_to_json_object(const ExperimentConfig& cfg) {
  json j;
  json ds;
  ds["kind"] = dataset_kind_name(cfg.dataset.kind);
  ds["path"] = cfg.dataset.path.string();
  ds["taxonomy_file"] = cfg.dataset.taxonomy_file.string();
  ds["taxonomy_mode"] = mode_name(cfg.dataset.taxonomy_mode);
  ds["train_per_class"] = cfg.dataset.train_per_class;
  ds["synth"] = {{"num_topics", cfg.dataset.synth.num_topics},
                 {"vocab_size", cfg.dataset.synth.vocab_size},
                 {"coarse_count", cfg.dataset.synth.coarse_count},
                 {"fine_per_coarse", cfg.dataset.synth.fine_per_coarse},
                 {"docs_per_class", cfg.dataset.synth.docs_per_class},
                 {"tokens_per_doc", cfg.dataset.synth.tokens_per_doc},
                 {"topic_overlap", overlap_name(cfg.dataset.synth.topic_overlap)},
                 {"train_per_class", cfg.dataset.synth.train_per_class}};
  ds["synth_images"] = {{"coarse_count", cfg.dataset.synth_images.coarse_count},
                        {"fine_per_coarse", cfg.dataset.synth_images.fine_per_coarse},
                        {"images_per_class", cfg.dataset.synth_images.images_per_class},
                        {"width", cfg.dataset.synth_images.width},
                        {"height", cfg.dataset.synth_images.height},
                        {"noise", cfg.dataset.synth_images.noise},
                        {"train_per_class", cfg.dataset.synth_images.train_per_class}};
  j["dataset"] = ds;

  j["phog"] = {{"levels", cfg.phog.levels},
               {"bins", cfg.phog.bins},
               {"angle_range", cfg.phog.angle_range},
               {"edge_threshold", cfg.phog.edge_threshold}};
  j["forest"] = {{"num_trees", cfg.forest.num_trees},
                 {"max_leaves_per_tree", cfg.forest.max_leaves_per_tree},
                 {"variant", forest_variant_name(cfg.forest.variant)},
                 {"coarse_trees", cfg.forest.coarse_trees},
                 {"candidate_splits_per_node", cfg.forest.candidate_splits_per_node},
                 {"min_samples_per_leaf", cfg.forest.min_samples_per_leaf}};
  j["num_topics"] = cfg.num_topics;
  j["em"] = {{"max_iters", cfg.em.max_iters},
             {"rel_tol", cfg.em.rel_tol},
             {"fold_in_iters", cfg.em.fold_in_iters},
             {"restarts", cfg.em.restarts}};
  j["q"] = cfg.q;
  j["pair_policy"] = pair_policy_name(cfg.pair_policy);
  json fixed = json::object();
  for (const auto& [name, pair] : cfg.fixed_pairs) fixed[name] = {pair.first, pair.second};
  j["fixed_pairs"] = fixed;
  j["cross_class_norm"] = cfg.cross_class_norm;
  j["normalize_by_set_size"] = cfg.normalize_by_set_size;
  j["master_seed"] = cfg.master_seed;
  j["out_dir"] = cfg.out_dir.string();
  j["use_checkpoints"] = cfg.use_checkpoints;
  return j;
}

ExperimentConfig config_from_json_object(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("dataset")) {
    const json& ds = j.at("dataset");
    cfg.dataset.kind = dataset_kind_from_name(ds.value("kind", "synthetic-bow"));
    cfg.dataset.path = ds.value("path", std::string{});
    cfg.dataset.taxonomy_file = ds.value("taxonomy_file", std::string{});
    cfg.dataset.taxonomy_mode = mode_from_name(ds.value("taxonomy_mode", "strict"));
    cfg.dataset.train_per_class = ds.value("train_per_class", cfg.dataset.train_per_class);
    if (ds.contains("synth")) {
      const json& s = ds.at("synth");
      auto& sp = cfg.dataset.synth;
      sp.num_topics = s.value("num_topics", sp.num_topics);
      sp.vocab_size = s.value("vocab_size", sp.vocab_size);
      sp.coarse_count = s.value("coarse_count", sp.coarse_count);
      sp.fine_per_coarse = s.value("fine_per_coarse", sp.fine_per_coarse);
      sp.docs_per_class = s.value("docs_per_class", sp.docs_per_class);
      sp.tokens_per_doc = s.value("tokens_per_doc", sp.tokens_per_doc);
      sp.topic_overlap = overlap_from_name(s.value("topic_overlap", "shared-private"));
      sp.train_per_class = s.value("train_per_class", sp.train_per_class);
    }
    if (ds.contains("synth_images")) {
      const json& s = ds.at("synth_images");
      auto& sp = cfg.dataset.synth_images;
      sp.coarse_count = s.value("coarse_count", sp.coarse_count);
      sp.fine_per_coarse = s.value("fine_per_coarse", sp.fine_per_coarse);
      sp.images_per_class = s.value("images_per_class", sp.images_per_class);
      sp.width = s.value("width", sp.width);
      sp.height = s.value("height", sp.height);
      sp.noise = s.value("noise", sp.noise);
      sp.train_per_class = s.value("train_per_class", sp.train_per_class);
    }
  }
  if (j.contains("phog")) {
    const json& p = j.at("phog");
    cfg.phog.levels = p.value("levels", cfg.phog.levels);
    cfg.phog.bins = p.value("bins", cfg.phog.bins);
    cfg.phog.angle_range = p.value("angle_range", cfg.phog.angle_range);
    cfg.phog.edge_threshold = p.value("edge_threshold", cfg.phog.edge_threshold);
  }
  if (j.contains("forest")) {
    const json& f = j.at("forest");
    cfg.forest.num_trees = f.value("num_trees", cfg.forest.num_trees);
    cfg.forest.max_leaves_per_tree = f.value("max_leaves_per_tree", cfg.forest.max_leaves_per_tree);
    cfg.forest.variant = forest_variant_from_name(f.value("variant", "fine"));
    cfg.forest.coarse_trees = f.value("coarse_trees", cfg.forest.coarse_trees);
    cfg.forest.candidate_splits_per_node =
        f.value("candidate_splits_per_node", cfg.forest.candidate_splits_per_node);
    cfg.forest.min_samples_per_leaf = f.value("min_samples_per_leaf", cfg.forest.min_samples_per_leaf);
  }
  cfg.num_topics = j.value("num_topics", cfg.num_topics);
  if (j.contains("em")) {
    const json& e = j.at("em");
    cfg.em.max_iters = e.value("max_iters", cfg.em.max_iters);
    cfg.em.rel_tol = e.value("rel_tol", cfg.em.rel_tol);
    cfg.em.fold_in_iters = e.value("fold_in_iters", cfg.em.fold_in_iters);
    cfg.em.restarts = e.value("restarts", cfg.em.restarts);
  }
  cfg.q = j.value("q", cfg.q);
  cfg.pair_policy = pair_policy_from_name(j.value("pair_policy", "seeded-random"));
  for (const auto& [name, pair] : j.value("fixed_pairs", json::object()).items())
    cfg.fixed_pairs[name] = {pair.at(0).get<std::string>(), pair.at(1).get<std::string>()};
  cfg.cross_class_norm = j.value("cross_class_norm", false);
  cfg.normalize_by_set_size = j.value("normalize_by_set_size", false);
  cfg.master_seed = j.value("master_seed", std::uint64_t{0});
  cfg.out_dir = j.value("out_dir", std::string{});
  cfg.use_checkpoints = j.value("use_checkpoints", false);
  return cfg;
}

// --- pipeline ---------------------------------------------------------------

enum class StopAfter { Extract, Codebook, Plsa, Classifier, Classify };

struct LoadedData {
  Dataset ds;
  std::vector<FineClassId> designated;  // preferred unseen picks
};

LoadedData load_dataset(const ExperimentConfig& cfg) {
  LoadedData out;
  switch (cfg.dataset.kind) {
    case DatasetSpec::Kind::Cifar100:
      out.ds = load_cifar100(cfg.dataset.path, cfg.dataset.train_per_class,
                             cfg.stage_seed(ExperimentConfig::SeedSplit));
      break;
    case DatasetSpec::Kind::ImageFolder: {
      if (cfg.dataset.taxonomy_file.empty())
        throw Error(ErrorCode::ConfigError, "image folders need a taxonomy file");
      Taxonomy tax = load_taxonomy_file(cfg.dataset.taxonomy_file, cfg.dataset.taxonomy_mode);
      SplitSpec split;
      split.train_per_class = cfg.dataset.train_per_class;
      out.ds = load_image_folder(cfg.dataset.path, tax, split,
                                 cfg.stage_seed(ExperimentConfig::SeedSplit));
      break;
    }
    case DatasetSpec::Kind::SyntheticBow: {
      SyntheticSpec spec = cfg.dataset.synth;
      spec.rng_seed = cfg.stage_seed(ExperimentConfig::SeedSplit);
      SyntheticData data = generate_synthetic(spec);
      out.ds = std::move(data.dataset);
      out.designated = std::move(data.designated_unseen);
      break;
    }
    case DatasetSpec::Kind::SyntheticImages: {
      SyntheticImageSpec spec = cfg.dataset.synth_images;
      spec.rng_seed = cfg.stage_seed(ExperimentConfig::SeedSplit);
      out.ds = generate_synthetic_images(spec);
      break;
    }
  }
  // Classes flagged unseen by the source (taxonomy file markers) are the
  // preferred picks when q hides classes.
  for (std::size_t f = 0; f < out.ds.taxonomy.fine_classes.size(); ++f)
    if (!out.ds.taxonomy.fine_classes[f].seen)
      out.designated.push_back(static_cast<FineClassId>(f));
  mark_unseen(out.ds.taxonomy, cfg.q, cfg.stage_seed(ExperimentConfig::SeedUnseen),
              out.designated);
  return out;
}

struct Pipeline {
  const ExperimentConfig& cfg;
  bool reuse_upstream;

  Dataset ds;
  std::vector<std::size_t> seen_train, test_items, unseen_train;
  std::vector<ImageFeatures> train_features;  // parallel to seen_train (Images only)
  Codebook codebook;
  Corpus corpus;
  PlsaModel model;
  EmConfig em;
  ZeroShotClassifier clf;
  StageTimings timings;
  LeakAudit audit;

  bool writing() const { return !cfg.out_dir.empty(); }
  std::filesystem::path artifact(const char* name) const { return cfg.out_dir / name; }
  bool reusable(const char* name) const {
    return reuse_upstream && writing() && std::filesystem::exists(artifact(name));
  }
};

void guard_out_dir(Pipeline& p) {
  if (!p.writing()) return;
  std::filesystem::create_directories(p.cfg.out_dir);
  const std::filesystem::path cfg_path = p.artifact("config.json");
  const std::string current = experiment_config_to_json(p.cfg);
  if (std::filesystem::exists(cfg_path)) {
    const ExperimentConfig existing = parse_experiment_config(read_text_file(cfg_path));
    if (existing.fingerprint() != p.cfg.fingerprint())
      throw Error(ErrorCode::ConfigError,
                  p.cfg.out_dir.string() + " holds artifacts for a different configuration");
  }
  write_text_file(cfg_path, current + "\n");
}

void stage_load(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  LoadedData loaded = load_dataset(p.cfg);
  p.ds = std::move(loaded.ds);
  for (std::size_t i = 0; i < p.ds.size(); ++i) {
    if (p.ds.is_train(i)) {
      if (p.ds.is_seen(i))
        p.seen_train.push_back(i);
      else
        p.unseen_train.push_back(i);
    } else {
      p.test_items.push_back(i);
    }
  }
  if (p.seen_train.empty())
    throw Error(ErrorCode::EmptyTrainingSet, "no seen-class training items after the split");
  p.timings.load_s = seconds_since(t0);
  if (p.writing()) write_split_manifest(p.ds, p.artifact("manifest.csv"));
}

void stage_extract(Pipeline& p) {
  if (p.ds.kind() != Dataset::ItemKind::Images) return;
  const auto t0 = std::chrono::steady_clock::now();
  if (p.reusable("features_train.phog")) {
    p.train_features = read_descriptor_dump(p.artifact("features_train.phog"));
    if (p.train_features.size() != p.seen_train.size())
      throw Error(ErrorCode::ConfigError, "features_train.phog does not match the current split");
  } else {
    p.train_features.reserve(p.seen_train.size());
    for (std::size_t i : p.seen_train) p.train_features.push_back(extract(p.ds.image(i), p.cfg.phog));
    if (p.writing())
      write_descriptor_dump(p.artifact("features_train.phog"), p.train_features, p.cfg.phog);
  }
  p.timings.extract_s = seconds_since(t0);
}

// Labeled descriptors for the codebook; Features datasets read through the
// access log, Images reuse the extracted set.
std::vector<LabeledDescriptor> gather_labeled(Pipeline& p) {
  std::vector<LabeledDescriptor> out;
  for (std::size_t j = 0; j < p.seen_train.size(); ++j) {
    const std::size_t i = p.seen_train[j];
    const ImageFeatures& feats = p.ds.kind() == Dataset::ItemKind::Images
                                     ? p.train_features[j]
                                     : p.ds.features(i);
    const FineClassId fine = p.ds.fine_labels[i];
    const CoarseClassId coarse = p.ds.taxonomy.fine_classes[fine].coarse_id;
    for (const Descriptor& d : feats.descriptors) out.push_back({d, fine, coarse});
  }
  return out;
}

void stage_codebook(Pipeline& p) {
  if (p.ds.kind() == Dataset::ItemKind::Histograms) return;
  const auto t0 = std::chrono::steady_clock::now();
  if (p.reusable("codebook.hicf")) {
    p.codebook = load_codebook(p.artifact("codebook.hicf"));
    if (p.codebook.dim != p.cfg.phog.bins)
      throw Error(ErrorCode::ConfigError, "codebook.hicf does not match the descriptor length");
  } else {
    ForestConfig fc = p.cfg.forest;
    fc.rng_seed = p.cfg.stage_seed(ExperimentConfig::SeedForest);
    const std::vector<LabeledDescriptor> data = gather_labeled(p);
    p.codebook = train(data, fc);
    if (p.writing()) save_codebook(p.codebook, p.artifact("codebook.hicf"));
  }
  p.timings.codebook_s = seconds_since(t0);
}

void stage_corpus(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  if (p.reusable("corpus_train.csv")) {
    p.corpus = read_corpus_csv(p.artifact("corpus_train.csv"), p.ds.taxonomy);
    if (p.corpus.size() != p.seen_train.size())
      throw Error(ErrorCode::ConfigError, "corpus_train.csv does not match the current split");
  } else {
    if (p.ds.kind() == Dataset::ItemKind::Histograms) {
      p.corpus.vocab_size = p.ds.vocab_size;
      for (std::size_t i : p.seen_train) p.corpus.docs.push_back(p.ds.histogram(i));
    } else {
      p.corpus.vocab_size = p.codebook.vocab_size;
      for (std::size_t j = 0; j < p.seen_train.size(); ++j) {
        const ImageFeatures& feats = p.ds.kind() == Dataset::ItemKind::Images
                                         ? p.train_features[j]
                                         : p.ds.features(p.seen_train[j]);
        p.corpus.docs.push_back(quantize(feats, p.codebook));
      }
    }
    for (std::size_t i : p.seen_train) {
      p.corpus.doc_ids.push_back(p.ds.item_ids[i]);
      p.corpus.labels.push_back(p.ds.fine_labels[i]);
    }
    if (p.writing()) write_corpus_csv(p.corpus, p.ds.taxonomy, p.artifact("corpus_train.csv"));
  }
  p.corpus.validate();
  p.timings.quantize_s = seconds_since(t0);
}

void stage_plsa(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  p.em = p.cfg.em;
  p.em.rng_seed = p.cfg.stage_seed(ExperimentConfig::SeedPlsa);
  if (p.reusable("plsa.bin")) {
    p.model = load_model(p.artifact("plsa.bin"));
    if (p.model.num_topics != p.cfg.num_topics || p.model.vocab_size != p.corpus.vocab_size ||
        p.model.num_docs != static_cast<int>(p.corpus.size()))
      throw Error(ErrorCode::ConfigError, "plsa.bin does not match the current corpus");
  } else {
    p.model = fit(p.corpus, p.cfg.num_topics, p.em);
    if (p.writing()) save_model(p.model, p.artifact("plsa.bin"), p.em);
  }
  p.timings.plsa_s = seconds_since(t0);
}

void stage_classifier(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  if (p.reusable("classifier.json")) {
    p.clf = load_classifier(p.artifact("classifier.json"));
    bool same = p.clf.taxonomy.fine_classes.size() == p.ds.taxonomy.fine_classes.size();
    for (std::size_t f = 0; same && f < p.ds.taxonomy.fine_classes.size(); ++f)
      same = p.clf.taxonomy.fine_classes[f].name == p.ds.taxonomy.fine_classes[f].name &&
             p.clf.taxonomy.fine_classes[f].seen == p.ds.taxonomy.fine_classes[f].seen;
    if (!same)
      throw Error(ErrorCode::ConfigError, "classifier.json does not match the current taxonomy");
  } else {
    ZeroShotOptions options;
    options.policy = p.cfg.pair_policy;
    options.rng_seed = p.cfg.stage_seed(ExperimentConfig::SeedPairs);
    options.cross_class_norm = p.cfg.cross_class_norm;
    options.normalize_by_set_size = p.cfg.normalize_by_set_size;
    for (const auto& [name, pair] : p.cfg.fixed_pairs) {
      const int f = p.ds.taxonomy.find_fine(name);
      const int g = p.ds.taxonomy.find_fine(pair.first);
      const int h = p.ds.taxonomy.find_fine(pair.second);
      if (f < 0 || g < 0 || h < 0)
        throw Error(ErrorCode::ConfigError, "fixed pair names unknown class for '" + name + "'");
      options.fixed_pairs[f] = PairChoice{g, h};
    }
    p.clf = build_seen_sets(p.model, p.ds.taxonomy, p.corpus.labels, options);
    infer_unseen_sets(p.clf);
    if (p.writing()) save_classifier(p.clf, p.artifact("classifier.json"));
  }
  p.timings.classifier_s = seconds_since(t0);
}

std::uint64_t unseen_train_reads(const Pipeline& p) {
  std::uint64_t total = 0;
  for (std::size_t i : p.unseen_train) total += p.ds.reads_of(i);
  return total;
}

EvaluationReport stage_classify(Pipeline& p, std::string* predictions_csv) {
  p.audit.checked = !p.unseen_train.empty();
  p.audit.unseen_train_reads_before_classify = unseen_train_reads(p);

  const auto t0 = std::chrono::steady_clock::now();
  const Taxonomy& tax = p.ds.taxonomy;
  const int F = static_cast<int>(tax.fine_classes.size());

  EvaluationReport rep;
  rep.config_fingerprint = p.cfg.fingerprint();
  rep.num_fine_classes = F;
  for (const auto& fine : tax.fine_classes) rep.class_names.push_back(fine.name);
  rep.per_class_accuracy.assign(F, 0.0);
  rep.per_class_test_counts.assign(F, 0);
  rep.confusion.assign(static_cast<std::size_t>(F) * F, 0);

  std::ostringstream pred_rows;
  std::vector<std::uint32_t> per_class_correct(F, 0);
  std::size_t correct = 0, seen_total = 0, seen_correct = 0, unseen_total = 0, unseen_correct = 0;

  for (std::size_t i : p.test_items) {
    BowHistogram hist;
    if (p.ds.kind() == Dataset::ItemKind::Histograms) {
      hist = p.ds.histogram(i);
    } else if (p.ds.kind() == Dataset::ItemKind::Images) {
      hist = quantize(extract(p.ds.image(i), p.cfg.phog), p.codebook);
    } else {
      hist = quantize(p.ds.features(i), p.codebook);
    }
    const std::vector<Prediction> ranked = classify(p.clf, p.model, hist, p.em);
    const FineClassId truth = p.ds.fine_labels[i];
    const FineClassId predicted = ranked[0].class_id;

    rep.confusion[static_cast<std::size_t>(truth) * F + predicted]++;
    rep.per_class_test_counts[truth]++;
    const bool hit = predicted == truth;
    if (hit) {
      ++correct;
      ++per_class_correct[truth];
    }
    if (tax.fine_classes[truth].seen) {
      ++seen_total;
      seen_correct += hit;
    } else {
      ++unseen_total;
      unseen_correct += hit;
    }
    if (predictions_csv)
      pred_rows << p.ds.item_ids[i] << ',' << tax.fine_classes[truth].name << ','
                << tax.fine_classes[predicted].name << ',' << fmt6(ranked[0].score) << '\n';
  }
  p.timings.classify_s = seconds_since(t0);

  if (p.test_items.empty())
    throw Error(ErrorCode::EmptyCorpus, "the split left no test items to classify");
  rep.overall_accuracy = static_cast<double>(correct) / p.test_items.size();
  rep.seen_accuracy = seen_total ? static_cast<double>(seen_correct) / seen_total : 0.0;
  if (unseen_total) rep.unseen_accuracy = static_cast<double>(unseen_correct) / unseen_total;
  for (int f = 0; f < F; ++f)
    if (rep.per_class_test_counts[f])
      rep.per_class_accuracy[f] =
          static_cast<double>(per_class_correct[f]) / rep.per_class_test_counts[f];

  for (int f = 0; f < F; ++f) {
    if (tax.fine_classes[f].seen) continue;
    rep.unseen_class_names.push_back(tax.fine_classes[f].name);
    if (p.clf.pair_choices[f])
      rep.pair_choices[tax.fine_classes[f].name] = {
          tax.fine_classes[p.clf.pair_choices[f]->g].name,
          tax.fine_classes[p.clf.pair_choices[f]->h].name};
  }

  p.audit.unseen_train_reads_total = unseen_train_reads(p);
  p.audit.passed = p.audit.unseen_train_reads_before_classify == 0 &&
                   p.audit.unseen_train_reads_total == 0;
  rep.leak_audit = p.audit;
  rep.timings = p.timings;
  rep.train_doc_count = p.seen_train.size();
  rep.test_doc_count = p.test_items.size();
  rep.vocab_size = p.corpus.vocab_size;
  rep.plsa_iterations = static_cast<int>(p.model.loglik_trace.size());
  rep.final_loglik = p.model.loglik_trace.empty() ? 0.0 : p.model.loglik_trace.back();

  if (predictions_csv)
    *predictions_csv = "image_id,true_class,predicted_class,score\n" + pred_rows.str();
  return rep;
}

EvaluationReport run_internal(const ExperimentConfig& cfg, StopAfter stop, bool reuse_upstream,
                              std::string* predictions_csv) {
  cfg.validate();
  Pipeline p{cfg, reuse_upstream};
  guard_out_dir(p);
  stage_load(p);

  if (stop == StopAfter::Extract && p.ds.kind() != Dataset::ItemKind::Images)
    throw Error(ErrorCode::ConfigError, "this dataset has no images to extract descriptors from");
  stage_extract(p);
  if (stop == StopAfter::Extract) return {};
  stage_codebook(p);
  if (stop == StopAfter::Codebook) return {};
  stage_corpus(p);
  stage_plsa(p);
  if (stop == StopAfter::Plsa) return {};
  stage_classifier(p);
  if (stop == StopAfter::Classifier) return {};

  std::string local_csv;
  std::string* csv = predictions_csv ? predictions_csv : (p.writing() ? &local_csv : nullptr);
  EvaluationReport rep = stage_classify(p, csv);
  if (p.writing()) {
    write_text_file(p.artifact("predictions.csv"), *csv);
    write_text_file(p.artifact("report.json"), report_to_json(rep) + "\n");
    write_text_file(p.artifact("report.txt"), report_to_text(rep));
  }
  return rep;
}

}  // namespace

void ExperimentConfig::validate() const {
  phog.validate();
  forest.validate();
  em.validate();
  if (num_topics < 1) throw Error(ErrorCode::ConfigError, "topic count must be >= 1");
  if (q < 0) throw Error(ErrorCode::ConfigError, "q must be >= 0");
  if (dataset.kind == DatasetSpec::Kind::SyntheticBow) dataset.synth.validate();
  if (dataset.kind == DatasetSpec::Kind::SyntheticImages) dataset.synth_images.validate();
  if ((dataset.kind == DatasetSpec::Kind::Cifar100 ||
       dataset.kind == DatasetSpec::Kind::ImageFolder) &&
      dataset.train_per_class < 1)
    throw Error(ErrorCode::ConfigError, "train split needs at least one item per class");
}

std::string ExperimentConfig::fingerprint() const {
  json j = config_to_json_object(*this);
  j.erase("out_dir");
  j.erase("use_checkpoints");
  return hex64(fnv1a(j.dump()));
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad experiment config: ") + e.what());
  }
  try {
    return config_from_json_object(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad experiment config: ") + e.what());
  }
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  return config_to_json_object(cfg).dump(2);
}

std::string report_to_json(const EvaluationReport& report, bool include_timings) {
  json j;
  j["config_fingerprint"] = report.config_fingerprint;
  j["num_fine_classes"] = report.num_fine_classes;
  j["class_names"] = report.class_names;
  j["overall_accuracy"] = report.overall_accuracy;
  j["seen_accuracy"] = report.seen_accuracy;
  if (report.unseen_accuracy)
    j["unseen_accuracy"] = *report.unseen_accuracy;
  else
    j["unseen_accuracy"] = nullptr;
  j["per_class_accuracy"] = report.per_class_accuracy;
  j["per_class_test_counts"] = report.per_class_test_counts;
  j["confusion"] = report.confusion;
  j["unseen_class_names"] = report.unseen_class_names;
  json pairs = json::object();
  for (const auto& [name, pair] : report.pair_choices) pairs[name] = {pair.first, pair.second};
  j["pair_choices"] = pairs;
  j["leak_audit"] = {{"checked", report.leak_audit.checked},
                     {"unseen_train_reads_before_classify",
                      report.leak_audit.unseen_train_reads_before_classify},
                     {"unseen_train_reads_total", report.leak_audit.unseen_train_reads_total},
                     {"passed", report.leak_audit.passed}};
  j["counts"] = {{"train_docs", report.train_doc_count},
                 {"test_docs", report.test_doc_count},
                 {"vocab_size", report.vocab_size},
                 {"plsa_iterations", report.plsa_iterations},
                 {"final_loglik", report.final_loglik}};
  if (include_timings)
    j["timings"] = {{"load_s", report.timings.load_s},
                    {"extract_s", report.timings.extract_s},
                    {"codebook_s", report.timings.codebook_s},
                    {"quantize_s", report.timings.quantize_s},
                    {"plsa_s", report.timings.plsa_s},
                    {"classifier_s", report.timings.classifier_s},
                    {"classify_s", report.timings.classify_s}};
  return j.dump(2);
}

EvaluationReport report_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad report: ") + e.what());
  }
  EvaluationReport rep;
  try {
    rep.config_fingerprint = j.value("config_fingerprint", std::string{});
    rep.num_fine_classes = j.at("num_fine_classes").get<int>();
    rep.class_names = j.at("class_names").get<std::vector<std::string>>();
    rep.overall_accuracy = j.at("overall_accuracy").get<double>();
    rep.seen_accuracy = j.at("seen_accuracy").get<double>();
    if (!j.at("unseen_accuracy").is_null())
      rep.unseen_accuracy = j.at("unseen_accuracy").get<double>();
    rep.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    rep.per_class_test_counts = j.at("per_class_test_counts").get<std::vector<std::uint32_t>>();
    rep.confusion = j.at("confusion").get<std::vector<std::uint32_t>>();
    rep.unseen_class_names = j.at("unseen_class_names").get<std::vector<std::string>>();
    for (const auto& [name, pair] : j.at("pair_choices").items())
      rep.pair_choices[name] = {pair.at(0).get<std::string>(), pair.at(1).get<std::string>()};
    const json& audit = j.at("leak_audit");
    rep.leak_audit.checked = audit.at("checked").get<bool>();
    rep.leak_audit.unseen_train_reads_before_classify =
        audit.at("unseen_train_reads_before_classify").get<std::uint64_t>();
    rep.leak_audit.unseen_train_reads_total =
        audit.at("unseen_train_reads_total").get<std::uint64_t>();
    rep.leak_audit.passed = audit.at("passed").get<bool>();
    const json& counts = j.at("counts");
    rep.train_doc_count = counts.at("train_docs").get<std::size_t>();
    rep.test_doc_count = counts.at("test_docs").get<std::size_t>();
    rep.vocab_size = counts.at("vocab_size").get<int>();
    rep.plsa_iterations = counts.at("plsa_iterations").get<int>();
    rep.final_loglik = counts.at("final_loglik").get<double>();
    if (j.contains("timings")) {
      const json& t = j.at("timings");
      rep.timings.load_s = t.value("load_s", 0.0);
      rep.timings.extract_s = t.value("extract_s", 0.0);
      rep.timings.codebook_s = t.value("codebook_s", 0.0);
      rep.timings.quantize_s = t.value("quantize_s", 0.0);
      rep.timings.plsa_s = t.value("plsa_s", 0.0);
      rep.timings.classifier_s = t.value("classifier_s", 0.0);
      rep.timings.classify_s = t.value("classify_s", 0.0);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad report: ") + e.what());
  }
  return rep;
}

std::string report_to_text(const EvaluationReport& report) {
  std::ostringstream out;
  out << "classes: " << report.num_fine_classes;
  if (!report.unseen_class_names.empty()) {
    out << " (unseen:";
    for (const auto& name : report.unseen_class_names) out << ' ' << name;
    out << ')';
  }
  out << '\n';
  out << "train docs: " << report.train_doc_count << "  test docs: " << report.test_doc_count
      << "  vocabulary: " << report.vocab_size << '\n';
  out << "plsa iterations: " << report.plsa_iterations
      << "  final log-likelihood: " << fmt6(report.final_loglik) << '\n';
  out << "overall accuracy: " << fmt6(report.overall_accuracy) << '\n';
  out << "seen accuracy:    " << fmt6(report.seen_accuracy) << '\n';
  if (report.unseen_accuracy)
    out << "unseen accuracy:  " << fmt6(*report.unseen_accuracy) << '\n';
  out << "per class:\n";
  for (int f = 0; f < report.num_fine_classes; ++f)
    out << "  " << report.class_names[f] << ": " << fmt6(report.per_class_accuracy[f]) << " ("
        << report.per_class_test_counts[f] << " test)\n";
  if (!report.pair_choices.empty()) {
    out << "inferred from pairs:\n";
    for (const auto& [name, pair] : report.pair_choices)
      out << "  " << name << " <- " << pair.first << " + " << pair.second << '\n';
  }
  if (report.leak_audit.checked)
    out << "leak audit: " << (report.leak_audit.passed ? "passed" : "FAILED") << " ("
        << report.leak_audit.unseen_train_reads_total << " unseen-train reads)\n";
  return out.str();
}

EvaluationReport run_pipeline(const ExperimentConfig& cfg) {
  return run_internal(cfg, StopAfter::Classify, cfg.use_checkpoints, nullptr);
}

SweepResult sweep_q(const ExperimentConfig& cfg, const std::vector<int>& q_values, int repeats) {
  if (q_values.empty()) throw Error(ErrorCode::ConfigError, "sweep needs at least one q value");
  if (repeats < 1) throw Error(ErrorCode::ConfigError, "sweep needs at least one repeat");

  SweepResult result;
  std::ostringstream summary;
  summary << "q,repeat,seed,overall_accuracy,seen_accuracy,unseen_accuracy\n";
  std::ostringstream by_q;
  by_q << "q,runs,overall_mean,overall_min,overall_max,seen_mean,unseen_mean\n";

  std::vector<double> q_means;
  for (int q : q_values) {
    double sum = 0, lo = 1.0, hi = 0.0, seen_sum = 0, unseen_sum = 0;
    int unseen_runs = 0;
    for (int r = 0; r < repeats; ++r) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.q = q;
      // Repeat r keeps the same seed across q values so the comparison is
      // paired; only the hidden classes change.
      run_cfg.master_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(r));
      if (!cfg.out_dir.empty()) {
        char sub[48];
        std::snprintf(sub, sizeof(sub), "sweep_q%d_r%d", q, r);
        run_cfg.out_dir = cfg.out_dir / sub;
      }
      EvaluationReport rep = run_pipeline(run_cfg);

      summary << q << ',' << r << ',' << run_cfg.master_seed << ','
              << fmt6(rep.overall_accuracy) << ',' << fmt6(rep.seen_accuracy) << ',';
      if (rep.unseen_accuracy) summary << fmt6(*rep.unseen_accuracy);
      summary << '\n';

      sum += rep.overall_accuracy;
      lo = std::min(lo, rep.overall_accuracy);
      hi = std::max(hi, rep.overall_accuracy);
      seen_sum += rep.seen_accuracy;
      if (rep.unseen_accuracy) {
        unseen_sum += *rep.unseen_accuracy;
        ++unseen_runs;
      }
      result.reports.push_back(std::move(rep));
    }
    const double mean = sum / repeats;
    q_means.push_back(mean);
    by_q << q << ',' << repeats << ',' << fmt6(mean) << ',' << fmt6(lo) << ',' << fmt6(hi) << ','
         << fmt6(seen_sum / repeats) << ',';
    if (unseen_runs) by_q << fmt6(unseen_sum / unseen_runs);
    by_q << '\n';
  }

  result.summary_csv = summary.str();
  result.accuracy_vs_q_csv = by_q.str();
  result.consistency_spread =
      *std::max_element(q_means.begin(), q_means.end()) -
      *std::min_element(q_means.begin(), q_means.end());

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir / "summary.csv", result.summary_csv);
    write_text_file(cfg.out_dir / "accuracy_vs_q.csv", result.accuracy_vs_q_csv);
  }
  return result;
}

std::string compare_codebooks(const ExperimentConfig& cfg,
                              const std::vector<ForestVariant>& variants) {
  if (variants.empty()) throw Error(ErrorCode::ConfigError, "nothing to compare");
  if (cfg.dataset.kind == DatasetSpec::Kind::SyntheticBow)
    throw Error(ErrorCode::ConfigError, "codebook comparison needs an image dataset");

  std::ostringstream csv;
  csv << "variant,vocab_size,overall_accuracy,seen_accuracy,unseen_accuracy\n";
  for (ForestVariant v : variants) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.forest.variant = v;
    if (!cfg.out_dir.empty())
      run_cfg.out_dir = cfg.out_dir / (std::string("codebook_") + forest_variant_name(v));
    EvaluationReport rep = run_pipeline(run_cfg);
    csv << forest_variant_name(v) << ',' << rep.vocab_size << ',' << fmt6(rep.overall_accuracy)
        << ',' << fmt6(rep.seen_accuracy) << ',';
    if (rep.unseen_accuracy) csv << fmt6(*rep.unseen_accuracy);
    csv << '\n';
  }
  const std::string out = csv.str();
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir / "codebook_comparison.csv", out);
  }
  return out;
}

void generate_synth_assets(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw Error(ErrorCode::ConfigError, "synthetic assets need an output directory");
  std::filesystem::create_directories(cfg.out_dir);

  if (cfg.dataset.kind == DatasetSpec::Kind::SyntheticBow) {
    SyntheticSpec spec = cfg.dataset.synth;
    spec.rng_seed = cfg.stage_seed(ExperimentConfig::SeedSplit);
    SyntheticData data = generate_synthetic(spec);

    Taxonomy tax = data.dataset.taxonomy;
    for (FineClassId f : data.designated_unseen) tax.fine_classes[f].seen = false;
    write_text_file(cfg.out_dir / "taxonomy.txt", taxonomy_to_text(tax));
    write_split_manifest(data.dataset, cfg.out_dir / "manifest.csv");

    Corpus corpus;
    corpus.vocab_size = data.dataset.vocab_size;
    for (std::size_t i = 0; i < data.dataset.size(); ++i) {
      corpus.docs.push_back(data.dataset.histogram(i));
      corpus.doc_ids.push_back(data.dataset.item_ids[i]);
      corpus.labels.push_back(data.dataset.fine_labels[i]);
    }
    write_corpus_csv(corpus, data.dataset.taxonomy, cfg.out_dir / "corpus_full.csv");

    json truth;
    truth["num_topics"] = spec.num_topics;
    truth["vocab_size"] = spec.vocab_size;
    truth["true_topic_word"] = data.true_topic_word;
    json mixtures = json::object();
    for (std::size_t f = 0; f < data.class_mixtures.size(); ++f)
      mixtures[data.dataset.taxonomy.fine_classes[f].name] = data.class_mixtures[f];
    truth["class_mixtures"] = mixtures;
    std::vector<std::string> designated;
    for (FineClassId f : data.designated_unseen)
      designated.push_back(data.dataset.taxonomy.fine_classes[f].name);
    truth["designated_unseen"] = designated;
    write_text_file(cfg.out_dir / "ground_truth.json", truth.dump(2) + "\n");
    return;
  }

  if (cfg.dataset.kind == DatasetSpec::Kind::SyntheticImages) {
    SyntheticImageSpec spec = cfg.dataset.synth_images;
    spec.rng_seed = cfg.stage_seed(ExperimentConfig::SeedSplit);
    Dataset ds = generate_synthetic_images(spec);
    write_text_file(cfg.out_dir / "taxonomy.txt", taxonomy_to_text(ds.taxonomy));
    write_split_manifest(ds, cfg.out_dir / "manifest.csv");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::filesystem::path file = cfg.out_dir / "images" / (ds.item_ids[i] + ".png");
      std::filesystem::create_directories(file.parent_path());
      save_png(ds.image(i), file);
    }
    return;
  }

  throw Error(ErrorCode::ConfigError, "synthetic assets need a synthetic dataset kind");
}

void cmd_extract(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw Error(ErrorCode::ConfigError, "descriptor extraction needs an output directory");
  run_internal(cfg, StopAfter::Extract, true, nullptr);
}

void cmd_train_codebook(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw Error(ErrorCode::ConfigError, "codebook training needs an output directory");
  run_internal(cfg, StopAfter::Codebook, true, nullptr);
}

void cmd_fit_plsa(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw Error(ErrorCode::ConfigError, "topic fitting needs an output directory");
  run_internal(cfg, StopAfter::Plsa, true, nullptr);
}

void cmd_build_classifier(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    throw Error(ErrorCode::ConfigError, "classifier building needs an output directory");
  run_internal(cfg, StopAfter::Classifier, true, nullptr);
}

std::string cmd_classify(const ExperimentConfig& cfg) {
  std::string csv;
  run_internal(cfg, StopAfter::Classify, true, &csv);
  return csv;
}

void write_corpus_csv(const Corpus& corpus, const Taxonomy& taxonomy,
                      const std::filesystem::path& path) {
  corpus.validate();
  if (corpus.doc_ids.empty() || corpus.labels.empty())
    throw Error(ErrorCode::ConfigError, "corpus checkpoints need doc ids and labels");
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "# vocab=" << corpus.vocab_size << '\n';
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const std::string& name = taxonomy.fine_classes[corpus.labels[d]].name;
    if (corpus.doc_ids[d].find_first_of(",\n") != std::string::npos ||
        name.find_first_of(",\n") != std::string::npos)
      throw Error(ErrorCode::ConfigError, "doc ids and class names must not contain commas");
    out << "# doc=" << corpus.doc_ids[d] << ',' << name << '\n';
  }
  out << "doc_id,leaf_id,count\n";
  for (std::size_t d = 0; d < corpus.size(); ++d)
    for (std::size_t w = 0; w < corpus.docs[d].counts.size(); ++w)
      if (corpus.docs[d].counts[w])
        out << corpus.doc_ids[d] << ',' << w << ',' << corpus.docs[d].counts[w] << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

Corpus read_corpus_csv(const std::filesystem::path& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  Corpus corpus;
  std::map<std::string, std::size_t> doc_index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw Error(ErrorCode::ParseError,
                  path.string() + " line " + std::to_string(line_no) + ": " + what);
    };

    if (line[0] == '#') {
      if (line.rfind("# vocab=", 0) == 0) {
        corpus.vocab_size = std::stoi(line.substr(8));
      } else if (line.rfind("# doc=", 0) == 0) {
        const std::string body = line.substr(6);
        const auto comma = body.find(',');
        if (comma == std::string::npos) fail("expected '# doc=<id>,<class>'");
        const std::string id = body.substr(0, comma);
        const std::string cls = body.substr(comma + 1);
        const int label = taxonomy.find_fine(cls);
        if (label < 0) fail("unknown class '" + cls + "'");
        if (doc_index.contains(id)) fail("document '" + id + "' listed twice");
        doc_index[id] = corpus.docs.size();
        corpus.docs.emplace_back();
        corpus.doc_ids.push_back(id);
        corpus.labels.push_back(label);
      }
      continue;
    }
    if (line == "doc_id,leaf_id,count") continue;

    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) fail("expected 'doc_id,leaf_id,count'");
    const std::string id = line.substr(0, c1);
    const auto it = doc_index.find(id);
    if (it == doc_index.end()) fail("row for undeclared document '" + id + "'");
    int leaf = 0;
    long count = 0;
    try {
      leaf = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
      count = std::stol(line.substr(c2 + 1));
    } catch (const std::exception&) {
      fail("bad numbers in row");
    }
    if (corpus.vocab_size < 1) fail("rows before the '# vocab=' header");
    if (leaf < 0 || leaf >= corpus.vocab_size) fail("leaf id out of range");
    if (count < 0) fail("negative count");
    auto& counts = corpus.docs[it->second].counts;
    if (counts.empty()) counts.assign(static_cast<std::size_t>(corpus.vocab_size), 0);
    counts[static_cast<std::size_t>(leaf)] += static_cast<std::uint32_t>(count);
  }

  for (auto& doc : corpus.docs)
    if (doc.counts.empty()) doc.counts.assign(static_cast<std::size_t>(corpus.vocab_size), 0);
  corpus.validate();
  return corpus;
}

}  // namespace hic
