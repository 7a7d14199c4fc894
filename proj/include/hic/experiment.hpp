#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hic/dataset.hpp"
#include "hic/forest.hpp"
#include "hic/phog.hpp"
#include "hic/plsa.hpp"
#include "hic/zeroshot.hpp"

namespace hic {

struct DatasetSpec {
  enum class Kind { Cifar100, ImageFolder, SyntheticBow, SyntheticImages };

  Kind kind = Kind::SyntheticBow;
  std::filesystem::path path;           // Cifar100 dir / ImageFolder root
  std::filesystem::path taxonomy_file;  // ImageFolder only
  TaxonomyMode taxonomy_mode = TaxonomyMode::Strict;
  int train_per_class = 30;
  SyntheticSpec synth;
  SyntheticImageSpec synth_images;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  PhogConfig phog;
  ForestConfig forest;
  int num_topics = 10;
  EmConfig em;
  int q = 0;
  PairPolicy pair_policy = PairPolicy::SeededRandom;
  std::map<std::string, std::pair<std::string, std::string>> fixed_pairs;  // by class name
  bool cross_class_norm = false;
  bool normalize_by_set_size = false;
  std::uint64_t master_seed = 0;
  std::filesystem::path out_dir;
  bool use_checkpoints = false;

  // Stage seeds come off the master seed through splitmix64 so sweep runs are
  // reproducible yet decorrelated.
  enum Stage : std::uint64_t { SeedSplit = 1, SeedUnseen = 2, SeedForest = 3, SeedPlsa = 4, SeedPairs = 5 };
  std::uint64_t stage_seed(Stage s) const { return derive_seed(master_seed, s); }

  void validate() const;  // throws ConfigError
  std::string fingerprint() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct StageTimings {
  double load_s = 0, extract_s = 0, codebook_s = 0, quantize_s = 0, plsa_s = 0,
         classifier_s = 0, classify_s = 0;
};

struct LeakAudit {
  bool checked = false;
  std::uint64_t unseen_train_reads_before_classify = 0;
  std::uint64_t unseen_train_reads_total = 0;
  bool passed = false;
};

struct EvaluationReport {
  std::string config_fingerprint;
  int num_fine_classes = 0;
  std::vector<std::string> class_names;
  double overall_accuracy = 0.0;
  double seen_accuracy = 0.0;
  std::optional<double> unseen_accuracy;  // empty when the run has no unseen class
  std::vector<double> per_class_accuracy;
  std::vector<std::uint32_t> per_class_test_counts;
  std::vector<std::uint32_t> confusion;  // F x F row-major, row = true class
  std::vector<std::string> unseen_class_names;
  std::map<std::string, std::pair<std::string, std::string>> pair_choices;
  LeakAudit leak_audit;
  StageTimings timings;
  std::size_t train_doc_count = 0;
  std::size_t test_doc_count = 0;
  int vocab_size = 0;
  int plsa_iterations = 0;
  double final_loglik = 0.0;

  std::uint32_t confusion_at(int truth, int predicted) const {
    return confusion[static_cast<std::size_t>(truth) * num_fine_classes + predicted];
  }
};

std::string report_to_json(const EvaluationReport& report, bool include_timings = true);
std::string report_to_text(const EvaluationReport& report);
EvaluationReport report_from_json(const std::string& json_text);

// Full pipeline per the framework: codebook on seen training items only,
// BoW corpus, pLSA, signature sets, unseen-set inference, classification of
// every test item. Each stage writes its artifact under cfg.out_dir; with
// use_checkpoints set, existing artifacts are loaded instead of recomputed.
EvaluationReport run_pipeline(const ExperimentConfig& cfg);

struct SweepResult {
  std::vector<EvaluationReport> reports;  // one per (q, repeat), q-major
  std::string summary_csv;                // q,repeat,seed,overall,seen,unseen
  std::string accuracy_vs_q_csv;          // per-q aggregates
  double consistency_spread = 0.0;        // max - min mean overall accuracy across q
};

SweepResult sweep_q(const ExperimentConfig& cfg, const std::vector<int>& q_values, int repeats);

// Same pipeline per variant; only ForestConfig::variant differs.
std::string compare_codebooks(const ExperimentConfig& cfg, const std::vector<ForestVariant>& variants);

// `synth` subcommand back end: writes a ready-to-run dataset (BoW corpus CSV +
// taxonomy + ground truth, or a PNG folder tree) under out_dir.
void generate_synth_assets(const ExperimentConfig& cfg);

// Stage entry points used by the CLI subcommands. Each loads what earlier
// stages checkpointed under cfg.out_dir and writes its own artifact.
void cmd_extract(const ExperimentConfig& cfg);
void cmd_train_codebook(const ExperimentConfig& cfg);
void cmd_fit_plsa(const ExperimentConfig& cfg);
void cmd_build_classifier(const ExperimentConfig& cfg);
std::string cmd_classify(const ExperimentConfig& cfg);  // predictions CSV

// Corpus checkpoint helpers (CSV of doc_id,leaf_id,count triples).
void write_corpus_csv(const Corpus& corpus, const Taxonomy& taxonomy, const std::filesystem::path& path);
Corpus read_corpus_csv(const std::filesystem::path& path, const Taxonomy& taxonomy);

}  // namespace hic
