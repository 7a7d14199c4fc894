#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hic/dataset.hpp"
#include "hic/error.hpp"
#include "hic/experiment.hpp"
#include "hic/rng.hpp"

using namespace hic;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("hic_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

// Small bag-of-words setup that the pipeline solves almost perfectly.
ExperimentConfig base_cfg() {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetSpec::Kind::SyntheticBow;
  cfg.dataset.synth.coarse_count = 2;
  cfg.dataset.synth.fine_per_coarse = 3;
  cfg.dataset.synth.num_topics = 6;
  cfg.dataset.synth.vocab_size = 60;
  cfg.dataset.synth.docs_per_class = 12;
  cfg.dataset.synth.tokens_per_doc = 80;
  cfg.dataset.synth.train_per_class = 8;
  cfg.num_topics = 6;
  cfg.em.restarts = 4;
  cfg.q = 1;
  cfg.master_seed = 11;
  return cfg;
}

// Tiny image pipeline config for the staged-command tests.
ExperimentConfig image_cfg() {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetSpec::Kind::SyntheticImages;
  cfg.dataset.synth_images.coarse_count = 2;
  cfg.dataset.synth_images.fine_per_coarse = 2;
  cfg.dataset.synth_images.images_per_class = 6;
  cfg.dataset.synth_images.width = 16;
  cfg.dataset.synth_images.height = 16;
  cfg.dataset.synth_images.train_per_class = 4;
  cfg.phog.levels = 2;
  cfg.forest.num_trees = 4;
  cfg.forest.max_leaves_per_tree = 20;
  cfg.num_topics = 4;
  cfg.em.restarts = 2;
  cfg.q = 0;
  cfg.master_seed = 3;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("config json round trips") {
  ExperimentConfig cfg = base_cfg();
  cfg.pair_policy = PairPolicy::Exhaustive;
  cfg.normalize_by_set_size = true;
  cfg.out_dir = "/tmp/somewhere";

  const std::string text = experiment_config_to_json(cfg);
  const ExperimentConfig back = parse_experiment_config(text);

  CHECK(back.dataset.kind == cfg.dataset.kind);
  CHECK(back.dataset.synth.vocab_size == 60);
  CHECK(back.dataset.synth.train_per_class == 8);
  CHECK(back.num_topics == 6);
  CHECK(back.em.restarts == 4);
  CHECK(back.q == 1);
  CHECK(back.pair_policy == PairPolicy::Exhaustive);
  CHECK(back.normalize_by_set_size == true);
  CHECK(back.master_seed == 11);
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(back.fingerprint() == cfg.fingerprint());

  const auto parsed = nlohmann::json::parse(text);
  for (const char* key : {"dataset", "phog", "forest", "num_topics", "em", "q", "master_seed"})
    CHECK(parsed.contains(key));

  CHECK(code_of([] { parse_experiment_config("{not json"); }) == ErrorCode::ParseError);
}

TEST_CASE("fingerprints ignore plumbing but track the experiment") {
  const ExperimentConfig cfg = base_cfg();
  ExperimentConfig moved = base_cfg();
  moved.out_dir = "/tmp/elsewhere";
  moved.use_checkpoints = true;
  CHECK(moved.fingerprint() == cfg.fingerprint());

  ExperimentConfig changed = base_cfg();
  changed.num_topics = 7;
  CHECK(changed.fingerprint() != cfg.fingerprint());

  ExperimentConfig reseeded = base_cfg();
  reseeded.master_seed = 12;
  CHECK(reseeded.fingerprint() != cfg.fingerprint());
}

TEST_CASE("all-seen run classifies the synthetic corpus") {
  ExperimentConfig cfg = base_cfg();
  cfg.q = 0;
  // one private topic per class; the overlapping union classes are a zero-shot
  // construction and stay ambiguous under q = 0
  cfg.dataset.synth.topic_overlap = TopicOverlap::Disjoint;
  const EvaluationReport rep = run_pipeline(cfg);

  CHECK(rep.config_fingerprint == cfg.fingerprint());
  CHECK(rep.num_fine_classes == 6);
  CHECK(rep.unseen_class_names.empty());
  CHECK(!rep.unseen_accuracy.has_value());
  CHECK(rep.overall_accuracy >= 0.9);
  CHECK(rep.overall_accuracy == doctest::Approx(rep.seen_accuracy).epsilon(1e-12));
  CHECK(rep.train_doc_count == 6 * 8);
  CHECK(rep.test_doc_count == 6 * 4);
  CHECK(rep.vocab_size == 60);

  REQUIRE(rep.confusion.size() == 36);
  for (int t = 0; t < 6; ++t) {
    std::uint32_t row = 0;
    for (int p = 0; p < 6; ++p) row += rep.confusion_at(t, p);
    CHECK(row == rep.per_class_test_counts[t]);
  }
}

TEST_CASE("held-out classes are recognized without their training data") {
  const ExperimentConfig cfg = base_cfg();
  const EvaluationReport rep = run_pipeline(cfg);

  CHECK(rep.unseen_class_names.size() == 2);
  REQUIRE(rep.unseen_accuracy.has_value());
  CHECK(rep.pair_choices.size() == 2);
  for (const auto& name : rep.unseen_class_names) CHECK(rep.pair_choices.count(name) == 1);

  CHECK(rep.leak_audit.checked);
  CHECK(rep.leak_audit.passed);
  CHECK(rep.leak_audit.unseen_train_reads_before_classify == 0);

  const EvaluationReport again = run_pipeline(cfg);
  CHECK(report_to_json(again, false) == report_to_json(rep, false));
}

TEST_CASE("sweep runs reproduce the direct pipeline") {
  const ExperimentConfig cfg = base_cfg();
  const SweepResult sweep = sweep_q(cfg, {1}, 1);
  REQUIRE(sweep.reports.size() == 1);

  ExperimentConfig direct = cfg;
  direct.q = 1;
  direct.master_seed = derive_seed(cfg.master_seed, 0);
  const EvaluationReport rep = run_pipeline(direct);
  CHECK(report_to_json(sweep.reports[0], false) == report_to_json(rep, false));
}

TEST_CASE("sweeps pair seeds across q and aggregate per q") {
  const ExperimentConfig cfg = base_cfg();
  const SweepResult sweep = sweep_q(cfg, {0, 1}, 2);
  REQUIRE(sweep.reports.size() == 4);

  std::istringstream in(sweep.summary_csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "q,repeat,seed,overall_accuracy,seen_accuracy,unseen_accuracy");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    while (fields.size() < 6) fields.emplace_back();
    rows.push_back(fields);
  }
  REQUIRE(rows.size() == 4);
  // same repeat index means same run seed regardless of q
  CHECK(rows[0][2] == rows[2][2]);
  CHECK(rows[1][2] == rows[3][2]);
  CHECK(rows[0][2] != rows[1][2]);
  // q=0 rows have no unseen accuracy
  CHECK(rows[0][5].empty());
  CHECK(!rows[2][5].empty());

  std::istringstream agg(sweep.accuracy_vs_q_csv);
  std::getline(agg, line);
  CHECK(line == "q,runs,overall_mean,overall_min,overall_max,seen_mean,unseen_mean");
  int agg_rows = 0;
  while (std::getline(agg, line)) ++agg_rows;
  CHECK(agg_rows == 2);

  const double mean_q0 =
      (sweep.reports[0].overall_accuracy + sweep.reports[1].overall_accuracy) / 2;
  const double mean_q1 =
      (sweep.reports[2].overall_accuracy + sweep.reports[3].overall_accuracy) / 2;
  CHECK(sweep.consistency_spread ==
        doctest::Approx(std::abs(mean_q0 - mean_q1)).epsilon(1e-12));

  const SweepResult rerun = sweep_q(cfg, {0, 1}, 2);
  CHECK(rerun.summary_csv == sweep.summary_csv);
  CHECK(rerun.accuracy_vs_q_csv == sweep.accuracy_vs_q_csv);
}

TEST_CASE("codebook comparison needs images and emits one row per variant") {
  CHECK(code_of([] { compare_codebooks(base_cfg(), {ForestVariant::Fine}); }) ==
        ErrorCode::ConfigError);

  const ExperimentConfig cfg = image_cfg();
  const std::string csv = compare_codebooks(cfg, {ForestVariant::Fine});
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "variant,vocab_size,overall_accuracy,seen_accuracy,unseen_accuracy");
  std::getline(in, line);
  CHECK(line.rfind("fine,", 0) == 0);
  // trees stop splitting once nodes are class-pure, so the leaf budget caps
  // the vocabulary without guaranteeing it
  const int vocab = std::stoi(line.substr(5));
  CHECK(vocab >= 4);
  CHECK(vocab <= 4 * 20);
  CHECK(!std::getline(in, line));
}

TEST_CASE("checkpoints let a run resume and refuse foreign directories") {
  TempDir tmp;
  ExperimentConfig cfg = base_cfg();
  cfg.out_dir = tmp.path;
  cfg.use_checkpoints = true;

  const EvaluationReport rep = run_pipeline(cfg);
  for (const char* name : {"config.json", "manifest.csv", "corpus_train.csv", "plsa.bin",
                           "classifier.json", "predictions.csv", "report.json", "report.txt"})
    CHECK(std::filesystem::exists(tmp.path / name));
  // bag-of-words input skips the image stages
  CHECK(!std::filesystem::exists(tmp.path / "features_train.phog"));
  CHECK(!std::filesystem::exists(tmp.path / "codebook.hicf"));

  const EvaluationReport resumed = run_pipeline(cfg);
  CHECK(report_to_json(resumed, false) == report_to_json(rep, false));

  ExperimentConfig other = cfg;
  other.master_seed = 12;
  CHECK(code_of([&] { run_pipeline(other); }) == ErrorCode::ConfigError);
}

TEST_CASE("corpus csv checkpoints round trip") {
  TempDir tmp;
  const SyntheticData data = generate_synthetic(SyntheticSpec{
      .num_topics = 4, .vocab_size = 40, .coarse_count = 2, .fine_per_coarse = 2,
      .docs_per_class = 3, .tokens_per_doc = 30, .rng_seed = 6, .train_per_class = 2});

  Corpus corpus;
  corpus.vocab_size = data.dataset.vocab_size;
  for (std::size_t i = 0; i < data.dataset.size(); ++i) {
    corpus.docs.push_back(data.dataset.histogram(i));
    corpus.doc_ids.push_back(data.dataset.item_ids[i]);
    corpus.labels.push_back(data.dataset.fine_labels[i]);
  }

  const auto path = tmp.path / "corpus.csv";
  write_corpus_csv(corpus, data.dataset.taxonomy, path);
  const Corpus back = read_corpus_csv(path, data.dataset.taxonomy);
  CHECK(back.vocab_size == corpus.vocab_size);
  REQUIRE(back.size() == corpus.size());
  CHECK(back.doc_ids == corpus.doc_ids);
  CHECK(back.labels == corpus.labels);
  for (std::size_t d = 0; d < corpus.size(); ++d)
    CHECK(back.docs[d].counts == corpus.docs[d].counts);

  Corpus anonymous = std::move(corpus);
  anonymous.doc_ids.clear();
  CHECK(code_of([&] { write_corpus_csv(anonymous, data.dataset.taxonomy, path); }) ==
        ErrorCode::ConfigError);

  std::ofstream(tmp.path / "bad.csv") << "doc_id,leaf_id,count\nd0,notanumber,3\n";
  CHECK(code_of([&] { read_corpus_csv(tmp.path / "bad.csv", data.dataset.taxonomy); }) ==
        ErrorCode::ParseError);
}

TEST_CASE("reports survive the json and text encodings") {
  ExperimentConfig cfg = base_cfg();
  const EvaluationReport rep = run_pipeline(cfg);

  const EvaluationReport back = report_from_json(report_to_json(rep));
  CHECK(back.config_fingerprint == rep.config_fingerprint);
  CHECK(back.num_fine_classes == rep.num_fine_classes);
  CHECK(back.class_names == rep.class_names);
  CHECK(back.overall_accuracy == doctest::Approx(rep.overall_accuracy).epsilon(1e-12));
  CHECK(back.seen_accuracy == doctest::Approx(rep.seen_accuracy).epsilon(1e-12));
  REQUIRE(back.unseen_accuracy.has_value());
  CHECK(*back.unseen_accuracy == doctest::Approx(*rep.unseen_accuracy).epsilon(1e-12));
  CHECK(back.confusion == rep.confusion);
  CHECK(back.per_class_test_counts == rep.per_class_test_counts);
  CHECK(back.unseen_class_names == rep.unseen_class_names);
  CHECK(back.pair_choices == rep.pair_choices);
  CHECK(back.leak_audit.checked == rep.leak_audit.checked);
  CHECK(back.leak_audit.passed == rep.leak_audit.passed);

  const std::string text = report_to_text(rep);
  CHECK(text.find("overall accuracy:") != std::string::npos);
  CHECK(text.find("seen accuracy:") != std::string::npos);
  CHECK(text.find("unseen accuracy:") != std::string::npos);
}

TEST_CASE("synthetic asset generation writes a ready-to-run dataset") {
  TempDir tmp;
  ExperimentConfig cfg = base_cfg();
  cfg.out_dir = tmp.path / "bow";
  generate_synth_assets(cfg);
  for (const char* name : {"taxonomy.txt", "manifest.csv", "corpus_full.csv", "ground_truth.json"})
    CHECK(std::filesystem::exists(cfg.out_dir / name));

  const Taxonomy tax = load_taxonomy_file(cfg.out_dir / "taxonomy.txt");
  CHECK(tax.fine_classes.size() == 6);
  CHECK(tax.unseen_count() == 2);  // designated union classes carry the tag

  const auto truth = nlohmann::json::parse(slurp(cfg.out_dir / "ground_truth.json"));
  CHECK(truth["num_topics"] == 6);
  CHECK(truth["vocab_size"] == 60);
  CHECK(truth["true_topic_word"].size() == 6 * 60);  // K x V, row-major
  CHECK(truth["class_mixtures"].size() == 6);
  CHECK(truth["designated_unseen"].size() == 2);

  ExperimentConfig img = image_cfg();
  img.out_dir = tmp.path / "img";
  generate_synth_assets(img);
  CHECK(std::filesystem::exists(img.out_dir / "taxonomy.txt"));
  CHECK(std::filesystem::exists(img.out_dir / "manifest.csv"));
  int pngs = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(img.out_dir / "images"))
    if (entry.path().extension() == ".png") ++pngs;
  CHECK(pngs == 2 * 2 * 6);

  ExperimentConfig no_dir = base_cfg();
  CHECK(code_of([&] { generate_synth_assets(no_dir); }) == ErrorCode::ConfigError);
  ExperimentConfig cifar = base_cfg();
  cifar.dataset.kind = DatasetSpec::Kind::Cifar100;
  cifar.out_dir = tmp.path / "c";
  CHECK(code_of([&] { generate_synth_assets(cifar); }) == ErrorCode::ConfigError);
}

TEST_CASE("stage commands insist on an output directory") {
  const ExperimentConfig cfg = image_cfg();
  CHECK(code_of([&] { cmd_extract(cfg); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { cmd_train_codebook(cfg); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { cmd_fit_plsa(cfg); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { cmd_build_classifier(cfg); }) == ErrorCode::ConfigError);
}

TEST_CASE("staged commands reproduce the monolithic run") {
  TempDir tmp;
  ExperimentConfig staged = image_cfg();
  staged.out_dir = tmp.path / "staged";

  cmd_extract(staged);
  CHECK(std::filesystem::exists(staged.out_dir / "features_train.phog"));
  cmd_train_codebook(staged);
  CHECK(std::filesystem::exists(staged.out_dir / "codebook.hicf"));
  cmd_fit_plsa(staged);
  CHECK(std::filesystem::exists(staged.out_dir / "plsa.bin"));
  cmd_build_classifier(staged);
  CHECK(std::filesystem::exists(staged.out_dir / "classifier.json"));
  const std::string staged_predictions = cmd_classify(staged);
  CHECK(staged_predictions.rfind("image_id,true_class,predicted_class,score", 0) == 0);

  ExperimentConfig direct = image_cfg();
  direct.out_dir = tmp.path / "direct";
  run_pipeline(direct);
  CHECK(slurp(direct.out_dir / "predictions.csv") == staged_predictions);
}
