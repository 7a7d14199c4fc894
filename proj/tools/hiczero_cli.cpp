// Command-line front end. Talks to the library through the C interface only;
// configuration is assembled here as JSON and handed over as text.
#include <hiczero.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

struct CliError {
  int code;
  std::string message;
};

std::string take(hic_string& s) {
  std::string out = s.data ? std::string(s.data, s.size) : std::string();
  hic_string_free(&s);
  return out;
}

void check(hic_status status) {
  if (status != HIC_OK) {
    throw CliError{static_cast<int>(status),
                   std::string(hic_last_error_name()) + ": " + hic_last_error()};
  }
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw CliError{2, what + ": " + e.what()};
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{3, "cannot read " + path};
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Values parse as JSON when they can (numbers, bools, arrays) and fall back
// to plain strings, so --set dataset.path=/data/cifar needs no quoting.
void apply_override(json& cfg, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw CliError{2, "--set expects key=value, got '" + spec + "'"};
  }
  std::string path = spec.substr(0, eq);
  std::string value = spec.substr(eq + 1);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }
  json* node = &cfg;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw CliError{2, "--set key has an empty segment: '" + path + "'"};
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null()) {
      throw CliError{2, "--set path '" + path + "' descends into a non-object field"};
    }
    start = dot + 1;
  }
}

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  unsigned long long seed = 0;
  bool checkpoint = false;
  bool permissive = false;
  std::string dataset_kind;
  std::string data_dir;
  std::string taxonomy_file;
  int topics = 0;
  int q = 0;
  bool print_config = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* topics_opt = nullptr;
  CLI::Option* q_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "JSON configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets,
                  "override one configuration field by dotted path, e.g. forest.num_trees=20");
  cmd->add_option("--out-dir", o.out_dir, "directory for artifacts and reports");
  o.seed_opt = cmd->add_option("--seed", o.seed, "master seed for every random stage");
  cmd->add_flag("--checkpoint", o.checkpoint, "reuse artifacts already present in --out-dir");
  cmd->add_flag("--permissive", o.permissive,
                "tolerate duplicate names in the class hierarchy file");
  cmd->add_option("--dataset", o.dataset_kind,
                  "dataset kind: cifar100, image-folder, synthetic-bow, synthetic-images");
  cmd->add_option("--data-dir", o.data_dir, "dataset directory");
  cmd->add_option("--taxonomy", o.taxonomy_file, "class hierarchy file");
  o.topics_opt = cmd->add_option("--topics", o.topics, "number of topics");
  o.q_opt = cmd->add_option("--q", o.q, "unseen classes withheld per coarse class");
  cmd->add_flag("--print-config", o.print_config,
                "print the effective configuration and exit");
}

json effective_config(const CommonOpts& o) {
  hic_string def{};
  check(hic_default_config(&def));
  json cfg = parse_json(take(def), "default configuration");
  if (!o.config_file.empty()) {
    cfg.merge_patch(parse_json(read_file(o.config_file), o.config_file));
  }
  for (const auto& s : o.sets) apply_override(cfg, s);
  if (!o.dataset_kind.empty()) cfg["dataset"]["kind"] = o.dataset_kind;
  if (!o.data_dir.empty()) cfg["dataset"]["path"] = o.data_dir;
  if (!o.taxonomy_file.empty()) cfg["dataset"]["taxonomy_file"] = o.taxonomy_file;
  if (o.permissive) cfg["dataset"]["taxonomy_mode"] = "permissive";
  if (o.topics_opt->count() > 0) cfg["num_topics"] = o.topics;
  if (o.q_opt->count() > 0) cfg["q"] = o.q;
  if (o.seed_opt->count() > 0) cfg["master_seed"] = o.seed;
  if (!o.out_dir.empty()) cfg["out_dir"] = o.out_dir;
  if (o.checkpoint) cfg["use_checkpoints"] = true;
  return cfg;
}

// Returns true when --print-config consumed the invocation.
bool maybe_print_config(const CommonOpts& o, const json& cfg) {
  if (!o.print_config) return false;
  std::cout << cfg.dump(2) << "\n";
  return true;
}

template <typename Fn>
void guarded(int& rc, Fn&& fn) {
  try {
    fn();
    rc = 0;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    rc = e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    rc = 4;
  }
}

void print_with_newline(const std::string& text) {
  std::cout << text;
  if (text.empty() || text.back() != '\n') std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot image recognition: gradient histograms, tree codebooks, topic mixtures"};
  app.set_version_flag("--version", hic_version());
  app.require_subcommand(1);
  int rc = 0;

  auto simple_stage = [&rc, &app](const std::string& name, const std::string& help,
                                  hic_status (*fn)(const char*)) {
    auto* cmd = app.add_subcommand(name, help);
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    cmd->callback([&rc, opts, fn] {
      guarded(rc, [&] {
        json cfg = effective_config(*opts);
        if (maybe_print_config(*opts, cfg)) return;
        check(fn(cfg.dump().c_str()));
        std::cerr << "artifacts in " << cfg.value("out_dir", std::string()) << "\n";
      });
    });
  };

  simple_stage("extract", "compute gradient-histogram descriptors for the training images",
               &hic_extract);
  simple_stage("train-codebook", "grow the tree codebook from training descriptors",
               &hic_train_codebook);
  simple_stage("fit-plsa", "fit the topic model on the training bag-of-words", &hic_fit_plsa);
  simple_stage("build-classifier", "derive class topic sets, inferring unseen classes from pairs",
               &hic_build_classifier);
  simple_stage("synth", "generate a synthetic dataset with its ground truth", &hic_generate_synth);

  {
    auto* cmd = app.add_subcommand("classify", "classify the test split and print predictions");
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    cmd->callback([&rc, opts] {
      guarded(rc, [&] {
        json cfg = effective_config(*opts);
        if (maybe_print_config(*opts, cfg)) return;
        hic_string csv{};
        check(hic_classify(cfg.dump().c_str(), &csv));
        print_with_newline(take(csv));
      });
    });
  }

  {
    auto* cmd = app.add_subcommand("evaluate", "run the whole pipeline and report accuracy");
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    auto as_json = std::make_shared<bool>(false);
    cmd->add_flag("--json", *as_json, "print the report as JSON instead of text");
    cmd->callback([&rc, opts, as_json] {
      guarded(rc, [&] {
        json cfg = effective_config(*opts);
        if (maybe_print_config(*opts, cfg)) return;
        hic_string report{};
        check(hic_run_pipeline(cfg.dump().c_str(), &report));
        std::string report_json = take(report);
        if (*as_json) {
          print_with_newline(report_json);
          return;
        }
        hic_string text{};
        check(hic_report_to_text(report_json.c_str(), &text));
        print_with_newline(take(text));
      });
    });
  }

  {
    auto* cmd = app.add_subcommand("sweep-q",
                                   "evaluate across several q values with repeated seeds");
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    auto qs = std::make_shared<std::vector<int>>(std::vector<int>{0, 1, 2});
    auto repeats = std::make_shared<int>(1);
    cmd->add_option("--q-values", *qs, "q values to sweep")->delimiter(',');
    cmd->add_option("--repeats", *repeats, "independent runs per q value");
    cmd->callback([&rc, opts, qs, repeats] {
      guarded(rc, [&] {
        json cfg = effective_config(*opts);
        if (maybe_print_config(*opts, cfg)) return;
        if (qs->empty()) throw CliError{2, "--q-values needs at least one value"};
        hic_string summary{};
        hic_string accuracy{};
        double spread = 0.0;
        check(hic_sweep_q(cfg.dump().c_str(), qs->data(), qs->size(), *repeats, &summary,
                          &accuracy, &spread));
        print_with_newline(take(summary));
        hic_string_free(&accuracy);
        std::cerr << "largest per-q accuracy spread across repeats: " << spread << "\n";
      });
    });
  }

  {
    auto* cmd = app.add_subcommand("compare-codebooks",
                                   "evaluate the same data under different codebook objectives");
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    auto variants = std::make_shared<std::string>("fine,coarse,jcofi,cofi");
    cmd->add_option("--variants", *variants, "comma-separated subset of fine,coarse,jcofi,cofi");
    cmd->callback([&rc, opts, variants] {
      guarded(rc, [&] {
        json cfg = effective_config(*opts);
        if (maybe_print_config(*opts, cfg)) return;
        hic_string table{};
        check(hic_compare_codebooks(cfg.dump().c_str(), variants->c_str(), &table));
        print_with_newline(take(table));
      });
    });
  }

  CLI11_PARSE(app, argc, argv);
  return rc;
}
