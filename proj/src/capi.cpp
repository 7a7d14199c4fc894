#include "hiczero.h"

#include <cstring>
#include <new>
#include <string>
#include <vector>

#include "hic/error.hpp"
#include "hic/experiment.hpp"
#include "hic/phog.hpp"
#include "hic/taxonomy.hpp"
#include "hic/zeroshot.hpp"

namespace {

thread_local std::string g_error_message;
thread_local std::string g_error_name;

void clear_error() {
  g_error_message.clear();
  g_error_name.clear();
}

hic_status set_error(const hic::Error& e) {
  g_error_message = e.what();
  g_error_name = hic::error_code_name(e.code());
  return static_cast<hic_status>(static_cast<int>(hic::category_of(e.code())));
}

hic_status set_error(const std::exception& e) {
  g_error_message = e.what();
  g_error_name = "InternalError";
  return HIC_ERR_NUMERIC;
}

template <typename F>
hic_status guarded(F&& f) {
  clear_error();
  try {
    f();
    return HIC_OK;
  } catch (const hic::Error& e) {
    return set_error(e);
  } catch (const std::bad_alloc& e) {
    return set_error(e);
  } catch (const std::exception& e) {
    return set_error(e);
  }
}

void fill_string(hic_string* out, const std::string& text) {
  out->data = new char[text.size() + 1];
  std::memcpy(out->data, text.data(), text.size());
  out->data[text.size()] = '\0';
  out->size = text.size();
}

void require(bool ok, const char* what) {
  if (!ok) throw hic::Error(hic::ErrorCode::InvalidConfig, what);
}

hic::PhogConfig phog_config(int levels, int bins, int angle_range) {
  hic::PhogConfig cfg;
  cfg.levels = levels;
  cfg.bins = bins;
  cfg.angle_range = angle_range;
  cfg.validate();
  return cfg;
}

const hic::Taxonomy* unwrap(const hic_taxonomy* h) {
  return reinterpret_cast<const hic::Taxonomy*>(h);
}
const hic::ImageFeatures* unwrap(const hic_features* h) {
  return reinterpret_cast<const hic::ImageFeatures*>(h);
}
const hic::Codebook* unwrap(const hic_codebook* h) {
  return reinterpret_cast<const hic::Codebook*>(h);
}

struct PlsaHandle {
  hic::PlsaModel model;
  hic::EmConfig em;
};

const PlsaHandle* unwrap(const hic_plsa* h) { return reinterpret_cast<const PlsaHandle*>(h); }

const hic::ZeroShotClassifier* unwrap(const hic_classifier* h) {
  return reinterpret_cast<const hic::ZeroShotClassifier*>(h);
}

}  // namespace

extern "C" {

const char* hic_version(void) { return "0.1.0"; }

const char* hic_last_error(void) { return g_error_message.c_str(); }

const char* hic_last_error_name(void) { return g_error_name.c_str(); }

void hic_string_free(hic_string* s) {
  if (!s) return;
  delete[] s->data;
  s->data = nullptr;
  s->size = 0;
}

hic_status hic_default_config(hic_string* config_json) {
  return guarded([&] {
    require(config_json, "config_json output is null");
    fill_string(config_json, hic::experiment_config_to_json(hic::ExperimentConfig{}));
  });
}

hic_status hic_run_pipeline(const char* config_json, hic_string* report_json) {
  return guarded([&] {
    require(config_json && report_json, "null argument");
    const hic::EvaluationReport rep =
        hic::run_pipeline(hic::parse_experiment_config(config_json));
    fill_string(report_json, hic::report_to_json(rep));
  });
}

hic_status hic_report_to_text(const char* report_json, hic_string* text) {
  return guarded([&] {
    require(report_json && text, "null argument");
    fill_string(text, hic::report_to_text(hic::report_from_json(report_json)));
  });
}

hic_status hic_sweep_q(const char* config_json, const int* q_values, size_t num_q, int repeats,
                       hic_string* summary_csv, hic_string* accuracy_vs_q_csv, double* spread) {
  return guarded([&] {
    require(config_json && q_values && num_q > 0, "null argument");
    const hic::SweepResult result =
        hic::sweep_q(hic::parse_experiment_config(config_json),
                     std::vector<int>(q_values, q_values + num_q), repeats);
    if (summary_csv) fill_string(summary_csv, result.summary_csv);
    if (accuracy_vs_q_csv) fill_string(accuracy_vs_q_csv, result.accuracy_vs_q_csv);
    if (spread) *spread = result.consistency_spread;
  });
}

hic_status hic_compare_codebooks(const char* config_json, const char* variants,
                                 hic_string* table_csv) {
  return guarded([&] {
    require(config_json && variants && table_csv, "null argument");
    std::vector<hic::ForestVariant> list;
    std::string text = variants;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      const std::string name =
          text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!name.empty()) list.push_back(hic::forest_variant_from_name(name));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    fill_string(table_csv,
                hic::compare_codebooks(hic::parse_experiment_config(config_json), list));
  });
}

hic_status hic_generate_synth(const char* config_json) {
  return guarded([&] {
    require(config_json, "null argument");
    hic::generate_synth_assets(hic::parse_experiment_config(config_json));
  });
}

hic_status hic_extract(const char* config_json) {
  return guarded([&] {
    require(config_json, "null argument");
    hic::cmd_extract(hic::parse_experiment_config(config_json));
  });
}

hic_status hic_train_codebook(const char* config_json) {
  return guarded([&] {
    require(config_json, "null argument");
    hic::cmd_train_codebook(hic::parse_experiment_config(config_json));
  });
}

hic_status hic_fit_plsa(const char* config_json) {
  return guarded([&] {
    require(config_json, "null argument");
    hic::cmd_fit_plsa(hic::parse_experiment_config(config_json));
  });
}

hic_status hic_build_classifier(const char* config_json) {
  return guarded([&] {
    require(config_json, "null argument");
    hic::cmd_build_classifier(hic::parse_experiment_config(config_json));
  });
}

hic_status hic_classify(const char* config_json, hic_string* predictions_csv) {
  return guarded([&] {
    require(config_json, "null argument");
    const std::string csv = hic::cmd_classify(hic::parse_experiment_config(config_json));
    if (predictions_csv) fill_string(predictions_csv, csv);
  });
}

hic_status hic_taxonomy_parse(const char* text, int permissive, hic_taxonomy** out) {
  return guarded([&] {
    require(text && out, "null argument");
    auto* tax = new hic::Taxonomy(hic::parse_taxonomy(
        text, permissive ? hic::TaxonomyMode::Permissive : hic::TaxonomyMode::Strict));
    *out = reinterpret_cast<hic_taxonomy*>(tax);
  });
}

hic_status hic_taxonomy_load(const char* path, int permissive, hic_taxonomy** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto* tax = new hic::Taxonomy(hic::load_taxonomy_file(
        path, permissive ? hic::TaxonomyMode::Permissive : hic::TaxonomyMode::Strict));
    *out = reinterpret_cast<hic_taxonomy*>(tax);
  });
}

hic_status hic_taxonomy_to_text(const hic_taxonomy* taxonomy, hic_string* out) {
  return guarded([&] {
    require(taxonomy && out, "null argument");
    fill_string(out, hic::taxonomy_to_text(*unwrap(taxonomy)));
  });
}

size_t hic_taxonomy_coarse_count(const hic_taxonomy* taxonomy) {
  return taxonomy ? unwrap(taxonomy)->coarse_classes.size() : 0;
}

size_t hic_taxonomy_fine_count(const hic_taxonomy* taxonomy) {
  return taxonomy ? unwrap(taxonomy)->fine_classes.size() : 0;
}

size_t hic_taxonomy_unseen_count(const hic_taxonomy* taxonomy) {
  return taxonomy ? unwrap(taxonomy)->unseen_count() : 0;
}

int hic_taxonomy_find_fine(const hic_taxonomy* taxonomy, const char* name) {
  if (!taxonomy || !name) return -1;
  return unwrap(taxonomy)->find_fine(name);
}

void hic_taxonomy_free(hic_taxonomy* taxonomy) {
  delete reinterpret_cast<hic::Taxonomy*>(taxonomy);
}

hic_status hic_features_from_image_file(const char* path, int levels, int bins, int angle_range,
                                        hic_features** out) {
  return guarded([&] {
    require(path && out, "null argument");
    const hic::RasterImage image = hic::decode_image_file(path);
    auto* features =
        new hic::ImageFeatures(hic::extract(image, phog_config(levels, bins, angle_range)));
    *out = reinterpret_cast<hic_features*>(features);
  });
}

hic_status hic_features_from_gray(const unsigned char* pixels, int width, int height, int levels,
                                  int bins, int angle_range, hic_features** out) {
  return guarded([&] {
    require(pixels && out, "null argument");
    require(width > 0 && height > 0, "image dimensions must be positive");
    hic::RasterImage image;
    image.width = width;
    image.height = height;
    image.channels = 1;
    image.data.assign(pixels, pixels + static_cast<std::size_t>(width) * height);
    auto* features =
        new hic::ImageFeatures(hic::extract(image, phog_config(levels, bins, angle_range)));
    *out = reinterpret_cast<hic_features*>(features);
  });
}

size_t hic_features_count(const hic_features* features) {
  return features ? unwrap(features)->descriptors.size() : 0;
}

void hic_features_free(hic_features* features) {
  delete reinterpret_cast<hic::ImageFeatures*>(features);
}

hic_status hic_codebook_load(const char* path, hic_codebook** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto* book = new hic::Codebook(hic::load_codebook(path));
    *out = reinterpret_cast<hic_codebook*>(book);
  });
}

int hic_codebook_vocab_size(const hic_codebook* codebook) {
  return codebook ? unwrap(codebook)->vocab_size : 0;
}

hic_status hic_codebook_quantize(const hic_codebook* codebook, const hic_features* features,
                                 unsigned int* counts) {
  return guarded([&] {
    require(codebook && features && counts, "null argument");
    const hic::BowHistogram hist = hic::quantize(*unwrap(features), *unwrap(codebook));
    for (std::size_t i = 0; i < hist.counts.size(); ++i) counts[i] = hist.counts[i];
  });
}

void hic_codebook_free(hic_codebook* codebook) {
  delete reinterpret_cast<hic::Codebook*>(codebook);
}

hic_status hic_plsa_load(const char* path, hic_plsa** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto* handle = new PlsaHandle;
    try {
      handle->model = hic::load_model(path, &handle->em);
    } catch (...) {
      delete handle;
      throw;
    }
    *out = reinterpret_cast<hic_plsa*>(handle);
  });
}

int hic_plsa_num_topics(const hic_plsa* model) {
  return model ? unwrap(model)->model.num_topics : 0;
}

int hic_plsa_vocab_size(const hic_plsa* model) {
  return model ? unwrap(model)->model.vocab_size : 0;
}

hic_status hic_plsa_fold_in(const hic_plsa* model, const unsigned int* counts, int fold_in_iters,
                            double* topics) {
  return guarded([&] {
    require(model && counts && topics, "null argument");
    const PlsaHandle* handle = unwrap(model);
    hic::BowHistogram hist;
    hist.counts.assign(counts, counts + handle->model.vocab_size);
    hic::EmConfig em = handle->em;
    if (fold_in_iters > 0) em.fold_in_iters = fold_in_iters;
    const std::vector<double> theta = hic::fold_in(handle->model, hist, em);
    for (std::size_t k = 0; k < theta.size(); ++k) topics[k] = theta[k];
  });
}

void hic_plsa_free(hic_plsa* model) { delete reinterpret_cast<PlsaHandle*>(model); }

hic_status hic_classifier_load(const char* path, hic_classifier** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto* clf = new hic::ZeroShotClassifier(hic::load_classifier(path));
    *out = reinterpret_cast<hic_classifier*>(clf);
  });
}

int hic_classifier_class_count(const hic_classifier* classifier) {
  return classifier ? static_cast<int>(unwrap(classifier)->taxonomy.fine_classes.size()) : 0;
}

hic_status hic_classifier_class_name(const hic_classifier* classifier, int fine_id,
                                     hic_string* name) {
  return guarded([&] {
    require(classifier && name, "null argument");
    const auto& fine = unwrap(classifier)->taxonomy.fine_classes;
    require(fine_id >= 0 && fine_id < static_cast<int>(fine.size()), "class id out of range");
    fill_string(name, fine[fine_id].name);
  });
}

hic_status hic_classifier_score(const hic_classifier* classifier, const double* topics,
                                size_t num_topics, int* ranked_ids, double* ranked_scores) {
  return guarded([&] {
    require(classifier && topics && ranked_ids && ranked_scores, "null argument");
    const std::vector<hic::Prediction> ranked = hic::score_topic_mixture(
        *unwrap(classifier), std::span<const double>(topics, num_topics));
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      ranked_ids[i] = ranked[i].class_id;
      ranked_scores[i] = ranked[i].score;
    }
  });
}

void hic_classifier_free(hic_classifier* classifier) {
  delete reinterpret_cast<hic::ZeroShotClassifier*>(classifier);
}

}  // extern "C"
