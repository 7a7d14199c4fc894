/* C interface to the hiczero library.
 *
 * Every function that can fail returns hic_status; on failure the thread's
 * last-error message and code are set (hic_last_error / hic_last_error_name).
 * Strings produced by the library come back as hic_string buffers owned by
 * the caller; release them with hic_string_free. Objects come back as opaque
 * handles with matching _free functions.
 */
#ifndef HICZERO_H
#define HICZERO_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hic_status {
  HIC_OK = 0,
  HIC_ERR_CONFIG = 2,  /* bad configuration or arguments */
  HIC_ERR_DATA = 3,    /* unreadable, malformed, or inconsistent data */
  HIC_ERR_NUMERIC = 4  /* numeric failure inside a fit */
} hic_status;

const char* hic_version(void);

/* Thread-local description of the most recent failure; empty after success. */
const char* hic_last_error(void);
const char* hic_last_error_name(void);

typedef struct hic_string {
  char* data;  /* NUL-terminated */
  size_t size; /* strlen(data) */
} hic_string;

void hic_string_free(hic_string* s);

/* --- experiment pipeline ------------------------------------------------
 * Configurations travel as JSON text; missing fields take their defaults.
 * hic_default_config yields the complete default configuration. */
hic_status hic_default_config(hic_string* config_json);
hic_status hic_run_pipeline(const char* config_json, hic_string* report_json);
hic_status hic_report_to_text(const char* report_json, hic_string* text);
hic_status hic_sweep_q(const char* config_json, const int* q_values, size_t num_q, int repeats,
                       hic_string* summary_csv, hic_string* accuracy_vs_q_csv, double* spread);
/* variants: comma-separated subset of fine,coarse,jcofi,cofi */
hic_status hic_compare_codebooks(const char* config_json, const char* variants,
                                 hic_string* table_csv);
hic_status hic_generate_synth(const char* config_json);

/* Stage commands. Each reuses artifacts already present under the config's
 * out_dir and writes its own. */
hic_status hic_extract(const char* config_json);
hic_status hic_train_codebook(const char* config_json);
hic_status hic_fit_plsa(const char* config_json);
hic_status hic_build_classifier(const char* config_json);
hic_status hic_classify(const char* config_json, hic_string* predictions_csv);

/* --- class hierarchy ----------------------------------------------------- */
typedef struct hic_taxonomy hic_taxonomy;

hic_status hic_taxonomy_parse(const char* text, int permissive, hic_taxonomy** out);
hic_status hic_taxonomy_load(const char* path, int permissive, hic_taxonomy** out);
hic_status hic_taxonomy_to_text(const hic_taxonomy* taxonomy, hic_string* out);
size_t hic_taxonomy_coarse_count(const hic_taxonomy* taxonomy);
size_t hic_taxonomy_fine_count(const hic_taxonomy* taxonomy);
size_t hic_taxonomy_unseen_count(const hic_taxonomy* taxonomy);
int hic_taxonomy_find_fine(const hic_taxonomy* taxonomy, const char* name); /* -1 if absent */
void hic_taxonomy_free(hic_taxonomy* taxonomy);

/* --- descriptors ---------------------------------------------------------- */
typedef struct hic_features hic_features;

hic_status hic_features_from_image_file(const char* path, int levels, int bins, int angle_range,
                                        hic_features** out);
hic_status hic_features_from_gray(const unsigned char* pixels, int width, int height, int levels,
                                  int bins, int angle_range, hic_features** out);
size_t hic_features_count(const hic_features* features);
void hic_features_free(hic_features* features);

/* --- codebook --------------------------------------------------------------- */
typedef struct hic_codebook hic_codebook;

hic_status hic_codebook_load(const char* path, hic_codebook** out);
int hic_codebook_vocab_size(const hic_codebook* codebook);
/* counts must hold vocab_size entries */
hic_status hic_codebook_quantize(const hic_codebook* codebook, const hic_features* features,
                                 unsigned int* counts);
void hic_codebook_free(hic_codebook* codebook);

/* --- topic model ---------------------------------------------------------- */
typedef struct hic_plsa hic_plsa;

hic_status hic_plsa_load(const char* path, hic_plsa** out);
int hic_plsa_num_topics(const hic_plsa* model);
int hic_plsa_vocab_size(const hic_plsa* model);
/* counts holds vocab_size entries, topics receives num_topics entries */
hic_status hic_plsa_fold_in(const hic_plsa* model, const unsigned int* counts, int fold_in_iters,
                            double* topics);
void hic_plsa_free(hic_plsa* model);

/* --- classifier ------------------------------------------------------------- */
typedef struct hic_classifier hic_classifier;

hic_status hic_classifier_load(const char* path, hic_classifier** out);
int hic_classifier_class_count(const hic_classifier* classifier);
hic_status hic_classifier_class_name(const hic_classifier* classifier, int fine_id,
                                     hic_string* name);
/* topics holds num_topics entries; ranked_ids/ranked_scores receive
 * class_count entries ordered best first */
hic_status hic_classifier_score(const hic_classifier* classifier, const double* topics,
                                size_t num_topics, int* ranked_ids, double* ranked_scores);
void hic_classifier_free(hic_classifier* classifier);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* HICZERO_H */
