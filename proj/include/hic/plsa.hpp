#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hic/forest.hpp"

namespace hic {

struct Corpus {
  int vocab_size = 0;
  std::vector<BowHistogram> docs;
  std::vector<std::string> doc_ids;       // optional, parallel to docs
  std::vector<FineClassId> labels;        // optional, parallel to docs

  std::size_t size() const { return docs.size(); }
  void validate() const;  // throws EmptyCorpus / DimensionMismatch / EmptyDocument
};

struct EmConfig {
  int max_iters = 500;
  double rel_tol = 1e-6;
  std::uint64_t rng_seed = 0;
  int fold_in_iters = 50;
  int restarts = 1;  // independent EM runs; the best final log-likelihood wins

  void validate() const;
};

struct PlsaModel {
  int num_topics = 0;
  int vocab_size = 0;
  int num_docs = 0;
  std::vector<double> topic_word;     // K x V row-major, rows sum to 1
  std::vector<double> doc_topic;      // N x K row-major, rows sum to 1
  std::vector<double> loglik_trace;   // one entry per EM iteration

  std::span<const double> topic_row(int k) const {
    return {topic_word.data() + static_cast<std::size_t>(k) * vocab_size,
            static_cast<std::size_t>(vocab_size)};
  }
  std::span<const double> doc_row(int d) const {
    return {doc_topic.data() + static_cast<std::size_t>(d) * num_topics,
            static_cast<std::size_t>(num_topics)};
  }
};

// EM fit of p(w|z) and p(z|d). doc_topic rows start from seeded random
// positives; topic_word rows start uniform, which keeps the whole fit
// equivariant under vocabulary permutation. Restart r draws its init from
// derive_seed(rng_seed, r); ties in final log-likelihood keep the earliest.
PlsaModel fit(const Corpus& corpus, int num_topics, const EmConfig& cfg);

// Topic mixture for a held-out histogram with topic_word frozen.
std::vector<double> fold_in(const PlsaModel& model, const BowHistogram& histogram,
                            const EmConfig& cfg);

// sum over (d,w) of n(d,w) * log p(w|d); zero counts contribute nothing
double log_likelihood(const PlsaModel& model, const Corpus& corpus);

// Binary model ("PLSA" magic, f64 matrices) plus a JSON sidecar at
// <path>.json carrying the log-likelihood trace and the EM config.
void save_model(const PlsaModel& model, const std::filesystem::path& path, const EmConfig& cfg);
PlsaModel load_model(const std::filesystem::path& path, EmConfig* cfg_out = nullptr);

}  // namespace hic
