#include "hic/plsa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "hic/error.hpp"
#include "hic/rng.hpp"

namespace hic {

namespace {

constexpr std::uint32_t kModelVersion = 1;
constexpr double kLogFloor = 1e-12;  // guards log() against underflow, never hit on sane input

struct SparseDoc {
  std::vector<std::int32_t> words;
  std::vector<double> counts;
  double total = 0.0;
};

std::vector<SparseDoc> sparsify(const Corpus& corpus) {
  std::vector<SparseDoc> docs(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& counts = corpus.docs[d].counts;
    for (std::size_t w = 0; w < counts.size(); ++w) {
      if (counts[w] == 0) continue;
      docs[d].words.push_back(static_cast<std::int32_t>(w));
      docs[d].counts.push_back(static_cast<double>(counts[w]));
      docs[d].total += static_cast<double>(counts[w]);
    }
  }
  return docs;
}

}  // namespace

void Corpus::validate() const {
  if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no documents");
  if (vocab_size < 1) throw Error(ErrorCode::EmptyCorpus, "corpus has an empty vocabulary");
  if (!doc_ids.empty() && doc_ids.size() != docs.size())
    throw Error(ErrorCode::DimensionMismatch, "doc ids are not parallel to the documents");
  if (!labels.empty() && labels.size() != docs.size())
    throw Error(ErrorCode::DimensionMismatch, "labels are not parallel to the documents");
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].counts.size() != static_cast<std::size_t>(vocab_size))
      throw Error(ErrorCode::DimensionMismatch,
                  "document " + std::to_string(d) + " does not match the vocabulary size");
    if (docs[d].total() == 0)
      throw Error(ErrorCode::EmptyDocument, "document " + std::to_string(d) + " has no tokens");
  }
}

void EmConfig::validate() const {
  if (max_iters < 1) throw Error(ErrorCode::InvalidConfig, "EM needs at least one iteration");
  if (!(rel_tol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "EM tolerance must be >= 0");
  if (fold_in_iters < 1)
    throw Error(ErrorCode::InvalidConfig, "fold-in needs at least one iteration");
  if (restarts < 1) throw Error(ErrorCode::InvalidConfig, "EM needs at least one restart");
}

static PlsaModel fit_once(const Corpus& corpus, const std::vector<SparseDoc>& docs,
                          int num_topics, const EmConfig& cfg, std::uint64_t seed) {
  const int K = num_topics;
  const int V = corpus.vocab_size;
  const auto N = static_cast<int>(corpus.size());

  PlsaModel model;
  model.num_topics = K;
  model.vocab_size = V;
  model.num_docs = N;

  // Uniform word distributions and random document mixtures. Randomizing only
  // the document side breaks topic symmetry, and a uniform word side keeps the
  // fit equivariant under any relabeling of the vocabulary.
  model.topic_word.assign(static_cast<std::size_t>(K) * V, 1.0 / V);
  model.doc_topic.resize(static_cast<std::size_t>(N) * K);
  Rng rng(seed);
  for (int d = 0; d < N; ++d) {
    double* row = model.doc_topic.data() + static_cast<std::size_t>(d) * K;
    double sum = 0.0;
    for (int k = 0; k < K; ++k) {
      row[k] = 0.1 + rng.next_double();
      sum += row[k];
    }
    for (int k = 0; k < K; ++k) row[k] /= sum;
  }

  std::vector<double> next_tw(static_cast<std::size_t>(K) * V);
  std::vector<double> next_dt(static_cast<std::size_t>(N) * K);
  std::vector<double> post(static_cast<std::size_t>(K));

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    std::fill(next_tw.begin(), next_tw.end(), 0.0);
    std::fill(next_dt.begin(), next_dt.end(), 0.0);

    for (int d = 0; d < N; ++d) {
      const SparseDoc& doc = docs[d];
      const double* theta = model.doc_topic.data() + static_cast<std::size_t>(d) * K;
      double* ndk = next_dt.data() + static_cast<std::size_t>(d) * K;
      for (std::size_t j = 0; j < doc.words.size(); ++j) {
        const std::int32_t w = doc.words[j];
        const double n = doc.counts[j];
        double denom = 0.0;
        for (int k = 0; k < K; ++k) {
          post[k] = theta[k] * model.topic_word[static_cast<std::size_t>(k) * V + w];
          denom += post[k];
        }
        if (denom <= 0.0) continue;
        for (int k = 0; k < K; ++k) {
          const double r = n * post[k] / denom;
          next_tw[static_cast<std::size_t>(k) * V + w] += r;
          ndk[k] += r;
        }
      }
    }

    for (int k = 0; k < K; ++k) {
      double* row = next_tw.data() + static_cast<std::size_t>(k) * V;
      double sum = 0.0;
      for (int w = 0; w < V; ++w) sum += row[w];
      if (sum <= 0.0)
        throw Error(ErrorCode::NumericFailure,
                    "topic " + std::to_string(k) + " lost all mass during EM");
      for (int w = 0; w < V; ++w) row[w] /= sum;
    }
    for (int d = 0; d < N; ++d) {
      double* row = next_dt.data() + static_cast<std::size_t>(d) * K;
      double sum = 0.0;
      for (int k = 0; k < K; ++k) sum += row[k];
      if (sum <= 0.0)
        throw Error(ErrorCode::NumericFailure,
                    "document " + std::to_string(d) + " lost all mass during EM");
      for (int k = 0; k < K; ++k) row[k] /= sum;
    }

    model.topic_word.swap(next_tw);
    model.doc_topic.swap(next_dt);

    const double ll = log_likelihood(model, corpus);
    model.loglik_trace.push_back(ll);
    if (iter > 0) {
      const double prev = model.loglik_trace[model.loglik_trace.size() - 2];
      if (std::abs(ll - prev) <= cfg.rel_tol * std::abs(prev)) break;
    }
  }
  return model;
}

PlsaModel fit(const Corpus& corpus, int num_topics, const EmConfig& cfg) {
  corpus.validate();
  cfg.validate();
  if (num_topics < 1)
    throw Error(ErrorCode::InvalidK, "topic count must be >= 1, got " + std::to_string(num_topics));

  const std::vector<SparseDoc> docs = sparsify(corpus);
  PlsaModel best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.restarts; ++r) {
    PlsaModel model = fit_once(corpus, docs, num_topics, cfg, derive_seed(cfg.rng_seed, r));
    const double ll = model.loglik_trace.back();
    if (ll > best_ll) {
      best_ll = ll;
      best = std::move(model);
    }
  }
  return best;
}

std::vector<double> fold_in(const PlsaModel& model, const BowHistogram& histogram,
                            const EmConfig& cfg) {
  cfg.validate();
  if (histogram.counts.size() != static_cast<std::size_t>(model.vocab_size))
    throw Error(ErrorCode::DimensionMismatch, "histogram does not match the model vocabulary");
  if (histogram.total() == 0)
    throw Error(ErrorCode::EmptyDocument, "cannot fold in a histogram with no tokens");

  const int K = model.num_topics;
  const int V = model.vocab_size;
  std::vector<double> theta(static_cast<std::size_t>(K), 1.0 / K);
  std::vector<double> acc(static_cast<std::size_t>(K));

  for (int iter = 0; iter < cfg.fold_in_iters; ++iter) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int w = 0; w < V; ++w) {
      const double n = histogram.counts[w];
      if (n == 0.0) continue;
      double denom = 0.0;
      for (int k = 0; k < K; ++k)
        denom += theta[k] * model.topic_word[static_cast<std::size_t>(k) * V + w];
      if (denom <= 0.0) continue;  // word unseen by every topic: no evidence
      for (int k = 0; k < K; ++k)
        acc[k] += n * theta[k] * model.topic_word[static_cast<std::size_t>(k) * V + w] / denom;
    }
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += acc[k];
    if (sum <= 0.0) break;  // nothing in the vocabulary carries evidence
    for (int k = 0; k < K; ++k) theta[k] = acc[k] / sum;
  }
  return theta;
}

double log_likelihood(const PlsaModel& model, const Corpus& corpus) {
  if (corpus.vocab_size != model.vocab_size ||
      corpus.size() != static_cast<std::size_t>(model.num_docs))
    throw Error(ErrorCode::DimensionMismatch, "corpus does not match the model shape");
  const int K = model.num_topics;
  const int V = model.vocab_size;
  double ll = 0.0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const double* theta = model.doc_topic.data() + d * K;
    const auto& counts = corpus.docs[d].counts;
    for (int w = 0; w < V; ++w) {
      if (counts[w] == 0) continue;
      double p = 0.0;
      for (int k = 0; k < K; ++k)
        p += theta[k] * model.topic_word[static_cast<std::size_t>(k) * V + w];
      ll += static_cast<double>(counts[w]) * std::log(std::max(p, kLogFloor));
    }
  }
  return ll;
}

void save_model(const PlsaModel& model, const std::filesystem::path& path, const EmConfig& cfg) {
  {
    io::Writer w(path);
    w.magic("PLSA");
    w.scalar<std::uint32_t>(kModelVersion);
    w.scalar<std::int32_t>(model.num_topics);
    w.scalar<std::int32_t>(model.vocab_size);
    w.scalar<std::int32_t>(model.num_docs);
    for (double v : model.topic_word) w.scalar<double>(v);
    for (double v : model.doc_topic) w.scalar<double>(v);
  }

  nlohmann::json side;
  side["em"] = {{"max_iters", cfg.max_iters},
                {"rel_tol", cfg.rel_tol},
                {"rng_seed", cfg.rng_seed},
                {"fold_in_iters", cfg.fold_in_iters},
                {"restarts", cfg.restarts}};
  side["num_topics"] = model.num_topics;
  side["vocab_size"] = model.vocab_size;
  side["num_docs"] = model.num_docs;
  side["loglik_trace"] = model.loglik_trace;

  std::filesystem::path side_path = path;
  side_path += ".json";
  std::ofstream out(side_path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + side_path.string());
  out << side.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + side_path.string());
}

PlsaModel load_model(const std::filesystem::path& path, EmConfig* cfg_out) {
  PlsaModel model;
  {
    io::Reader r(path);
    r.expect_magic("PLSA", "topic model");
    const auto version = r.scalar<std::uint32_t>();
    if (version != kModelVersion)
      throw Error(ErrorCode::CorruptRecord, "unsupported model version " + std::to_string(version));
    model.num_topics = r.scalar<std::int32_t>();
    model.vocab_size = r.scalar<std::int32_t>();
    model.num_docs = r.scalar<std::int32_t>();
    if (model.num_topics < 1 || model.vocab_size < 1 || model.num_docs < 1)
      throw Error(ErrorCode::CorruptRecord, "model header has non-positive dimensions");
    model.topic_word.resize(static_cast<std::size_t>(model.num_topics) * model.vocab_size);
    model.doc_topic.resize(static_cast<std::size_t>(model.num_docs) * model.num_topics);
    for (double& v : model.topic_word) v = r.scalar<double>();
    for (double& v : model.doc_topic) v = r.scalar<double>();
  }

  std::filesystem::path side_path = path;
  side_path += ".json";
  std::ifstream in(side_path);
  if (!in) throw Error(ErrorCode::IoError, "missing model sidecar " + side_path.string());
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "bad model sidecar " + side_path.string() + ": " + e.what());
  }
  model.loglik_trace = side.value("loglik_trace", std::vector<double>{});
  if (cfg_out) {
    EmConfig cfg;
    const auto& em = side.at("em");
    cfg.max_iters = em.value("max_iters", cfg.max_iters);
    cfg.rel_tol = em.value("rel_tol", cfg.rel_tol);
    cfg.rng_seed = em.value("rng_seed", cfg.rng_seed);
    cfg.fold_in_iters = em.value("fold_in_iters", cfg.fold_in_iters);
    cfg.restarts = em.value("restarts", cfg.restarts);
    *cfg_out = cfg;
  }
  return model;
}

}  // namespace hic
