#include "hic/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hic/error.hpp"

namespace hic {

namespace {

void check_index(std::size_t i, std::size_t n) {
  if (i >= n)
    throw Error(ErrorCode::InvalidConfig,
                "item " + std::to_string(i) + " is out of range (dataset holds " +
                    std::to_string(n) + ")");
}

std::string format_id(const char* prefix, int a, int b) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%02d_%02d", prefix, a, b);
  return buf;
}

// Seeded Fisher-Yates; the library shuffle is not bit-specified.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.next_index(i)]);
}

std::vector<std::string> read_name_file(const std::filesystem::path& path) {
  std::vector<std::string> names;
  std::ifstream in(path);
  if (!in) return names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    names.push_back(line);
  }
  while (!names.empty() && names.back().empty()) names.pop_back();
  return names;
}

}  // namespace

// --- Dataset ---------------------------------------------------------------

const RasterImage& Dataset::image(std::size_t i) const {
  check_index(i, size());
  if (kind_ != ItemKind::Images)
    throw Error(ErrorCode::InvalidConfig, "dataset does not hold raster images");
  log_->record(i);
  return images_[i];
}

const ImageFeatures& Dataset::features(std::size_t i) const {
  check_index(i, size());
  if (kind_ != ItemKind::Features)
    throw Error(ErrorCode::InvalidConfig, "dataset does not hold descriptor sets");
  log_->record(i);
  return features_[i];
}

const BowHistogram& Dataset::histogram(std::size_t i) const {
  check_index(i, size());
  if (kind_ != ItemKind::Histograms)
    throw Error(ErrorCode::InvalidConfig, "dataset does not hold histograms");
  log_->record(i);
  return histograms_[i];
}

void Dataset::init_log() {
  log_ = std::make_shared<AccessLog>(size());
}

void Dataset::set_images(std::vector<RasterImage> images) {
  kind_ = ItemKind::Images;
  images_ = std::move(images);
  features_.clear();
  histograms_.clear();
  init_log();
}

void Dataset::set_features(std::vector<ImageFeatures> features) {
  kind_ = ItemKind::Features;
  features_ = std::move(features);
  images_.clear();
  histograms_.clear();
  init_log();
}

void Dataset::set_histograms(std::vector<BowHistogram> histograms, int vocab) {
  kind_ = ItemKind::Histograms;
  histograms_ = std::move(histograms);
  vocab_size = vocab;
  images_.clear();
  features_.clear();
  init_log();
}

// --- Cifar-100 binary --------------------------------------------------

RasterImage decode_cifar_pixels(const std::uint8_t* pixels3072) {
  RasterImage img;
  img.width = 32;
  img.height = 32;
  img.channels = 3;
  img.data.resize(32 * 32 * 3);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 32 * 32; ++i)
      img.data[static_cast<std::size_t>(i) * 3 + c] = pixels3072[c * 1024 + i];
  return img;
}

std::array<std::uint8_t, kCifarRecordSize> encode_cifar_record(const RasterImage& image,
                                                               std::uint8_t coarse,
                                                               std::uint8_t fine) {
  if (image.width != 32 || image.height != 32 || image.channels != 3 || !image.valid())
    throw Error(ErrorCode::DimensionMismatch, "records hold 32x32 RGB images");
  std::array<std::uint8_t, kCifarRecordSize> rec{};
  rec[0] = coarse;
  rec[1] = fine;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 32 * 32; ++i)
      rec[2 + c * 1024 + i] = image.data[static_cast<std::size_t>(i) * 3 + c];
  return rec;
}

Dataset load_cifar100(const std::filesystem::path& dir, int train_per_class, std::uint64_t seed) {
  if (train_per_class < 1)
    throw Error(ErrorCode::InvalidConfig, "train split needs at least one image per class");

  struct Record {
    std::uint8_t coarse = 0;
    std::uint8_t fine = 0;
    RasterImage image;
    std::string id;
  };
  std::vector<Record> records;

  for (const char* name : {"train.bin", "test.bin"}) {
    const std::filesystem::path path = dir / name;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % kCifarRecordSize != 0)
      throw Error(ErrorCode::CorruptRecord,
                  path.string() + " is not a whole number of records");
    const std::size_t n = bytes.size() / kCifarRecordSize;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* rec = bytes.data() + i * kCifarRecordSize;
      Record r;
      r.coarse = rec[0];
      r.fine = rec[1];
      if (r.coarse >= 20 || r.fine >= 100)
        throw Error(ErrorCode::CorruptRecord, path.string() + " record " + std::to_string(i) +
                                                  " has labels out of range");
      r.image = decode_cifar_pixels(rec + 2);
      r.id = std::string(name) + ":" + std::to_string(i);
      records.push_back(std::move(r));
    }
  }

  const std::vector<std::string> fine_names = read_name_file(dir / "fine_label_names.txt");
  const std::vector<std::string> coarse_names = read_name_file(dir / "coarse_label_names.txt");
  auto coarse_name = [&](int raw) {
    if (raw < static_cast<int>(coarse_names.size()) && !coarse_names[raw].empty())
      return coarse_names[raw];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "coarse%02d", raw);
    return std::string(buf);
  };
  auto fine_name = [&](int raw) {
    if (raw < static_cast<int>(fine_names.size()) && !fine_names[raw].empty())
      return fine_names[raw];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fine%02d", raw);
    return std::string(buf);
  };

  // Dense ids in raw label order, restricted to labels that actually occur.
  std::array<int, 20> coarse_dense;
  std::array<int, 100> fine_dense;
  coarse_dense.fill(-1);
  fine_dense.fill(-1);
  std::array<int, 100> fine_parent;
  fine_parent.fill(-1);
  for (const Record& r : records) {
    if (fine_parent[r.fine] < 0)
      fine_parent[r.fine] = r.coarse;
    else if (fine_parent[r.fine] != r.coarse)
      throw Error(ErrorCode::CorruptRecord,
                  "fine label " + std::to_string(r.fine) + " appears under two coarse labels");
  }

  Taxonomy tax;
  for (int raw = 0; raw < 20; ++raw) {
    bool used = false;
    for (int f = 0; f < 100; ++f) used |= fine_parent[f] == raw;
    if (!used) continue;
    coarse_dense[raw] = static_cast<int>(tax.coarse_classes.size());
    tax.coarse_classes.push_back({coarse_name(raw), {}});
  }
  for (int raw = 0; raw < 100; ++raw) {
    if (fine_parent[raw] < 0) continue;
    const int parent = coarse_dense[fine_parent[raw]];
    fine_dense[raw] = static_cast<int>(tax.fine_classes.size());
    tax.fine_classes.push_back({fine_name(raw), parent, true});
    tax.coarse_classes[parent].fine_ids.push_back(fine_dense[raw]);
  }

  // Pool both files, then draw a seeded train split per fine class.
  std::vector<std::vector<std::size_t>> per_class(tax.fine_classes.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    per_class[fine_dense[records[i].fine]].push_back(i);

  std::vector<Split> split(records.size(), Split::Test);
  for (std::size_t f = 0; f < per_class.size(); ++f) {
    auto& idx = per_class[f];
    if (static_cast<int>(idx.size()) < train_per_class)
      throw Error(ErrorCode::ConfigError,
                  "class '" + tax.fine_classes[f].name + "' has " + std::to_string(idx.size()) +
                      " images, fewer than the train split " + std::to_string(train_per_class));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(f)));
    shuffle(idx, rng);
    for (int i = 0; i < train_per_class; ++i) split[idx[i]] = Split::Train;
  }

  Dataset ds;
  ds.taxonomy = std::move(tax);
  std::vector<RasterImage> images;
  images.reserve(records.size());
  for (Record& r : records) {
    ds.fine_labels.push_back(fine_dense[r.fine]);
    ds.item_ids.push_back(std::move(r.id));
    images.push_back(std::move(r.image));
  }
  ds.split = std::move(split);
  ds.set_images(std::move(images));
  return ds;
}

// --- Labeled image folders ---------------------------------------------------

SplitSpec SplitSpec::parse(const std::string& text) {
  SplitSpec spec;
  std::size_t pos = 0;
  try {
    spec.train_per_class = std::stoi(text, &pos);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "bad split '" + text + "', expected '<n>/rest'");
  }
  const std::string rest = text.substr(pos);
  if (!rest.empty() && rest != "/rest")
    throw Error(ErrorCode::ConfigError, "bad split '" + text + "', expected '<n>/rest'");
  if (spec.train_per_class < 1)
    throw Error(ErrorCode::ConfigError, "train split must be >= 1");
  return spec;
}

Dataset load_image_folder(const std::filesystem::path& root, const Taxonomy& taxonomy,
                          const SplitSpec& split_spec, std::uint64_t seed) {
  if (!std::filesystem::is_directory(root))
    throw Error(ErrorCode::IoError, root.string() + " is not a directory");

  std::vector<std::string> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path().filename().string());
  std::sort(dirs.begin(), dirs.end());

  std::string unknown;
  for (const std::string& d : dirs)
    if (taxonomy.find_fine(d) < 0) unknown += (unknown.empty() ? "" : ", ") + d;
  if (!unknown.empty())
    throw Error(ErrorCode::MissingClassDir,
                "directories without a fine class: " + unknown);

  std::string absent;
  for (const auto& fine : taxonomy.fine_classes)
    if (std::find(dirs.begin(), dirs.end(), fine.name) == dirs.end())
      absent += (absent.empty() ? "" : ", ") + fine.name;
  if (!absent.empty())
    throw Error(ErrorCode::MissingClassDir, "fine classes without a directory: " + absent);

  auto is_image = [](const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
  };

  Dataset ds;
  ds.taxonomy = taxonomy;
  std::vector<RasterImage> images;

  for (const std::string& dir : dirs) {
    const auto fine_id = static_cast<FineClassId>(taxonomy.find_fine(dir));
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(root / dir))
      if (entry.is_regular_file() && is_image(entry.path()))
        files.push_back(entry.path().filename().string());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw Error(ErrorCode::EmptyClass, "class directory '" + dir + "' holds no images");
    if (static_cast<int>(files.size()) < split_spec.train_per_class)
      throw Error(ErrorCode::ConfigError,
                  "class '" + dir + "' has " + std::to_string(files.size()) +
                      " images, fewer than the train split " +
                      std::to_string(split_spec.train_per_class));

    std::vector<std::size_t> order(files.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(fine_id)));
    shuffle(order, rng);
    std::vector<Split> file_split(files.size(), Split::Test);
    for (int i = 0; i < split_spec.train_per_class; ++i) file_split[order[i]] = Split::Train;

    for (std::size_t i = 0; i < files.size(); ++i) {
      images.push_back(decode_image_file(root / dir / files[i]));
      ds.fine_labels.push_back(fine_id);
      ds.split.push_back(file_split[i]);
      ds.item_ids.push_back(dir + "/" + files[i]);
    }
  }
  ds.set_images(std::move(images));
  return ds;
}

void mark_unseen(Taxonomy& taxonomy, int q, std::uint64_t seed,
                 std::span<const FineClassId> designated_first) {
  if (q < 0) throw Error(ErrorCode::ConfigError, "unseen count must be >= 0");
  for (auto& fine : taxonomy.fine_classes) fine.seen = true;
  if (q == 0) return;

  for (std::size_t c = 0; c < taxonomy.coarse_classes.size(); ++c) {
    const auto& coarse = taxonomy.coarse_classes[c];
    if (q > static_cast<int>(coarse.fine_ids.size()))
      throw Error(ErrorCode::ConfigError,
                  "coarse class '" + coarse.name + "' has " +
                      std::to_string(coarse.fine_ids.size()) + " fine classes, cannot hide " +
                      std::to_string(q));

    std::vector<FineClassId> picks;
    for (FineClassId f : designated_first)
      if (taxonomy.fine_classes[f].coarse_id == static_cast<CoarseClassId>(c) &&
          static_cast<int>(picks.size()) < q &&
          std::find(picks.begin(), picks.end(), f) == picks.end())
        picks.push_back(f);

    std::vector<FineClassId> pool;
    for (FineClassId f : coarse.fine_ids)
      if (std::find(picks.begin(), picks.end(), f) == picks.end()) pool.push_back(f);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    shuffle(pool, rng);
    for (FineClassId f : pool) {
      if (static_cast<int>(picks.size()) >= q) break;
      picks.push_back(f);
    }
    for (FineClassId f : picks) taxonomy.fine_classes[f].seen = false;
  }
}

void write_split_manifest(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "image_id,class,split\n";
  for (std::size_t i = 0; i < dataset.size(); ++i)
    out << dataset.item_ids[i] << ','
        << dataset.taxonomy.fine_classes[dataset.fine_labels[i]].name << ','
        << (dataset.split[i] == Split::Train ? "train" : "test") << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

// --- Synthetic corpora --------------------------------------------------------

void SyntheticSpec::validate() const {
  if (coarse_count < 1 || fine_per_coarse < 1)
    throw Error(ErrorCode::InvalidSpec, "taxonomy shape must be positive");
  if (num_topics < 1) throw Error(ErrorCode::InvalidSpec, "topic count must be >= 1");
  if (vocab_size < num_topics)
    throw Error(ErrorCode::InvalidSpec, "every topic needs at least one word");
  if (topic_overlap == TopicOverlap::SharedPrivate) {
    if (fine_per_coarse < 2)
      throw Error(ErrorCode::InvalidSpec, "shared/private structure needs >= 2 siblings");
    if (num_topics != coarse_count * fine_per_coarse)
      throw Error(ErrorCode::InvalidSpec,
                  "shared/private structure needs topics = coarse * fine_per_coarse");
  }
  if (docs_per_class < 2) throw Error(ErrorCode::InvalidSpec, "each class needs >= 2 documents");
  if (tokens_per_doc < 1) throw Error(ErrorCode::InvalidSpec, "documents need >= 1 token");
  if (train_per_class < 1 || train_per_class >= docs_per_class)
    throw Error(ErrorCode::InvalidSpec, "train split must leave test documents");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int K = spec.num_topics;
  const int V = spec.vocab_size;
  const int F = spec.coarse_count * spec.fine_per_coarse;

  SyntheticData data;

  // Topic k owns the contiguous word band [k*V/K, (k+1)*V/K), uniform inside.
  data.true_topic_word.assign(static_cast<std::size_t>(K) * V, 0.0);
  std::vector<int> band_lo(K), band_hi(K);
  for (int k = 0; k < K; ++k) {
    band_lo[k] = k * V / K;
    band_hi[k] = (k + 1) * V / K;
    for (int w = band_lo[k]; w < band_hi[k]; ++w)
      data.true_topic_word[static_cast<std::size_t>(k) * V + w] = 1.0 / (band_hi[k] - band_lo[k]);
  }

  Taxonomy tax;
  for (int c = 0; c < spec.coarse_count; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "group%02d", c);
    Taxonomy::CoarseClass coarse{buf, {}};
    for (int i = 0; i < spec.fine_per_coarse; ++i) {
      const auto fine_id = static_cast<FineClassId>(tax.fine_classes.size());
      tax.fine_classes.push_back({format_id("group", c, i), c, true});
      coarse.fine_ids.push_back(fine_id);
    }
    tax.coarse_classes.push_back(std::move(coarse));
  }

  data.class_mixtures.assign(F, std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (int c = 0; c < spec.coarse_count; ++c) {
    for (int i = 0; i < spec.fine_per_coarse; ++i) {
      const int f = c * spec.fine_per_coarse + i;
      auto& mix = data.class_mixtures[f];
      if (spec.topic_overlap == TopicOverlap::Disjoint) {
        mix[f % K] = 1.0;
        continue;
      }
      // Topics of coarse c: one shared plus one private per non-union sibling.
      const int shared = c * spec.fine_per_coarse;
      if (i < spec.fine_per_coarse - 1) {
        mix[shared] = 0.5;
        mix[shared + 1 + i] = 0.5;
      } else {
        // Union class: everything its siblings use, evenly.
        for (int t = 0; t < spec.fine_per_coarse; ++t)
          mix[shared + t] = 1.0 / spec.fine_per_coarse;
        data.designated_unseen.push_back(static_cast<FineClassId>(f));
      }
    }
  }

  std::vector<BowHistogram> docs;
  Dataset& ds = data.dataset;
  for (int f = 0; f < F; ++f) {
    Rng rng(derive_seed(spec.rng_seed, static_cast<std::uint64_t>(f)));
    const auto& mix = data.class_mixtures[f];
    for (int d = 0; d < spec.docs_per_class; ++d) {
      // Each document draws its own weights over the class's topic support.
      // Identical per-doc mixtures would let a single merged topic explain a
      // whole class, leaving the factored solution unidentifiable.
      std::vector<double> doc_mix(static_cast<std::size_t>(K), 0.0);
      double total = 0.0;
      for (int k = 0; k < K; ++k) {
        if (mix[k] <= 0.0) continue;
        doc_mix[k] = 0.05 + rng.next_double();
        total += doc_mix[k];
      }
      for (int k = 0; k < K; ++k) doc_mix[k] /= total;
      BowHistogram hist;
      hist.counts.assign(static_cast<std::size_t>(V), 0);
      for (int t = 0; t < spec.tokens_per_doc; ++t) {
        double u = rng.next_double();
        int topic = K - 1;
        for (int k = 0; k < K; ++k) {
          u -= doc_mix[k];
          if (u < 0.0) {
            topic = k;
            break;
          }
        }
        const int span = band_hi[topic] - band_lo[topic];
        const int word = band_lo[topic] + static_cast<int>(rng.next_index(span));
        hist.counts[word]++;
      }
      docs.push_back(std::move(hist));
      ds.fine_labels.push_back(static_cast<FineClassId>(f));
      ds.split.push_back(d < spec.train_per_class ? Split::Train : Split::Test);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "/doc%03d", d);
      ds.item_ids.push_back(tax.fine_classes[f].name + buf);
    }
  }
  ds.taxonomy = std::move(tax);
  ds.set_histograms(std::move(docs), V);
  return data;
}

// --- Synthetic images ----------------------------------------------------------

void SyntheticImageSpec::validate() const {
  if (coarse_count < 1 || fine_per_coarse < 1)
    throw Error(ErrorCode::InvalidSpec, "taxonomy shape must be positive");
  if (width < 8 || height < 8)
    throw Error(ErrorCode::InvalidSpec, "images must be at least 8x8");
  if (images_per_class < 2)
    throw Error(ErrorCode::InvalidSpec, "each class needs >= 2 images");
  if (train_per_class < 1 || train_per_class >= images_per_class)
    throw Error(ErrorCode::InvalidSpec, "train split must leave test images");
  if (noise < 0.0) throw Error(ErrorCode::InvalidSpec, "noise amplitude must be >= 0");
}

Dataset generate_synthetic_images(const SyntheticImageSpec& spec) {
  spec.validate();
  const int F = spec.coarse_count * spec.fine_per_coarse;

  Taxonomy tax;
  for (int c = 0; c < spec.coarse_count; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "band%02d", c);
    Taxonomy::CoarseClass coarse{buf, {}};
    for (int i = 0; i < spec.fine_per_coarse; ++i) {
      const auto fine_id = static_cast<FineClassId>(tax.fine_classes.size());
      tax.fine_classes.push_back({format_id("band", c, i), c, true});
      coarse.fine_ids.push_back(fine_id);
    }
    tax.coarse_classes.push_back(std::move(coarse));
  }

  // Stripe angle: coarse classes own disjoint angular bands, siblings spread
  // evenly inside their band.
  const double band_width = 180.0 / spec.coarse_count;
  constexpr double kWavelength = 8.0;
  constexpr double kAmplitude = 80.0;

  Dataset ds;
  std::vector<RasterImage> images;
  for (int f = 0; f < F; ++f) {
    const int c = f / spec.fine_per_coarse;
    const int i = f % spec.fine_per_coarse;
    const double angle_deg = c * band_width + (i + 0.5) * band_width / spec.fine_per_coarse;
    const double theta = angle_deg * std::numbers::pi / 180.0;

    Rng rng(derive_seed(spec.rng_seed, static_cast<std::uint64_t>(f)));
    for (int n = 0; n < spec.images_per_class; ++n) {
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      RasterImage img;
      img.width = spec.width;
      img.height = spec.height;
      img.channels = 1;
      img.data.resize(static_cast<std::size_t>(spec.width) * spec.height);
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          const double along = x * std::cos(theta) + y * std::sin(theta);
          double v = 127.5 + kAmplitude * std::sin(2.0 * std::numbers::pi * along / kWavelength +
                                                   phase);
          if (spec.noise > 0.0) v += rng.uniform(-spec.noise, spec.noise);
          img.data[static_cast<std::size_t>(y) * spec.width + x] =
              static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
      images.push_back(std::move(img));
      ds.fine_labels.push_back(static_cast<FineClassId>(f));
      ds.split.push_back(n < spec.train_per_class ? Split::Train : Split::Test);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "/img%03d", n);
      ds.item_ids.push_back(tax.fine_classes[f].name + buf);
    }
  }
  ds.taxonomy = std::move(tax);
  ds.set_images(std::move(images));
  return ds;
}

}  // namespace hic
