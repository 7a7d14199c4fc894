#include "hic/taxonomy.hpp"

#include <fstream>
#include <sstream>

#include "hic/error.hpp"

namespace hic {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

constexpr const char* kUnseenTag = "[unseen]";

}  // namespace

int Taxonomy::find_fine(const std::string& name) const {
  for (std::size_t i = 0; i < fine_classes.size(); ++i)
    if (fine_classes[i].name == name) return static_cast<int>(i);
  return -1;
}

int Taxonomy::find_coarse(const std::string& name) const {
  for (std::size_t i = 0; i < coarse_classes.size(); ++i)
    if (coarse_classes[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<FineClassId> Taxonomy::seen_siblings(FineClassId fine_id) const {
  if (fine_id < 0 || fine_id >= static_cast<FineClassId>(fine_classes.size()))
    throw Error(ErrorCode::InvalidConfig, "fine class id out of range");
  std::vector<FineClassId> siblings;
  const CoarseClassId parent = fine_classes[fine_id].coarse_id;
  for (FineClassId f : coarse_classes[parent].fine_ids)
    if (f != fine_id && fine_classes[f].seen) siblings.push_back(f);
  return siblings;
}

std::size_t Taxonomy::unseen_count() const {
  std::size_t n = 0;
  for (const FineClass& f : fine_classes)
    if (!f.seen) ++n;
  return n;
}

Taxonomy parse_taxonomy(const std::string& text, TaxonomyMode mode) {
  Taxonomy tax;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  int current_coarse = -1;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;

    auto fail = [&](ErrorCode code, const std::string& what) {
      throw Error(code, "line " + std::to_string(line_no) + ": " + what);
    };

    if (line.rfind("coarse:", 0) == 0) {
      const std::string name = trim(line.substr(7));
      if (name.empty()) fail(ErrorCode::ParseError, "coarse class has no name");
      const int existing = tax.find_coarse(name);
      if (existing >= 0) {
        if (mode == TaxonomyMode::Strict)
          fail(ErrorCode::DuplicateClass, "coarse class '" + name + "' appears twice");
        current_coarse = existing;  // permissive: extend the first block
      } else {
        current_coarse = static_cast<int>(tax.coarse_classes.size());
        tax.coarse_classes.push_back({name, {}});
      }
      continue;
    }

    if (line.rfind("fine:", 0) == 0) {
      std::string name = trim(line.substr(5));
      bool seen = true;
      if (name.size() >= std::string(kUnseenTag).size() &&
          name.ends_with(kUnseenTag)) {
        name = trim(name.substr(0, name.size() - std::string(kUnseenTag).size()));
        seen = false;
      }
      if (name.empty()) fail(ErrorCode::ParseError, "fine class has no name");
      if (current_coarse < 0)
        fail(ErrorCode::OrphanFineClass, "fine class '" + name + "' has no coarse parent");
      if (tax.find_fine(name) >= 0) {
        if (mode == TaxonomyMode::Strict)
          fail(ErrorCode::DuplicateClass, "fine class '" + name + "' appears twice");
        continue;  // permissive: the first parent keeps the class
      }
      const auto fine_id = static_cast<FineClassId>(tax.fine_classes.size());
      tax.fine_classes.push_back({name, current_coarse, seen});
      tax.coarse_classes[current_coarse].fine_ids.push_back(fine_id);
      continue;
    }

    fail(ErrorCode::ParseError, "expected 'coarse:' or 'fine:', got '" + line + "'");
  }

  if (tax.fine_classes.empty())
    throw Error(ErrorCode::ParseError, "taxonomy defines no fine classes");
  return tax;
}

Taxonomy load_taxonomy_file(const std::filesystem::path& path, TaxonomyMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open taxonomy " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_taxonomy(buf.str(), mode);
}

std::string taxonomy_to_text(const Taxonomy& taxonomy) {
  std::ostringstream out;
  for (const auto& coarse : taxonomy.coarse_classes) {
    out << "coarse: " << coarse.name << '\n';
    for (FineClassId f : coarse.fine_ids) {
      const auto& fine = taxonomy.fine_classes[f];
      out << "  fine: " << fine.name;
      if (!fine.seen) out << ' ' << kUnseenTag;
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace hic
