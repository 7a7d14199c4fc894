#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hic/forest.hpp"

namespace hic {

// Two-level class hierarchy: coarse parents, fine children, with a
// seen/unseen flag per fine class.
struct Taxonomy {
  struct CoarseClass {
    std::string name;
    std::vector<FineClassId> fine_ids;
  };
  struct FineClass {
    std::string name;
    CoarseClassId coarse_id = -1;
    bool seen = true;
  };

  std::vector<CoarseClass> coarse_classes;
  std::vector<FineClass> fine_classes;

  int find_fine(const std::string& name) const;    // -1 when absent
  int find_coarse(const std::string& name) const;  // -1 when absent

  std::vector<FineClassId> seen_siblings(FineClassId fine_id) const;
  std::size_t unseen_count() const;
};

enum class TaxonomyMode {
  Strict,      // duplicate fine classes are rejected
  Permissive,  // duplicates keep their first parent (printed tables need this)
};

// Text format: one coarse class per block,
//   coarse: <name>
//     fine: <name> [unseen]
// with '#' comments. Throws ParseError (with line number), OrphanFineClass,
// DuplicateClass.
Taxonomy parse_taxonomy(const std::string& text, TaxonomyMode mode = TaxonomyMode::Strict);
Taxonomy load_taxonomy_file(const std::filesystem::path& path, TaxonomyMode mode = TaxonomyMode::Strict);
std::string taxonomy_to_text(const Taxonomy& taxonomy);

}  // namespace hic
