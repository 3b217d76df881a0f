#pragma once

// Five-level category tree: gender > family > category > sub-category, with
// attributes attached to one or more categories.
//
// Tree file: one node per line, tab separated
//   level <TAB> id <TAB> name <TAB> parent_or_attachment_list
// level is one of gender, family, category, subcategory, attribute. The last
// field holds the parent id (gender lines use "-") or, for attributes, a
// comma-separated list of category ids. Blank lines and lines starting with
// '#' are ignored. Ids are unique across the whole file.

#include <array>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hmc/checkpoint.hpp"

namespace hmc {

enum class Level { gender = 0, family = 1, category = 2, subcategory = 3, attribute = 4 };

inline constexpr std::array<Level, 5> kAllLevels = {Level::gender, Level::family, Level::category,
                                                    Level::subcategory, Level::attribute};

inline std::string_view level_name(Level l) {
  switch (l) {
    case Level::gender: return "gender";
    case Level::family: return "family";
    case Level::category: return "category";
    case Level::subcategory: return "subcategory";
    case Level::attribute: return "attribute";
  }
  return "?";
}

inline std::optional<Level> parse_level(std::string_view s) {
  for (Level l : kAllLevels) {
    if (s == level_name(l)) return l;
  }
  if (s == "sub-category") return Level::subcategory;
  return std::nullopt;
}

class UnknownLabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TreeNode {
  Level level;
  std::string id;
  std::string name;
  std::vector<std::string> links;  // parent ids, or attached category ids for attributes
};

struct Ancestors {
  std::size_t category;
  std::size_t family;
  std::size_t gender;
};

struct Violation {
  std::string node_id;
  std::string message;
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    out.emplace_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::optional<Level> parent_level(Level l) {
  switch (l) {
    case Level::family: return Level::gender;
    case Level::category: return Level::family;
    case Level::subcategory: return Level::category;
    default: return std::nullopt;
  }
}

}  // namespace detail

/// Nodes are indexed densely per level in insertion order; those indices are
/// the class ids used by models and metrics. Immutable once built.
class CategoryTree {
 public:
  /// Adds a node; duplicate ids are rejected.
  void add(Level level, std::string id, std::string name, std::vector<std::string> links) {
    if (id.empty()) throw FormatError("empty node id");
    if (by_id_.count(id)) throw FormatError("duplicate node id: " + id);
    auto& bucket = levels_[static_cast<int>(level)];
    by_id_.emplace(id, std::make_pair(level, bucket.size()));
    bucket.push_back(TreeNode{level, std::move(id), std::move(name), std::move(links)});
  }

  static CategoryTree parse(std::string_view text) {
    CategoryTree tree;
    std::size_t line_no = 0;
    for (const std::string& raw : detail::split(text, '\n')) {
      ++line_no;
      std::string line = raw;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      auto fields = detail::split(line, '\t');
      if (fields.size() != 4) {
        throw FormatError("tree line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
      }
      auto level = parse_level(fields[0]);
      if (!level) throw FormatError("tree line " + std::to_string(line_no) + ": unknown level " + fields[0]);
      std::vector<std::string> links;
      if (fields[3] != "-" && !fields[3].empty()) {
        for (auto& l : detail::split(fields[3], ',')) {
          if (!l.empty()) links.push_back(std::move(l));
        }
      }
      tree.add(*level, fields[1], fields[2], std::move(links));
    }
    return tree;
  }

  static CategoryTree load(const std::string& path) { return parse(detail::read_file(path)); }

  std::string serialize() const {
    std::ostringstream os;
    for (Level l : kAllLevels) {
      for (const TreeNode& n : levels_[static_cast<int>(l)]) {
        os << level_name(l) << '\t' << n.id << '\t' << n.name << '\t';
        if (n.links.empty()) {
          os << '-';
        } else {
          for (std::size_t i = 0; i < n.links.size(); ++i) os << (i ? "," : "") << n.links[i];
        }
        os << '\n';
      }
    }
    return os.str();
  }

  std::size_t count(Level l) const { return levels_[static_cast<int>(l)].size(); }

  const TreeNode& node(Level l, std::size_t index) const {
    const auto& bucket = levels_[static_cast<int>(l)];
    if (index >= bucket.size()) {
      throw UnknownLabelError("no " + std::string(level_name(l)) + " with index " + std::to_string(index));
    }
    return bucket[index];
  }

  std::optional<std::pair<Level, std::size_t>> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  /// Index of `id` at `level`; throws UnknownLabelError otherwise.
  std::size_t index_of(Level level, const std::string& id) const {
    auto f = find(id);
    if (!f || f->first != level) {
      throw UnknownLabelError("unknown " + std::string(level_name(level)) + " id: " + id);
    }
    return f->second;
  }

  /// Parent index at the level above. Uses the first link; validate_tree
  /// reports nodes with zero or several parents.
  std::size_t parent_index(Level level, std::size_t index) const {
    const auto pl = detail::parent_level(level);
    if (!pl) throw ContractError(std::string(level_name(level)) + " nodes have no parent level");
    const TreeNode& n = node(level, index);
    if (n.links.empty()) throw UnknownLabelError("node " + n.id + " has no parent");
    return index_of(*pl, n.links.front());
  }

  Ancestors infer_ancestors(std::size_t sub_index) const {
    Ancestors a{};
    a.category = parent_index(Level::subcategory, sub_index);
    a.family = parent_index(Level::category, a.category);
    a.gender = parent_index(Level::family, a.family);
    return a;
  }

  Ancestors infer_ancestors(const std::string& sub_id) const {
    return infer_ancestors(index_of(Level::subcategory, sub_id));
  }

  std::vector<std::size_t> subcategories_of(std::size_t cat) const {
    std::vector<std::size_t> out;
    const std::string& cid = node(Level::category, cat).id;
    for (std::size_t s = 0; s < count(Level::subcategory); ++s) {
      const auto& links = node(Level::subcategory, s).links;
      if (!links.empty() && links.front() == cid) out.push_back(s);
    }
    return out;
  }

  std::vector<std::size_t> attributes_of(std::size_t cat) const {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < count(Level::attribute); ++a) {
      if (attribute_attached(a, cat)) out.push_back(a);
    }
    return out;
  }

  bool attribute_attached(std::size_t attr, std::size_t cat) const {
    const std::string& cid = node(Level::category, cat).id;
    for (const auto& l : node(Level::attribute, attr).links) {
      if (l == cid) return true;
    }
    return false;
  }

 private:
  std::array<std::vector<TreeNode>, 5> levels_;
  std::unordered_map<std::string, std::pair<Level, std::size_t>> by_id_;
};

/// Checks every structural rule; an empty result means the tree is valid.
inline std::vector<Violation> validate_tree(const CategoryTree& tree) {
  std::vector<Violation> out;
  for (Level l : kAllLevels) {
    for (std::size_t i = 0; i < tree.count(l); ++i) {
      const TreeNode& n = tree.node(l, i);
      if (l == Level::gender) {
        if (!n.links.empty()) out.push_back({n.id, "gender node must not have a parent"});
        continue;
      }
      if (l == Level::attribute) {
        if (n.links.empty()) out.push_back({n.id, "attribute has empty attachment set"});
        for (const auto& link : n.links) {
          auto f = tree.find(link);
          if (!f) {
            out.push_back({n.id, "attribute attached to unknown node " + link});
          } else if (f->first != Level::category) {
            out.push_back({n.id, "attribute attached to non-category node " + link});
          }
        }
        continue;
      }
      const Level expected = *detail::parent_level(l);
      if (n.links.empty()) {
        out.push_back({n.id, "missing parent"});
      } else if (n.links.size() > 1) {
        out.push_back({n.id, "multiple parents"});
      }
      for (const auto& link : n.links) {
        auto f = tree.find(link);
        if (!f) {
          out.push_back({n.id, "unknown parent " + link});
        } else if (f->first != expected) {
          out.push_back({n.id, "parent " + link + " is not a " + std::string(level_name(expected))});
        }
      }
    }
  }
  return out;
}

struct ConsistencyResult {
  bool consistent = true;
  /// (category id, offending sub-category or attribute id)
  std::vector<std::pair<std::string, std::string>> inconsistent_pairs;
};

/// True iff the sub-category's parent is `cat` and every attribute attaches to `cat`.
inline ConsistencyResult is_consistent(const CategoryTree& tree, std::size_t cat, std::size_t sub,
                                       const std::vector<std::size_t>& attrs) {
  ConsistencyResult r;
  const std::string& cid = tree.node(Level::category, cat).id;
  if (tree.parent_index(Level::subcategory, sub) != cat) {
    r.inconsistent_pairs.emplace_back(cid, tree.node(Level::subcategory, sub).id);
  }
  for (std::size_t a : attrs) {
    if (!tree.attribute_attached(a, cat)) {
      r.inconsistent_pairs.emplace_back(cid, tree.node(Level::attribute, a).id);
    }
  }
  r.consistent = r.inconsistent_pairs.empty();
  return r;
}

}  // namespace hmc
