#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace flowreg {

enum class FeatureKind { Numeric, Categorical };

//! One input feature. Categorical features carry their category-to-index
//! map; the index equal to categories.size() is reserved for categories
//! never seen during fitting.
struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  std::vector<std::string> categories;  // categorical only, sorted

  std::size_t cardinality() const { return categories.size(); }
  std::size_t unknown_index() const { return categories.size(); }
  //! Index for a category string; unseen strings map to the reserved slot.
  std::size_t index_of(const std::string& category) const;
};

//! Ordered feature list. Model inputs follow this order everywhere.
struct FeatureSchema {
  std::vector<Feature> features;

  std::size_t feature_count() const { return features.size(); }
  std::size_t numeric_count() const;
  std::size_t categorical_count() const;
  //! Throws StructuralError on duplicate names or an empty feature list.
  void validate() const;
};

}  // namespace flowreg
