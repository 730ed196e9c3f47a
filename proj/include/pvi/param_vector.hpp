#pragma once

#include "pvi/common.hpp"

#include <string>
#include <vector>

namespace pvi {

//! Named index range inside a flat parameter vector.
struct Segment {
  std::string name;
  int offset = 0;
  int size = 0;
};

//! Disjoint named segments covering a parameter vector exactly.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<Segment> segments) : segments_(std::move(segments)) {
    int off = 0;
    for (const Segment& s : segments_) {
      expect(s.offset == off && s.size > 0, "ParamLayout: segments must be contiguous");
      off += s.size;
    }
    dim_ = off;
  }

  int dim() const { return dim_; }
  const std::vector<Segment>& segments() const { return segments_; }

  const Segment& segment(const std::string& name) const {
    for (const Segment& s : segments_)
      if (s.name == name) return s;
    throw ContractError("ParamLayout: no segment named " + name);
  }

  bool has(const std::string& name) const {
    for (const Segment& s : segments_)
      if (s.name == name) return true;
    return false;
  }

 private:
  std::vector<Segment> segments_;
  int dim_ = 0;
};

//! Flat unconstrained parameter vector plus its segment map.
struct ParamVector {
  Vec values;
  ParamLayout layout;

  void validate() const {
    expect(values.size() == layout.dim(), "ParamVector: layout does not cover vector");
    expect(all_finite(values), "ParamVector: non-finite entries");
  }
};

}  // namespace pvi
