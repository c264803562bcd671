#pragma once

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wpgsd {

/// Largest number of elementary hypotheses for which the closed family is
/// enumerated (2^m - 1 intersection hypotheses).
inline constexpr std::size_t kMaxHypotheses = 16;

/// Index set J of elementary hypotheses, encoded as a bitmask over 0-based
/// hypothesis indices.
class Subset {
 public:
  constexpr Subset() = default;
  constexpr explicit Subset(std::uint32_t mask) : mask_(mask) {}

  static Subset full(std::size_t m) {
    if (m > kMaxHypotheses) {
      throw std::invalid_argument("closed testing supports at most " +
                                  std::to_string(kMaxHypotheses) + " hypotheses");
    }
    return Subset(m == 32 ? ~0u : ((1u << m) - 1u));
  }
  static constexpr Subset single(std::size_t i) { return Subset(1u << i); }

  static Subset of(const std::vector<std::size_t>& members) {
    std::uint32_t mask = 0;
    for (auto i : members) mask |= 1u << i;
    return Subset(mask);
  }

  constexpr std::uint32_t mask() const { return mask_; }
  constexpr bool empty() const { return mask_ == 0; }
  constexpr std::size_t size() const { return static_cast<std::size_t>(std::popcount(mask_)); }
  constexpr bool contains(std::size_t i) const { return (mask_ >> i) & 1u; }
  constexpr bool is_subset_of(Subset other) const { return (mask_ & ~other.mask_) == 0; }

  constexpr Subset with(std::size_t i) const { return Subset(mask_ | (1u << i)); }
  constexpr Subset without(std::size_t i) const { return Subset(mask_ & ~(1u << i)); }
  constexpr Subset operator&(Subset o) const { return Subset(mask_ & o.mask_); }
  constexpr Subset operator|(Subset o) const { return Subset(mask_ | o.mask_); }

  /// Members in ascending index order.
  std::vector<std::size_t> members() const {
    std::vector<std::size_t> out;
    out.reserve(size());
    for (std::uint32_t m = mask_; m != 0; m &= m - 1) {
      out.push_back(static_cast<std::size_t>(std::countr_zero(m)));
    }
    return out;
  }

  /// "H1_H3" style label using 1-based indices.
  std::string label() const {
    std::string s;
    for (auto i : members()) {
      if (!s.empty()) s += "_";
      s += "H" + std::to_string(i + 1);
    }
    return s;
  }

  friend constexpr bool operator==(Subset, Subset) = default;
  friend constexpr auto operator<=>(Subset a, Subset b) { return a.mask_ <=> b.mask_; }

 private:
  std::uint32_t mask_ = 0;
};

/// Canonical output order: descending cardinality, then lexicographic on
/// the ascending member list ({1,2} before {1,3} before {2,3}).
inline bool canonical_less(Subset a, Subset b) {
  if (a.size() != b.size()) return a.size() > b.size();
  return a.members() < b.members();
}

/// All nonempty subsets of `universe` in canonical order.
inline std::vector<Subset> closed_family(Subset universe) {
  std::vector<Subset> out;
  const std::uint32_t u = universe.mask();
  // Standard submask walk: s = (s - 1) & u visits every submask once.
  for (std::uint32_t s = u; s != 0; s = (s - 1) & u) out.emplace_back(s);
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

inline std::vector<Subset> closed_family(std::size_t m) { return closed_family(Subset::full(m)); }

}  // namespace wpgsd
