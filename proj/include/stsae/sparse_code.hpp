#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace stsae {

/// Sparse activation of one token over an H-entry dictionary. Entries are
/// sorted by index and every stored value is strictly positive.
template <typename S>
struct BasicSparseCode {
  struct Entry {
    std::uint32_t index;
    S value;
    bool operator==(const Entry&) const = default;
  };

  std::uint32_t dict_size = 0;
  std::vector<Entry> active;

  std::size_t l0() const { return active.size(); }
  bool empty() const { return active.empty(); }

  S squared_norm() const {
    S acc = 0;
    for (const auto& e : active) acc += e.value * e.value;
    return acc;
  }
  S norm() const { return std::sqrt(squared_norm()); }

  std::vector<S> to_dense() const {
    std::vector<S> out(dict_size, S(0));
    for (const auto& e : active) out[e.index] = e.value;
    return out;
  }

  static BasicSparseCode from_dense(std::span<const S> dense) {
    BasicSparseCode code;
    code.dict_size = static_cast<std::uint32_t>(dense.size());
    for (std::uint32_t i = 0; i < dense.size(); ++i) {
      if (dense[i] > S(0)) code.active.push_back({i, dense[i]});
    }
    return code;
  }

  void validate() const {
    for (std::size_t j = 0; j < active.size(); ++j) {
      if (active[j].index >= dict_size) throw std::invalid_argument("SparseCode: index out of range");
      if (!(active[j].value > S(0))) throw std::invalid_argument("SparseCode: non-positive value");
      if (j > 0 && active[j].index <= active[j - 1].index) {
        throw std::invalid_argument("SparseCode: indices not strictly increasing");
      }
    }
  }

  bool operator==(const BasicSparseCode&) const = default;
};

using SparseCode = BasicSparseCode<float>;

/// Inner product via a merge over the two sorted supports.
template <typename S>
S sparse_dot(const BasicSparseCode<S>& a, const BasicSparseCode<S>& b) {
  S acc = 0;
  std::size_t i = 0, j = 0;
  while (i < a.active.size() && j < b.active.size()) {
    const auto ia = a.active[i].index, ib = b.active[j].index;
    if (ia == ib) {
      acc += a.active[i++].value * b.active[j++].value;
    } else if (ia < ib) {
      ++i;
    } else {
      ++j;
    }
  }
  return acc;
}

/// Cosine over the full H-dim vectors; 0 when either code is all-zero.
template <typename S>
S sparse_cosine(const BasicSparseCode<S>& a, const BasicSparseCode<S>& b) {
  const S na = a.norm(), nb = b.norm();
  if (na == S(0) || nb == S(0)) return S(0);
  return sparse_dot(a, b) / (na * nb);
}

/// Keeps only entries with index < split (Matryoshka high-level group).
template <typename S>
BasicSparseCode<S> restrict_to_prefix(const BasicSparseCode<S>& code, std::uint32_t split) {
  BasicSparseCode<S> out;
  out.dict_size = code.dict_size;
  for (const auto& e : code.active) {
    if (e.index < split) out.active.push_back(e);
  }
  return out;
}

}  // namespace stsae
