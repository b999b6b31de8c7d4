#pragma once

// Initial-state and transition probabilities estimated from labelled
// sequences by counting, with structural zeros described by a mask.

#include "hmsmm/covariance.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmsmm {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

struct TransitionCounts {
  CountVector initial;     // N1_k
  CountMatrix transition;  // N_jk, from j (row) to k (column)

  int num_states() const { return static_cast<int>(initial.size()); }
};

/// pi, row-stochastic A and the mask of structurally allowed entries.
struct TransitionModel {
  Vector pi;
  Matrix A;
  Mask mask;

  int num_states() const { return static_cast<int>(pi.size()); }

  void validate() const {
    const auto k = pi.size();
    if (k == 0) throw std::invalid_argument("transition model has no states");
    if (A.rows() != k || A.cols() != k || mask.rows() != k || mask.cols() != k) {
      throw std::invalid_argument("transition model shape mismatch");
    }
    if (!pi.allFinite() || (pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("initial probabilities must form a simplex");
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (std::abs(A.row(j).sum() - 1.0) > 1e-12) {
        throw std::invalid_argument("transition row " + std::to_string(j + 1) +
                                    " does not sum to 1");
      }
      for (Eigen::Index c = 0; c < k; ++c) {
        const double a = A(j, c);
        if (!(a >= 0.0 && a <= 1.0)) {
          throw std::invalid_argument("transition probability outside [0, 1]");
        }
        if (!mask(j, c) && a != 0.0) {
          throw std::invalid_argument("non-zero probability on masked entry (" +
                                      std::to_string(j + 1) + "," + std::to_string(c + 1) + ")");
        }
      }
    }
  }
};

inline Mask full_mask(int num_states) {
  if (num_states < 1) throw std::invalid_argument("num_states must be >= 1");
  return Mask::Constant(num_states, num_states, true);
}

/// pre-seizure (1) -> seizure (2) -> post-seizure (3) -> pre-seizure, plus
/// self-loops.
inline Mask seizure_cycle_mask(int num_states = 3) {
  if (num_states != 3) throw std::invalid_argument("seizure-cycle mask requires K = 3");
  Mask m = Mask::Constant(3, 3, false);
  m(0, 0) = m(0, 1) = true;
  m(1, 1) = m(1, 2) = true;
  m(2, 2) = m(2, 0) = true;
  return m;
}

inline TransitionCounts count_transitions(std::span<const std::vector<int>> labels,
                                          int num_states) {
  if (num_states < 1) throw std::invalid_argument("num_states must be >= 1");
  TransitionCounts c{CountVector::Zero(num_states), CountMatrix::Zero(num_states, num_states)};
  auto check = [num_states](int z) {
    if (z < 1 || z > num_states) {
      throw std::invalid_argument("label " + std::to_string(z) + " outside 1.." +
                                  std::to_string(num_states));
    }
  };
  for (const auto& seq : labels) {
    if (seq.empty()) continue;
    check(seq.front());
    c.initial[seq.front() - 1] += 1;
    for (std::size_t t = 1; t < seq.size(); ++t) {
      check(seq[t]);
      c.transition(seq[t - 1] - 1, seq[t] - 1) += 1;
    }
  }
  return c;
}

struct TransitionEstimate {
  TransitionModel model;
  std::vector<int> uniform_rows;  // 1-based rows that had no outgoing counts
};

/// Maximum-likelihood pi and A from counts. `pseudocount` adds alpha to every
/// allowed entry (0 gives the plain count ratio).
inline TransitionEstimate estimate_transitions(const TransitionCounts& counts, const Mask& mask,
                                               double pseudocount = 0.0) {
  const auto k = counts.initial.size();
  if (k == 0 || counts.transition.rows() != k || counts.transition.cols() != k ||
      mask.rows() != k || mask.cols() != k) {
    throw std::invalid_argument("transition counts and mask shapes disagree");
  }
  if (!(pseudocount >= 0.0)) throw std::invalid_argument("pseudocount must be >= 0");
  if ((counts.initial.array() < 0).any() || (counts.transition.array() < 0).any()) {
    throw std::invalid_argument("negative transition counts");
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index c = 0; c < k; ++c) {
      if (!mask(j, c) && counts.transition(j, c) != 0) {
        throw std::invalid_argument("transition observed on structurally forbidden entry (" +
                                    std::to_string(j + 1) + "," + std::to_string(c + 1) + ")");
      }
    }
    if (!mask.row(j).any()) {
      throw std::invalid_argument("mask row " + std::to_string(j + 1) + " allows no transition");
    }
  }
  const std::int64_t starts = counts.initial.sum();
  if (starts <= 0) throw std::invalid_argument("no sequences contributed an initial state");

  TransitionEstimate out;
  out.model.mask = mask;
  out.model.pi = counts.initial.cast<double>() / static_cast<double>(starts);
  out.model.A = Matrix::Zero(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      if (mask(j, c)) total += static_cast<double>(counts.transition(j, c)) + pseudocount;
    }
    if (total > 0.0) {
      for (Eigen::Index c = 0; c < k; ++c) {
        if (mask(j, c)) {
          out.model.A(j, c) = (static_cast<double>(counts.transition(j, c)) + pseudocount) / total;
        }
      }
    } else {
      const double share = 1.0 / static_cast<double>(mask.row(j).count());
      for (Eigen::Index c = 0; c < k; ++c) {
        if (mask(j, c)) out.model.A(j, c) = share;
      }
      out.uniform_rows.push_back(static_cast<int>(j + 1));
    }
  }
  return out;
}

}  // namespace hmsmm
