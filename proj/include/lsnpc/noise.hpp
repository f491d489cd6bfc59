#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsnpc/matrix.hpp"

namespace lsnpc {

enum class NoiseKind : std::uint8_t { Sym, Pair };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

/// Row-stochastic k x k matrix, entry (i, j) = p(observed j | true i).
struct TransitionMatrix {
  std::size_t k = 0;
  NoiseKind kind = NoiseKind::Sym;
  double nr = 0.0;
  std::vector<double> rows;

  double operator()(std::size_t i, std::size_t j) const { return rows[i * k + j]; }
};

TransitionMatrix build_transition_matrix(NoiseKind kind, std::size_t k, double nr);

/// Moves each positive label i to j ~ T[i] (j == i keeps it). Negatives are
/// only set by receiving a moved positive. Row r draws from its own stream
/// derived from (seed, r).
LabelMatrix corrupt_labels(const LabelMatrix& labels, const TransitionMatrix& t, std::uint64_t seed);

/// Plain text: "k kind nr" then k lines of k probabilities.
std::string format_transition_matrix(const TransitionMatrix& t);
TransitionMatrix parse_transition_matrix(const std::string& text);

struct SplitSpec {
  double train = 0.6;
  double validation = 0.2;  // includes the clean share
  double test = 0.2;
  double clean_share = 0.5;  // fraction of validation carved out as the clean subset
  std::uint64_t seed = 1;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> clean;
  std::vector<std::size_t> test;
};

/// Random partition of [0, n). Sizes use floor for train and validation with
/// test taking the remainder; clean = floor(validation * clean_share).
SplitIndices split_dataset(std::size_t n, const SplitSpec& spec);

}  // namespace lsnpc
