#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "transrank/eval/features.hpp"

namespace transrank::eval {

struct RetrievalReport {
  double r1 = 0;
  double r5 = 0;
  double r10 = 0;
  std::size_t queries = 0;   // test videos that took part
  std::size_t excluded = 0;  // zero-norm features, from either bank
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// For each test video, train videos ranked by cosine similarity (ties keep
/// the lower train index first). Entry k of the result is the fraction of
/// queries whose top ks[k] contains a same-category train video.
std::vector<double> recall_at(const FeatureBank& train, const FeatureBank& test, std::span<const std::size_t> ks,
                              std::size_t* excluded = nullptr, std::ostream* warnings = nullptr);

/// R@1, R@5, R@10. Zero-norm features are dropped with a line on `warnings`.
/// Throws std::invalid_argument when no usable train or test feature is left.
RetrievalReport retrieve(const FeatureBank& train, const FeatureBank& test, std::ostream* warnings = nullptr);

}  // namespace transrank::eval
