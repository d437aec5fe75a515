#include "transrank/eval/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace transrank::eval {

namespace {

double norm(std::span<const float> a) {
  double s = 0;
  for (float v : a) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

std::span<const float> row(const FeatureBank& bank, std::size_t i) {
  const std::size_t dim = bank.features.dim(1);
  return {bank.features.raw() + i * dim, dim};
}

// Indices of rows with a finite, non-zero feature. The rest are reported in
// one line per split, listing at most a handful of indices.
std::vector<std::size_t> usable_rows(const FeatureBank& bank, const char* split, std::size_t& excluded,
                                     std::ostream* warnings) {
  constexpr std::size_t kListed = 8;
  std::vector<std::size_t> keep, bad;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double n = norm(row(bank, i));
    if (n > 0 && std::isfinite(n)) {
      keep.push_back(i);
    } else {
      bad.push_back(i);
    }
  }
  excluded += bad.size();
  if (warnings != nullptr && !bad.empty()) {
    *warnings << "warning: " << bad.size() << " " << split << " feature(s) with zero norm excluded:";
    for (std::size_t k = 0; k < std::min(bad.size(), kListed); ++k) *warnings << " " << bad[k];
    if (bad.size() > kListed) *warnings << " ...";
    *warnings << "\n";
  }
  return keep;
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine similarity of vectors with different sizes");
  const double na = norm(a), nb = norm(b);
  if (na == 0 || nb == 0) return 0;
  double dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::vector<double> recall_at(const FeatureBank& train, const FeatureBank& test, std::span<const std::size_t> ks,
                              std::size_t* excluded, std::ostream* warnings) {
  if (train.features.rank() != 2 || test.features.rank() != 2 || train.features.dim(1) != test.features.dim(1)) {
    throw std::invalid_argument("retrieval banks must be videos × D with the same D");
  }
  std::size_t dropped = 0;
  const auto gallery = usable_rows(train, "train", dropped, warnings);
  const auto queries = usable_rows(test, "test", dropped, warnings);
  if (excluded != nullptr) *excluded = dropped;
  if (gallery.empty() || queries.empty()) throw std::invalid_argument("retrieval needs nonempty train and test banks");

  std::vector<std::size_t> hits(ks.size(), 0);
  std::vector<double> sim(gallery.size());
  std::vector<std::size_t> order(gallery.size());
  for (std::size_t q : queries) {
    for (std::size_t g = 0; g < gallery.size(); ++g) sim[g] = cosine_similarity(row(test, q), row(train, gallery[g]));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    // Rank of the first same-category neighbour decides every k at once.
    std::size_t first = order.size();
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (train.labels[gallery[order[r]]] == test.labels[q]) {
        first = r;
        break;
      }
    }
    for (std::size_t k = 0; k < ks.size(); ++k) hits[k] += first < ks[k] ? 1 : 0;
  }
  std::vector<double> out(ks.size());
  for (std::size_t k = 0; k < ks.size(); ++k) out[k] = static_cast<double>(hits[k]) / static_cast<double>(queries.size());
  return out;
}

RetrievalReport retrieve(const FeatureBank& train, const FeatureBank& test, std::ostream* warnings) {
  constexpr std::size_t kKs[] = {1, 5, 10};
  RetrievalReport report;
  const auto r = recall_at(train, test, kKs, &report.excluded, warnings);
  report.r1 = r[0];
  report.r5 = r[1];
  report.r10 = r[2];
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double n = norm(row(test, i));
    if (n > 0 && std::isfinite(n)) ++report.queries;
  }
  return report;
}

}  // namespace transrank::eval
