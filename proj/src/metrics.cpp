#include "pathm3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "pathm3/error.hpp"

namespace pathm3 {

namespace {

using Ngram = std::vector<int>;

std::map<Ngram, std::size_t> count_ngrams(std::span<const int> seq, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  if (seq.size() < n) return out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++out[Ngram(seq.begin() + i, seq.begin() + i + n)];
  return out;
}

}  // namespace

double bleu4(std::span<const int> hypothesis, const std::vector<std::vector<int>>& references) {
  if (references.empty()) fail(ErrorKind::EmptyReference, "bleu4: no reference captions");
  const std::size_t c = hypothesis.size();
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hyp = count_ngrams(hypothesis, n);
    std::map<Ngram, std::size_t> max_ref;
    for (const auto& ref : references) {
      for (const auto& [g, k] : count_ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    std::size_t clipped = 0, total = 0;
    for (const auto& [g, k] : hyp) {
      total += k;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(k, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }

  // Closest reference length, shorter one on ties.
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r)) r = ref.size();
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

double mean_bleu4(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references) {
  if (hypotheses.size() != references.size()) fail(ErrorKind::ShapeMismatch, "mean_bleu4: hypothesis/reference count differs");
  if (hypotheses.empty()) fail(ErrorKind::EmptyReference, "mean_bleu4: nothing to score");
  double total = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu4(hypotheses[i], {references[i]});
  return total / static_cast<double>(hypotheses.size());
}

}  // namespace pathm3
