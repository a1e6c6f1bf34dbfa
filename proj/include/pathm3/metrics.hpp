#pragma once

#include <span>
#include <vector>

namespace pathm3 {

// Sentence BLEU with clipped 1–4-gram precisions, geometric mean and brevity
// penalty against the closest reference length. No smoothing: any zero
// precision gives 0.
double bleu4(std::span<const int> hypothesis, const std::vector<std::vector<int>>& references);

// Mean sentence BLEU@4 over paired hypotheses and single references.
double mean_bleu4(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);

}  // namespace pathm3
