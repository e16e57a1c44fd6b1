#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "fedadapt/conformer.hpp"
#include "fedadapt/data.hpp"
#include "fedadapt/parameter_tree.hpp"

namespace fedadapt {

struct WerBreakdown {
  std::uint64_t substitutions = 0;
  std::uint64_t deletions = 0;
  std::uint64_t insertions = 0;
  std::uint64_t ref_length = 0;

  std::uint64_t total_errors() const {
    return substitutions + deletions + insertions;
  }
  double wer() const {
    if (ref_length == 0)
      return total_errors() == 0 ? 0.0
                                 : std::numeric_limits<double>::infinity();
    return static_cast<double>(total_errors()) /
           static_cast<double>(ref_length);
  }
};

// Minimal substitutions+deletions+insertions alignment, unit costs. Among
// minimal alignments prefers fewer insertions, then fewer deletions.
WerBreakdown edit_distance(const std::vector<int>& ref,
                           const std::vector<int>& hyp);

struct EvalResult {
  double wer = 0.0;
  double mean_loss = 0.0;
  double frame_accuracy = 0.0;
  std::uint64_t errors = 0;
  std::uint64_t ref_length = 0;
};

// Corpus metrics via greedy decoding. WER is pooled: sum(S+D+I) / sum(N)
// over all examples, not a mean of per-utterance rates.
EvalResult evaluate(const ParameterTree& tree, const ModelConfig& cfg,
                    const std::optional<AdapterSpec>& spec,
                    const DomainDataset& dataset);

}  // namespace fedadapt
