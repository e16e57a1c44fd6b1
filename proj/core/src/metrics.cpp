#include "fedadapt/metrics.hpp"

#include <array>
#include <stdexcept>

namespace fedadapt {

namespace {

// DP cell ordered lexicographically by (total, insertions, deletions).
struct Cell {
  std::uint64_t total = 0;
  std::uint64_t ins = 0;
  std::uint64_t del = 0;
  std::uint64_t sub = 0;

  bool better_than(const Cell& o) const {
    if (total != o.total) return total < o.total;
    if (ins != o.ins) return ins < o.ins;
    return del < o.del;
  }
};

}  // namespace

WerBreakdown edit_distance(const std::vector<int>& ref,
                           const std::vector<int>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j)
    prev[j] = Cell{j, j, 0, 0};  // insert all of hyp[0..j)
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = Cell{i, 0, i, 0};  // delete all of ref[0..i)
    for (std::size_t j = 1; j <= m; ++j) {
      // substitution / match
      Cell best = prev[j - 1];
      if (ref[i - 1] != hyp[j - 1]) {
        best.total += 1;
        best.sub += 1;
      }
      // deletion of ref[i-1]
      Cell del = prev[j];
      del.total += 1;
      del.del += 1;
      if (del.better_than(best)) best = del;
      // insertion of hyp[j-1]
      Cell ins = cur[j - 1];
      ins.total += 1;
      ins.ins += 1;
      if (ins.better_than(best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& best = prev[m];
  WerBreakdown out;
  out.substitutions = best.sub;
  out.deletions = best.del;
  out.insertions = best.ins;
  out.ref_length = n;
  return out;
}

EvalResult evaluate(const ParameterTree& tree, const ModelConfig& cfg,
                    const std::optional<AdapterSpec>& spec,
                    const DomainDataset& dataset) {
  if (dataset.examples.empty())
    throw std::invalid_argument("evaluate: dataset is empty");
  NoGradGuard guard(tree.tape());
  EvalResult result;
  double loss_total = 0;
  std::uint64_t frames_total = 0, frames_correct = 0;
  for (const Example& ex : dataset.examples) {
    Tensor logits = model_logits(tree, cfg, spec, ex.features);
    const std::vector<bool> all(ex.tokens.size(), true);
    loss_total += double(softmax_xent(logits, ex.tokens, all).item());
    const std::vector<int> hyp = decode_greedy(logits);
    const std::vector<int> ref = collapse_repeats(ex.tokens);
    const WerBreakdown wb = edit_distance(ref, hyp);
    result.errors += wb.total_errors();
    result.ref_length += wb.ref_length;
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      ++frames_total;
      int best = 0;
      real best_v = logits.at(t, 0);
      for (std::size_t j = 1; j < logits.extent(1); ++j)
        if (logits.at(t, j) > best_v) {
          best_v = logits.at(t, j);
          best = static_cast<int>(j);
        }
      if (best == ex.tokens[t]) ++frames_correct;
    }
  }
  result.mean_loss = loss_total / static_cast<double>(dataset.examples.size());
  result.frame_accuracy =
      static_cast<double>(frames_correct) / static_cast<double>(frames_total);
  result.wer = result.ref_length == 0
                   ? (result.errors == 0
                          ? 0.0
                          : std::numeric_limits<double>::infinity())
                   : static_cast<double>(result.errors) /
                         static_cast<double>(result.ref_length);
  return result;
}

}  // namespace fedadapt
