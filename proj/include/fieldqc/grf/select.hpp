#pragma once

#include <limits>
#include <optional>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf.hpp"

namespace fieldqc::grf {

/// Model selection over `candidates` with pluggable fitting and cross-validation.
/// Candidates whose fit or folds lack data are skipped; ties go to fewer parameters,
/// then to the canonical family order.
template <class FitFn, class CvFn>
SelectedModel select_with(FitFn&& fit, CvFn&& cv, const FamilySet& candidates, ScoreKind score) {
  std::optional<SelectedModel> best;
  for (const auto& family : candidates.members()) {
    SelectedModel cand;
    cand.kind = score;
    try {
      cand.fit = fit(family);
      switch (score) {
        case ScoreKind::bic: cand.score = bic(cand.fit.loglik, cand.fit.k, cand.fit.n); break;
        case ScoreKind::aic: cand.score = aic(cand.fit.loglik, cand.fit.k); break;
        case ScoreKind::cv_nll: cand.score = cv(family); break;
      }
    } catch (const InsufficientDataError&) {
      continue;
    } catch (const NumericalError&) {
      continue;
    } catch (const DegenerateDataError&) {
      // A constant training fold only disqualifies the cross-validated score.
      if (score != ScoreKind::cv_nll) throw;
      continue;
    }
    if (!std::isfinite(cand.score)) continue;
    const bool better =
        !best || cand.score < best->score ||
        (cand.score == best->score && cand.fit.k < best->fit.k);
    if (better) best = cand;
  }
  if (!best) throw InsufficientDataError("no admissible GRF family for this plot set");
  return *best;
}

}  // namespace fieldqc::grf
