#include "fieldqc/model_store.hpp"

#include <cstring>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf/select.hpp"

namespace fieldqc {

ModelStore::ModelStore(const TrialGrid& trial, CvOptions cv) : trial_(&trial), cv_(cv) {}

std::string ModelStore::key(char op, std::uint8_t tag, const CoordSet& coords) const {
  std::string k;
  k.resize(2 + coords.size() * sizeof(std::int32_t));
  k[0] = op;
  k[1] = static_cast<char>(tag);
  char* out = k.data() + 2;
  for (const auto& c : coords) {
    const std::int32_t idx = trial_->shape().index(c);
    std::memcpy(out, &idx, sizeof idx);
    out += sizeof idx;
  }
  return k;
}

void ModelStore::rethrow(const Err& e) {
  switch (e.kind) {
    case Failure::insufficient: throw InsufficientDataError(e.what);
    case Failure::degenerate: throw DegenerateDataError(e.what);
    case Failure::numerical: throw NumericalError(e.what);
  }
  throw Error(e.what);
}

template <class T, class Fn>
T ModelStore::memo(std::unordered_map<std::string, Entry<T>>& table, std::string k,
                   Fn&& compute) {
  if (auto it = table.find(k); it != table.end()) {
    ++hits_;
    if (const auto* err = std::get_if<Err>(&it->second)) rethrow(*err);
    return std::get<T>(it->second);
  }
  ++misses_;
  try {
    T value = compute();
    table.emplace(std::move(k), value);
    return value;
  } catch (const InsufficientDataError& e) {
    table.emplace(std::move(k), Err{Failure::insufficient, e.what()});
    throw;
  } catch (const DegenerateDataError& e) {
    table.emplace(std::move(k), Err{Failure::degenerate, e.what()});
    throw;
  } catch (const NumericalError& e) {
    table.emplace(std::move(k), Err{Failure::numerical, e.what()});
    throw;
  }
}

FittedModel ModelStore::fit(const CoordSet& coords, GrfFamily family) {
  return memo(fits_, key('f', static_cast<std::uint8_t>(family.ordinal()), coords),
              [&] { return fit_mle(*trial_, coords, family); });
}

double ModelStore::cv_nll(const CoordSet& coords, GrfFamily family) {
  return memo(cvs_, key('c', static_cast<std::uint8_t>(family.ordinal()), coords), [&] {
    if (cv_.folds < 2) throw ParamError("cross-validation needs at least two folds");
    if (static_cast<int>(coords.size()) < cv_.folds)
      throw InsufficientDataError("fewer plots than folds");
    const int cols = trial_->shape().cols();
    double total = 0;
    CoordSet train, test;
    for (int f = 0; f < cv_.folds; ++f) {
      train.clear();
      test.clear();
      for (const auto& c : coords)
        (cv_fold(c, cols, cv_.folds, cv_.seed) == f ? test : train).push_back(c);
      if (test.empty()) continue;
      const auto model = fit(train, family);
      total += conditional_nll(*trial_, train, test, family, model.params);
    }
    return total;
  });
}

SelectedModel ModelStore::select(const CoordSet& coords, const FamilySet& candidates,
                                 ScoreKind score) {
  const char op = static_cast<char>('s' + static_cast<int>(score));
  return memo(selects_, key(op, candidates.mask(), coords), [&] {
    return grf::select_with([&](GrfFamily f) { return fit(coords, f); },
                            [&](GrfFamily f) { return cv_nll(coords, f); }, candidates, score);
  });
}

std::optional<SelectedModel> ModelStore::try_select(const CoordSet& coords,
                                                    const FamilySet& candidates, ScoreKind score) {
  try {
    return select(coords, candidates, score);
  } catch (const InsufficientDataError&) {
    return std::nullopt;
  } catch (const DegenerateDataError&) {
    return std::nullopt;
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

}  // namespace fieldqc
