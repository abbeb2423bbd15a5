#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <variant>

#include "fieldqc/grf.hpp"

namespace fieldqc {

/// Memoised model fits for one trial. The detection stages refit the same plot sets
/// many times (tree vertices, merge candidates, verification refits); results are pure
/// functions of (plots, family, score), so they are computed once per store.
/// Not thread safe: use one store per worker.
class ModelStore {
 public:
  explicit ModelStore(const TrialGrid& trial, CvOptions cv = {});

  const TrialGrid& trial() const noexcept { return *trial_; }
  CvOptions cv() const noexcept { return cv_; }

  FittedModel fit(const CoordSet& coords, GrfFamily family);
  double cv_nll(const CoordSet& coords, GrfFamily family);
  SelectedModel select(const CoordSet& coords, const FamilySet& candidates, ScoreKind score);
  /// nullopt when no candidate can be fitted on `coords`.
  std::optional<SelectedModel> try_select(const CoordSet& coords, const FamilySet& candidates,
                                          ScoreKind score);

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }

 private:
  enum class Failure { insufficient, degenerate, numerical };
  struct Err {
    Failure kind;
    std::string what;
  };
  template <class T>
  using Entry = std::variant<T, Err>;

  std::string key(char op, std::uint8_t tag, const CoordSet& coords) const;
  [[noreturn]] static void rethrow(const Err& e);
  template <class T, class Fn>
  T memo(std::unordered_map<std::string, Entry<T>>& table, std::string k, Fn&& compute);

  const TrialGrid* trial_;
  CvOptions cv_;
  std::unordered_map<std::string, Entry<FittedModel>> fits_;
  std::unordered_map<std::string, Entry<double>> cvs_;
  std::unordered_map<std::string, Entry<SelectedModel>> selects_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace fieldqc
