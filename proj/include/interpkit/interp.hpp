// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "interpkit/archive.hpp"

namespace interpkit {

/// Weight of the thinking checkpoint in the merge, always within [0, 1].
class ReasoningIntensity {
 public:
  /// Throws ValidationError when `value` is NaN or outside [0, 1].
  explicit ReasoningIntensity(double value);

  double value() const noexcept { return value_; }
  /// Rounded to `decimals` places, used as the merge cache key.
  ReasoningIntensity rounded(int decimals = 2) const;

  auto operator<=>(const ReasoningIntensity&) const = default;

 private:
  double value_;
};

/// Elementwise lambda * thinking + (1 - lambda) * instruct over aligned archives.
/// lambda = 0 and 1 return bit-exact copies of the respective endpoint.
NamedTensorArchive interpolate(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                               ReasoningIntensity lambda);

/// Throws StructureError (missing/extra names), ShapeError or ValidationError (dtype).
void require_aligned(const NamedTensorArchive& a, const NamedTensorArchive& b);

/// Numeric-aware ordering of tensor names so blocks.2 sorts before blocks.10.
bool layer_order_less(const std::string& a, const std::string& b);

struct LayerConnectivity {
  std::string name;
  std::optional<double> cosine;  // empty when either side has zero norm
  double l2 = 0.0;
};

struct ConnectivityReport {
  std::vector<LayerConnectivity> per_layer;
  double min_cosine = 1.0;
  std::string argmax_l2_layer;
  std::size_t undefined_cosines = 0;

  nlohmann::json to_json() const;
};

ConnectivityReport diagnose_connectivity(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking);

struct BarrierScan {
  std::vector<double> grid;
  std::vector<double> losses;
  double barrier_height = 0.0;

  double max_endpoint_loss() const;
  std::string to_csv() const;  // columns lambda,loss
  nlohmann::json to_json() const;
};

using LossEvaluator = std::function<double(const NamedTensorArchive&)>;

/// `points` evenly spaced coefficients from 0 to 1 inclusive.
std::vector<double> even_grid(std::size_t points = 21);

/// Throws ValidationError unless the grid is strictly ascending in [0,1] (and spans
/// both endpoints when `require_endpoints`).
void validate_grid(const std::vector<double>& grid, bool require_endpoints);

/// Loss of every merge along `grid`; barrier height is max(losses) - max(endpoint losses).
BarrierScan scan_barrier(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                         const std::vector<double>& grid, const LossEvaluator& loss_eval);

/// Default LMC tolerance: a fraction of the worse endpoint loss.
inline constexpr double kLmcToleranceFraction = 0.1;
double lmc_epsilon(const BarrierScan& scan, double fraction = kLmcToleranceFraction);

/// Thread-safe memo keyed by lambda rounded to two decimals (at most 101 keys).
/// Concurrent inserts for one key keep the last writer's value.
template <class Value>
class LambdaCache {
 public:
  using Factory = std::function<Value(ReasoningIntensity)>;

  explicit LambdaCache(Factory factory) : factory_(std::move(factory)) {}

  /// Returns the value for the rounded coefficient; the factory receives the rounded value.
  std::shared_ptr<const Value> get(ReasoningIntensity lambda) {
    const ReasoningIntensity key = lambda.rounded(2);
    const auto slot = static_cast<int>(std::lround(key.value() * 100.0));
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(slot); it != entries_.end()) return it->second;
    }
    auto value = std::make_shared<const Value>(factory_(key));
    std::unique_lock lock(mutex_);
    entries_[slot] = value;
    return value;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

 private:
  Factory factory_;
  mutable std::shared_mutex mutex_;
  std::map<int, std::shared_ptr<const Value>> entries_;
};

/// Caches merged archives of one fixed instruct/thinking pair.
class MergeCache : public LambdaCache<NamedTensorArchive> {
 public:
  MergeCache(std::shared_ptr<const NamedTensorArchive> instruct, std::shared_ptr<const NamedTensorArchive> thinking);
};

}  // namespace interpkit
