// SPDX-License-Identifier: Apache-2.0
#include "interpkit/interp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "interpkit/error.hpp"

namespace interpkit {

ReasoningIntensity::ReasoningIntensity(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0))
    throw ValidationError(fmt::format("reasoning intensity {} outside [0,1]", value));
}

ReasoningIntensity ReasoningIntensity::rounded(int decimals) const {
  const double scale = std::pow(10.0, decimals);
  return ReasoningIntensity(std::clamp(std::round(value_ * scale) / scale, 0.0, 1.0));
}

void require_aligned(const NamedTensorArchive& a, const NamedTensorArchive& b) {
  std::vector<std::string> missing, extra;
  for (const auto& [name, _] : a)
    if (!b.contains(name)) missing.push_back(name);
  for (const auto& [name, _] : b)
    if (!a.contains(name)) extra.push_back(name);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "archives are not aligned;";
    if (!missing.empty()) msg += " missing from second: " + fmt::format("{}", fmt::join(missing, ", ")) + ";";
    if (!extra.empty()) msg += " extra in second: " + fmt::format("{}", fmt::join(extra, ", ")) + ";";
    throw StructureError(msg);
  }
  for (const auto& [name, ta] : a) {
    const Tensor& tb = b.at(name);
    if (ta.shape() != tb.shape())
      throw ShapeError(fmt::format("tensor '{}' has shape {} vs {}", name, shape_string(ta.shape()),
                                   shape_string(tb.shape())));
    if (ta.dtype() != tb.dtype())
      throw ValidationError(fmt::format("tensor '{}' has dtype {} vs {}", name, dtype_name(ta.dtype()),
                                        dtype_name(tb.dtype())));
  }
}

NamedTensorArchive interpolate(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                               ReasoningIntensity lambda) {
  require_aligned(instruct, thinking);
  const double l = lambda.value();
  NamedTensorArchive out;
  for (const auto& [name, ti] : instruct) {
    const Tensor& tt = thinking.at(name);
    if (l == 0.0) {
      out.insert(name, ti);
      continue;
    }
    if (l == 1.0) {
      out.insert(name, tt);
      continue;
    }
    std::vector<double> values(ti.numel());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = l * tt[i] + (1.0 - l) * ti[i];
    Tensor merged(ti.shape(), std::move(values), ti.dtype());
    if (!merged.all_finite()) throw ValidationError(fmt::format("merge of '{}' produced a non-finite scalar", name));
    out.insert(name, std::move(merged));
  }
  for (const auto& [k, v] : instruct.metadata()) out.set_metadata(k, v);
  out.set_metadata("merge.instruct_digest", archive_digest(instruct));
  out.set_metadata("merge.thinking_digest", archive_digest(thinking));
  out.set_metadata("merge.lambda", fmt::format("{}", l));
  return out;
}

bool layer_order_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const bool da = std::isdigit(static_cast<unsigned char>(a[i]));
    const bool db = std::isdigit(static_cast<unsigned char>(b[j]));
    if (da && db) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      // Compare digit runs by value: strip leading zeros, then by length, then lexically.
      std::string_view ra(a.data() + i, ie - i), rb(b.data() + j, je - j);
      while (ra.size() > 1 && ra.front() == '0') ra.remove_prefix(1);
      while (rb.size() > 1 && rb.front() == '0') rb.remove_prefix(1);
      if (ra.size() != rb.size()) return ra.size() < rb.size();
      if (ra != rb) return ra < rb;
      i = ie;
      j = je;
      continue;
    }
    if (a[i] != b[j]) return a[i] < b[j];
    ++i;
    ++j;
  }
  if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
  return a < b;
}

nlohmann::json ConnectivityReport::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& e : per_layer) {
    layers.push_back({{"name", e.name},
                      {"cosine", e.cosine ? nlohmann::json(*e.cosine) : nlohmann::json(nullptr)},
                      {"l2", e.l2}});
  }
  return {{"per_layer", layers},
          {"min_cosine", min_cosine},
          {"argmax_l2_layer", argmax_l2_layer},
          {"undefined_cosines", undefined_cosines}};
}

ConnectivityReport diagnose_connectivity(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking) {
  require_aligned(instruct, thinking);
  if (instruct.empty()) throw StructureError("cannot diagnose empty archives");
  ConnectivityReport report;
  double best_l2 = -1.0;
  double min_cos = std::numeric_limits<double>::infinity();
  for (const auto& [name, ti] : instruct) {
    const Tensor& tt = thinking.at(name);
    LayerConnectivity entry{name, std::nullopt, l2_distance(ti, tt)};
    try {
      entry.cosine = cosine_similarity(ti, tt);
      min_cos = std::min(min_cos, *entry.cosine);
    } catch (const UndefinedSimilarityError&) {
      ++report.undefined_cosines;
    }
    report.per_layer.push_back(std::move(entry));
  }
  std::stable_sort(report.per_layer.begin(), report.per_layer.end(),
                   [](const auto& x, const auto& y) { return layer_order_less(x.name, y.name); });
  for (const auto& e : report.per_layer) {
    if (e.l2 > best_l2) {
      best_l2 = e.l2;
      report.argmax_l2_layer = e.name;
    }
  }
  // All-zero archives leave no defined cosine; report NaN rather than a fake value.
  report.min_cosine = std::isfinite(min_cos) ? min_cos : std::numeric_limits<double>::quiet_NaN();
  return report;
}

double BarrierScan::max_endpoint_loss() const {
  return std::max(losses.front(), losses.back());
}

std::string BarrierScan::to_csv() const {
  std::string out = "lambda,loss\n";
  for (std::size_t i = 0; i < grid.size(); ++i) out += fmt::format("{},{}\n", grid[i], losses[i]);
  return out;
}

nlohmann::json BarrierScan::to_json() const {
  return {{"grid", grid}, {"losses", losses}, {"barrier_height", barrier_height}};
}

std::vector<double> even_grid(std::size_t points) {
  if (points < 2) throw ValidationError("a grid needs at least two points");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

void validate_grid(const std::vector<double>& grid, bool require_endpoints) {
  if (grid.empty()) throw ValidationError("grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0))
      throw ValidationError(fmt::format("grid value {} outside [0,1]", grid[i]));
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ValidationError("grid must be strictly ascending");
  }
  if (require_endpoints && (grid.front() != 0.0 || grid.back() != 1.0))
    throw ValidationError("grid must contain 0 and 1");
}

BarrierScan scan_barrier(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                         const std::vector<double>& grid, const LossEvaluator& loss_eval) {
  validate_grid(grid, true);
  require_aligned(instruct, thinking);
  BarrierScan scan;
  scan.grid = grid;
  for (double l : grid) {
    double loss = 0.0;
    try {
      loss = loss_eval(interpolate(instruct, thinking, ReasoningIntensity(l)));
    } catch (const std::exception& e) {
      throw Error(fmt::format("loss evaluation failed at lambda={}: {}", l, e.what()));
    }
    if (!std::isfinite(loss)) throw Error(fmt::format("loss evaluation at lambda={} is not finite", l));
    scan.losses.push_back(loss);
  }
  const double peak = *std::max_element(scan.losses.begin(), scan.losses.end());
  scan.barrier_height = peak - scan.max_endpoint_loss();
  return scan;
}

double lmc_epsilon(const BarrierScan& scan, double fraction) {
  return fraction * scan.max_endpoint_loss();
}

MergeCache::MergeCache(std::shared_ptr<const NamedTensorArchive> instruct,
                       std::shared_ptr<const NamedTensorArchive> thinking)
    : LambdaCache<NamedTensorArchive>([instruct, thinking](ReasoningIntensity l) {
        return interpolate(*instruct, *thinking, l);
      }) {}

}  // namespace interpkit
