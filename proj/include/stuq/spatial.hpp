#pragma once

// Spatial structure for the forecasters: Gaussian-kernel adjacency from
// pairwise distances, diffusion supports (random-walk, reverse random-walk,
// normalized Laplacian), the tape-level diffusion convolution, and
// inverse-distance interpolation from scattered stations onto cells.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stuq/autodiff.hpp"
#include "stuq/common.hpp"
#include "stuq/tensor.hpp"

namespace stuq {

struct SpatialGraph {
  std::int64_t P = 0;
  Tensor A;  // (P, P), nonnegative, possibly asymmetric

  explicit SpatialGraph(Tensor adjacency) : A(std::move(adjacency)) {
    require(A.shape.rank() == 2 && A.shape[0] == A.shape[1],
            "graph: adjacency must be square, got " + A.shape.str());
    P = A.shape[0];
    for (double v : A.data) {
      require(std::isfinite(v), "graph: adjacency entries must be finite");
      require(v >= 0.0, "graph: adjacency entries must be nonnegative");
    }
  }
};

enum class SupportKind { RandomWalk, ReverseRandomWalk, NormalizedLaplacian };

struct GraphSupport {
  SupportKind kind;
  Tensor matrix;  // (P, P)
};

// A_ij = exp(-d_ij / sigma_sq); entries below `threshold` are zeroed to
// sparsify; the diagonal is pinned to 1 (self-distance zero).
inline SpatialGraph gaussian_kernel_adjacency(const Tensor& distances, double sigma_sq,
                                              double threshold) {
  require(distances.shape.rank() == 2 && distances.shape[0] == distances.shape[1],
          "kernel: distance matrix must be square, got " + distances.shape.str());
  require(sigma_sq > 0.0, "kernel: sigma_sq must be positive");
  require(threshold >= 0.0 && threshold < 1.0, "kernel: threshold must lie in [0, 1)");
  const std::int64_t P = distances.shape[0];
  Tensor A(Shape{P, P});
  for (std::int64_t i = 0; i < P; ++i)
    for (std::int64_t j = 0; j < P; ++j) {
      const double d = distances.at2(i, j);
      require(std::isfinite(d), "kernel: distances must be finite");
      require(d >= 0.0, "kernel: distances must be nonnegative");
      double a = (i == j) ? 1.0 : std::exp(-d / sigma_sq);
      if (a < threshold) a = 0.0;
      A.at2(i, j) = a;
    }
  return SpatialGraph(std::move(A));
}

// D^{-1} A with D the diagonal of row sums; zero-degree rows stay zero.
inline GraphSupport random_walk_support(const SpatialGraph& g) {
  Tensor S(Shape{g.P, g.P});
  for (std::int64_t i = 0; i < g.P; ++i) {
    double deg = 0.0;
    for (std::int64_t j = 0; j < g.P; ++j) deg += g.A.at2(i, j);
    if (deg > 0.0)
      for (std::int64_t j = 0; j < g.P; ++j) S.at2(i, j) = g.A.at2(i, j) / deg;
    else
      for (std::int64_t j = 0; j < g.P; ++j) S.at2(i, j) = 0.0;
  }
  return {SupportKind::RandomWalk, std::move(S)};
}

// Random walk on the transposed graph, capturing upstream influence when A is
// asymmetric.
inline GraphSupport reverse_random_walk_support(const SpatialGraph& g) {
  Tensor At(Shape{g.P, g.P});
  for (std::int64_t i = 0; i < g.P; ++i)
    for (std::int64_t j = 0; j < g.P; ++j) At.at2(i, j) = g.A.at2(j, i);
  GraphSupport s = random_walk_support(SpatialGraph(std::move(At)));
  s.kind = SupportKind::ReverseRandomWalk;
  return s;
}

// I - D^{-1/2} A D^{-1/2} on the symmetrized adjacency (A + A^T)/2; isolated
// nodes contribute plain identity rows.
inline GraphSupport normalized_laplacian_support(const SpatialGraph& g) {
  const std::int64_t P = g.P;
  Tensor sym(Shape{P, P});
  for (std::int64_t i = 0; i < P; ++i)
    for (std::int64_t j = 0; j < P; ++j) sym.at2(i, j) = 0.5 * (g.A.at2(i, j) + g.A.at2(j, i));
  std::vector<double> dinv_sqrt(static_cast<std::size_t>(P), 0.0);
  for (std::int64_t i = 0; i < P; ++i) {
    double deg = 0.0;
    for (std::int64_t j = 0; j < P; ++j) deg += sym.at2(i, j);
    dinv_sqrt[static_cast<std::size_t>(i)] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Tensor L(Shape{P, P});
  for (std::int64_t i = 0; i < P; ++i)
    for (std::int64_t j = 0; j < P; ++j) {
      const double off = dinv_sqrt[static_cast<std::size_t>(i)] * sym.at2(i, j) *
                         dinv_sqrt[static_cast<std::size_t>(j)];
      L.at2(i, j) = (i == j ? 1.0 : 0.0) - off;
    }
  return {SupportKind::NormalizedLaplacian, std::move(L)};
}

// Build the support set a model config names: "random-walk",
// "dual-random-walk" (forward + reverse), or "normalized-laplacian".
inline std::vector<GraphSupport> make_supports(const SpatialGraph& g, const std::string& name) {
  if (name == "random-walk") return {random_walk_support(g)};
  if (name == "dual-random-walk") return {random_walk_support(g), reverse_random_walk_support(g)};
  if (name == "normalized-laplacian") return {normalized_laplacian_support(g)};
  throw ValidationError("unknown support set '" + name + "'");
}

// Diffusion convolution: sum over supports s and powers k < K of
// (S_s^k X) W_{s,k}, with weights laid out support-major (index s*K + k).
// An optional rank-1 bias broadcasts over nodes. Supports enter the tape as
// constant inputs, so gradients flow only to features and weights.
inline Value graph_conv(Tape& t, Value x, const std::vector<Value>& supports, int K,
                        const std::vector<Value>& weights, Value bias = {}) {
  require(!supports.empty(), "graph-conv: needs at least one support");
  require(K >= 1, "graph-conv: diffusion steps K must be >= 1");
  require(weights.size() == supports.size() * static_cast<std::size_t>(K),
          "graph-conv: expected " + std::to_string(supports.size() * static_cast<std::size_t>(K)) +
              " weight blocks, got " + std::to_string(weights.size()));
  Value acc{};
  for (std::size_t s = 0; s < supports.size(); ++s) {
    Value z = x;
    for (int k = 0; k < K; ++k) {
      if (k > 0) z = t.matmul(supports[s], z);
      Value term = t.matmul(z, weights[s * static_cast<std::size_t>(K) + static_cast<std::size_t>(k)]);
      acc = acc.valid() ? t.add(acc, term) : term;
    }
  }
  if (bias.valid()) acc = t.add_rowvec(acc, bias);
  return acc;
}

struct Station {
  double x = 0.0;
  double y = 0.0;
  std::vector<double> values;  // one entry per feature
};

// Normalized inverse-distance-squared interpolation: each cell value is
// sum_i w_i v_i / sum_i w_i with w_i = 1/(d_i^2 + eps). A cell that lands
// exactly on a station (d^2 + eps == 0) takes that station's values.
inline Tensor inverse_distance_interpolate(const std::vector<Station>& stations,
                                           const std::vector<std::pair<double, double>>& cells,
                                           double eps) {
  require(!stations.empty(), "interpolate: station set is empty");
  require(eps >= 0.0, "interpolate: epsilon must be nonnegative");
  const std::size_t F = stations.front().values.size();
  for (const Station& s : stations)
    require(s.values.size() == F, "interpolate: stations disagree on feature count");
  for (std::size_t i = 0; i < stations.size(); ++i)
    for (std::size_t j = i + 1; j < stations.size(); ++j) {
      const double dx = stations[i].x - stations[j].x;
      const double dy = stations[i].y - stations[j].y;
      require(dx * dx + dy * dy > 1e-24, "interpolate: station positions must be distinct");
    }

  Tensor out(Shape{static_cast<std::int64_t>(cells.size()), static_cast<std::int64_t>(F)});
  for (std::size_t c = 0; c < cells.size(); ++c) {
    double wsum = 0.0;
    std::vector<double> acc(F, 0.0);
    bool exact = false;
    for (const Station& s : stations) {
      const double dx = cells[c].first - s.x;
      const double dy = cells[c].second - s.y;
      const double denom = dx * dx + dy * dy + eps;
      if (denom == 0.0) {
        acc = s.values;
        exact = true;
        break;
      }
      const double w = 1.0 / denom;
      wsum += w;
      for (std::size_t f = 0; f < F; ++f) acc[f] += w * s.values[f];
    }
    for (std::size_t f = 0; f < F; ++f)
      out.at2(static_cast<std::int64_t>(c), static_cast<std::int64_t>(f)) =
          exact ? acc[f] : acc[f] / wsum;
  }
  return out;
}

}  // namespace stuq
