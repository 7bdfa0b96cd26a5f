#pragma once

// Dataset plumbing: the (T, P, D) series container with missing-value mask,
// CSV ingestion per the documented schema, three synthetic generators with
// recorded ground truth, chronological splitting, train-only normalization
// statistics, and input/target windowing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stuq/common.hpp"
#include "stuq/rng.hpp"
#include "stuq/scoring.hpp"
#include "stuq/spatial.hpp"
#include "stuq/tensor.hpp"

namespace stuq {

// 0.975 standard-normal quantile, the recorded truth offset for the scalar
// regression generator.
inline constexpr double kZ975 = 1.959964;

struct SplitSpec {
  double train = 0.7, val = 0.1, test = 0.2;

  void validate() const {
    require(train > 0.0 && val > 0.0 && test > 0.0, "split: fractions must be positive");
    require(std::abs(train + val + test - 1.0) < 1e-9, "split: fractions must sum to 1");
  }
};

// Generative parameters recorded by make_synthetic for oracle checks.
struct GeneratorTruth {
  std::string kind;
  double noise_std = 0.0;
  double damping = 0.0;       // graph-diffusion
  Tensor support;             // graph-diffusion propagation matrix
  double period = 0.0, amplitude = 0.0;  // seasonal-grid
  double x_min = 0.0, x_max = 0.0;       // heteroscedastic-scalar covariate range
  double q975_offset = 0.0;              // heteroscedastic-scalar upper-quantile offset
};

struct Dataset {
  Tensor values;  // (T, P, D), raw units; masked cells hold 0
  Tensor mask;    // (T, P, D), 1 = observed
  std::vector<double> timestamps;  // length T, strictly increasing
  std::vector<std::string> node_ids;  // length P
  std::optional<SpatialGraph> graph;  // graph datasets
  std::int64_t grid_w = 0, grid_h = 0;  // grid datasets (0 when not a grid)
  std::int64_t input_len = 0, horizon = 0;
  std::int64_t window_stride = 1;
  SplitSpec split;
  GeneratorTruth truth;

  // derived by finalize()
  std::int64_t train_end = 0, val_end = 0;  // row boundaries [0,train_end) etc.
  Tensor feat_mean, feat_std;               // (D), train rows only
  std::vector<std::int64_t> train_windows, val_windows, test_windows;

  std::int64_t T() const { return values.shape.rank() == 3 ? values.shape[0] : 0; }
  std::int64_t P() const { return values.shape.rank() == 3 ? values.shape[1] : 0; }
  std::int64_t D() const { return values.shape.rank() == 3 ? values.shape[2] : 0; }

  double normalize(double v, std::int64_t d) const {
    return (v - feat_mean.data[static_cast<std::size_t>(d)]) /
           feat_std.data[static_cast<std::size_t>(d)];
  }
  double denormalize(double v, std::int64_t d) const {
    return v * feat_std.data[static_cast<std::size_t>(d)] +
           feat_mean.data[static_cast<std::size_t>(d)];
  }

  // Chronological split boundaries, train-only normalization stats, and the
  // per-split window start lists. A window starting at s spans rows
  // [s, s + input_len + horizon) and belongs to a split only when fully
  // contained in that split's row range, so splits never share timestamps.
  void finalize() {
    require(values.shape.rank() == 3, "dataset: values must be (T, P, D)");
    require(mask.shape == values.shape, "dataset: mask shape must match values");
    for (double m : mask.data)
      require(m == 0.0 || m == 1.0, "dataset: mask entries must be 0 or 1");
    require(static_cast<std::int64_t>(timestamps.size()) == T(),
            "dataset: timestamp count must equal T");
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      require(timestamps[i] > timestamps[i - 1], "dataset: timestamps must be strictly increasing");
    require(input_len >= 1 && horizon >= 1, "dataset: input_len and horizon must be positive");
    require(window_stride >= 1, "dataset: window stride must be positive");
    split.validate();
    if (graph.has_value())
      require(graph->P == P(), "dataset: adjacency is " + std::to_string(graph->P) +
                                   " nodes but series has " + std::to_string(P()));
    if (grid_w > 0 || grid_h > 0)
      require(grid_w * grid_h == P(), "dataset: grid dimensions disagree with node count");
    if (!node_ids.empty())
      require(static_cast<std::int64_t>(node_ids.size()) == P(),
              "dataset: node id count must equal P");

    train_end = std::llround(split.train * static_cast<double>(T()));
    val_end = std::llround((split.train + split.val) * static_cast<double>(T()));
    require(train_end >= 1 && val_end > train_end && val_end < T(),
            "dataset: series too short for the requested split");

    feat_mean = Tensor::zeros(Shape{D()});
    feat_std = Tensor::zeros(Shape{D()});
    for (std::int64_t d = 0; d < D(); ++d) {
      double sum = 0.0, count = 0.0;
      for (std::int64_t t = 0; t < train_end; ++t)
        for (std::int64_t p = 0; p < P(); ++p)
          if (mask.at3(t, p, d) != 0.0) {
            sum += values.at3(t, p, d);
            count += 1.0;
          }
      require(count > 0.0, "dataset: feature " + std::to_string(d) +
                               " has no observed training values");
      const double mean = sum / count;
      double sq = 0.0;
      for (std::int64_t t = 0; t < train_end; ++t)
        for (std::int64_t p = 0; p < P(); ++p)
          if (mask.at3(t, p, d) != 0.0) {
            const double c = values.at3(t, p, d) - mean;
            sq += c * c;
          }
      double std = std::sqrt(sq / count);
      if (std < 1e-12) std = 1.0;
      feat_mean.data[static_cast<std::size_t>(d)] = mean;
      feat_std.data[static_cast<std::size_t>(d)] = std;
    }

    train_windows.clear();
    val_windows.clear();
    test_windows.clear();
    const std::int64_t span = input_len + horizon;
    for (std::int64_t s = 0; s + span <= T(); s += window_stride) {
      if (s + span <= train_end)
        train_windows.push_back(s);
      else if (s >= train_end && s + span <= val_end)
        val_windows.push_back(s);
      else if (s >= val_end)
        test_windows.push_back(s);
      // windows straddling a boundary are dropped
    }
    require(!train_windows.empty(), "dataset: no complete training windows");
  }

  // (input_len, P, D), normalized; missing cells read 0 (the train mean)
  Tensor window_input(std::int64_t start) const {
    Tensor x(Shape{input_len, P(), D()});
    for (std::int64_t t = 0; t < input_len; ++t)
      for (std::int64_t p = 0; p < P(); ++p)
        for (std::int64_t d = 0; d < D(); ++d)
          x.at3(t, p, d) = mask.at3(start + t, p, d) != 0.0
                               ? normalize(values.at3(start + t, p, d), d)
                               : 0.0;
    return x;
  }

  // (horizon, P, D), normalized
  Tensor window_target(std::int64_t start) const {
    Tensor y(Shape{horizon, P(), D()});
    for (std::int64_t t = 0; t < horizon; ++t)
      for (std::int64_t p = 0; p < P(); ++p)
        for (std::int64_t d = 0; d < D(); ++d)
          y.at3(t, p, d) = mask.at3(start + input_len + t, p, d) != 0.0
                               ? normalize(values.at3(start + input_len + t, p, d), d)
                               : 0.0;
    return y;
  }

  // (horizon, P, D), raw units, masked cells 0
  Tensor window_target_raw(std::int64_t start) const {
    Tensor y(Shape{horizon, P(), D()});
    for (std::int64_t t = 0; t < horizon; ++t)
      for (std::int64_t p = 0; p < P(); ++p)
        for (std::int64_t d = 0; d < D(); ++d)
          y.at3(t, p, d) = values.at3(start + input_len + t, p, d);
    return y;
  }

  // (horizon, P, out_dim) 0/1 inclusion mask over the first out_dim features
  Tensor window_target_mask(std::int64_t start, std::int64_t out_dim) const {
    require(out_dim >= 1 && out_dim <= D(), "dataset: out_dim outside feature range");
    Tensor m(Shape{horizon, P(), out_dim});
    for (std::int64_t t = 0; t < horizon; ++t)
      for (std::int64_t p = 0; p < P(); ++p)
        for (std::int64_t d = 0; d < out_dim; ++d)
          m.at3(t, p, d) = mask.at3(start + input_len + t, p, d);
    return m;
  }
};

// ------------------------------------------------------------ CSV ingestion

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& tok, std::size_t line_no, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    require(used == tok.size(), "");
    return v;
  } catch (...) {
    throw ValidationError("line " + std::to_string(line_no) + ": non-numeric " + what + " '" +
                          tok + "'");
  }
}

}  // namespace detail

// Adjacency CSV: one header line of P node ids, then P rows of P weights.
inline SpatialGraph load_adjacency_csv(const std::string& path,
                                       std::vector<std::string>* ids_out = nullptr) {
  std::ifstream in(path);
  require(in.good(), "adjacency: cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) {
      ids = detail::split_csv_line(line);
      break;
    }
  }
  require(!ids.empty(), "adjacency: missing header row in '" + path + "'");
  const std::int64_t P = static_cast<std::int64_t>(ids.size());
  Tensor A(Shape{P, P});
  std::int64_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    require(row < P, "line " + std::to_string(line_no) + ": adjacency has more than " +
                         std::to_string(P) + " rows");
    auto toks = detail::split_csv_line(line);
    require(static_cast<std::int64_t>(toks.size()) == P,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(P) +
                " adjacency entries, got " + std::to_string(toks.size()));
    for (std::int64_t j = 0; j < P; ++j)
      A.at2(row, j) = detail::parse_number(toks[static_cast<std::size_t>(j)], line_no,
                                           "adjacency entry");
    ++row;
  }
  require(row == P, "adjacency: expected " + std::to_string(P) + " rows, got " +
                        std::to_string(row));
  if (ids_out != nullptr) *ids_out = ids;
  return SpatialGraph(A);
}

// Dataset CSV schema: header `timestamp,node_id,feat_0..feat_{D-1}`, one row
// per (timestamp, node), timestamps strictly increasing per node, empty cell
// = missing. When an adjacency CSV is given its header fixes the node order;
// otherwise nodes are indexed by first appearance.
inline Dataset load_dataset(const std::string& csv_path, const std::string& adjacency_path,
                            std::int64_t input_len, std::int64_t horizon, SplitSpec split = {},
                            std::int64_t grid_w = 0, std::int64_t grid_h = 0,
                            std::int64_t window_stride = 1) {
  Dataset ds;
  ds.input_len = input_len;
  ds.horizon = horizon;
  ds.split = split;
  ds.grid_w = grid_w;
  ds.grid_h = grid_h;
  ds.window_stride = window_stride;

  std::vector<std::string> ids;
  if (!adjacency_path.empty()) ds.graph = load_adjacency_csv(adjacency_path, &ids);

  std::ifstream in(csv_path);
  require(in.good(), "dataset: cannot open '" + csv_path + "'");
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      header = detail::split_csv_line(line);
      break;
    }
  }
  require(header.size() >= 3, "dataset: header must be timestamp,node_id,feat_0..");
  require(header[0] == "timestamp" && header[1] == "node_id",
          "dataset: header must start with timestamp,node_id");
  const std::int64_t D = static_cast<std::int64_t>(header.size()) - 2;
  for (std::int64_t d = 0; d < D; ++d)
    require(header[static_cast<std::size_t>(2 + d)] == "feat_" + std::to_string(d),
            "dataset: feature column " + std::to_string(d) + " must be named feat_" +
                std::to_string(d));

  struct Row {
    double ts;
    std::int64_t node;
    std::vector<double> feats;
    std::vector<bool> present;
  };
  std::vector<Row> rows;
  std::vector<double> last_ts;  // per node, for the strictly-increasing check
  auto node_index = [&](const std::string& id, std::size_t lno) -> std::int64_t {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<std::int64_t>(i);
    require(adjacency_path.empty(), "line " + std::to_string(lno) + ": node id '" + id +
                                        "' not present in the adjacency header");
    ids.push_back(id);
    return static_cast<std::int64_t>(ids.size()) - 1;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto toks = detail::split_csv_line(line);
    require(static_cast<std::int64_t>(toks.size()) == D + 2,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(D + 2) +
                " fields, got " + std::to_string(toks.size()));
    Row r;
    r.ts = detail::parse_number(toks[0], line_no, "timestamp");
    r.node = node_index(toks[1], line_no);
    last_ts.resize(ids.size(), -std::numeric_limits<double>::infinity());
    require(r.ts > last_ts[static_cast<std::size_t>(r.node)],
            "line " + std::to_string(line_no) +
                ": timestamps must be strictly increasing per node");
    last_ts[static_cast<std::size_t>(r.node)] = r.ts;
    for (std::int64_t d = 0; d < D; ++d) {
      const std::string& tok = toks[static_cast<std::size_t>(2 + d)];
      if (tok.empty()) {
        r.feats.push_back(0.0);
        r.present.push_back(false);
      } else {
        r.feats.push_back(detail::parse_number(tok, line_no, "feat_" + std::to_string(d)));
        r.present.push_back(true);
      }
    }
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), "dataset: no data rows in '" + csv_path + "'");

  if (!adjacency_path.empty()) {
    std::vector<bool> seen(ids.size(), false);
    for (const Row& r : rows) seen[static_cast<std::size_t>(r.node)] = true;
    for (std::size_t i = 0; i < ids.size(); ++i)
      require(seen[i], "dataset: adjacency expects " + std::to_string(ids.size()) +
                           " nodes but id '" + ids[i] + "' has no data rows");
  }

  std::vector<double> times;
  for (const Row& r : rows) times.push_back(r.ts);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const std::int64_t T = static_cast<std::int64_t>(times.size());
  const std::int64_t P = static_cast<std::int64_t>(ids.size());

  ds.values = Tensor::zeros(Shape{T, P, D});
  ds.mask = Tensor::zeros(Shape{T, P, D});
  for (const Row& r : rows) {
    auto it = std::lower_bound(times.begin(), times.end(), r.ts);
    const std::int64_t t = it - times.begin();
    for (std::int64_t d = 0; d < D; ++d)
      if (r.present[static_cast<std::size_t>(d)]) {
        ds.values.at3(t, r.node, d) = r.feats[static_cast<std::size_t>(d)];
        ds.mask.at3(t, r.node, d) = 1.0;
      }
  }
  ds.timestamps = times;
  ds.node_ids = ids;
  ds.finalize();
  return ds;
}

// ------------------------------------------------------- dataset emission

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "dataset: cannot write '" + path + "'");
  out.precision(17);
  out << "timestamp,node_id";
  for (std::int64_t d = 0; d < ds.D(); ++d) out << ",feat_" << d;
  out << "\n";
  for (std::int64_t t = 0; t < ds.T(); ++t)
    for (std::int64_t p = 0; p < ds.P(); ++p) {
      out << ds.timestamps[static_cast<std::size_t>(t)] << ","
          << (ds.node_ids.empty() ? std::to_string(p) : ds.node_ids[static_cast<std::size_t>(p)]);
      for (std::int64_t d = 0; d < ds.D(); ++d) {
        out << ",";
        if (ds.mask.at3(t, p, d) != 0.0) out << ds.values.at3(t, p, d);
      }
      out << "\n";
    }
  require(out.good(), "dataset: write to '" + path + "' failed");
}

inline void write_adjacency_csv(const SpatialGraph& g, const std::vector<std::string>& ids,
                                const std::string& path) {
  require(static_cast<std::int64_t>(ids.size()) == g.P, "adjacency: id count must equal P");
  std::ofstream out(path);
  require(out.good(), "adjacency: cannot write '" + path + "'");
  out.precision(17);
  for (std::int64_t i = 0; i < g.P; ++i) out << (i ? "," : "") << ids[static_cast<std::size_t>(i)];
  out << "\n";
  for (std::int64_t i = 0; i < g.P; ++i) {
    for (std::int64_t j = 0; j < g.P; ++j) out << (j ? "," : "") << g.A.at2(i, j);
    out << "\n";
  }
  require(out.good(), "adjacency: write to '" + path + "' failed");
}

// ---------------------------------------------------- synthetic generators

struct SyntheticSpec {
  std::string kind;  // graph-diffusion | seasonal-grid | heteroscedastic-scalar
  std::int64_t length = 2000;  // series rows T
  std::int64_t nodes = 10;     // graph-diffusion node count
  double noise_std = 0.1;

  // graph-diffusion
  double damping = 0.9;
  double sigma_sq = 0.5;    // kernel bandwidth over squared distances
  double threshold = 0.05;  // kernel sparsification

  // seasonal-grid
  std::int64_t grid_w = 6, grid_h = 5;
  double period = 24.0, amplitude = 1.0, offset = 0.0;

  // heteroscedastic-scalar
  double x_min = -2.0, x_max = 2.0;
  double noise_slope = 0.0;  // std = noise_std + noise_slope*|x|
};

namespace detail {

inline Dataset synth_graph_diffusion(const SyntheticSpec& spec, std::uint64_t seed) {
  const std::int64_t T = spec.length, P = spec.nodes;
  require(P >= 2, "graph-diffusion: need at least 2 nodes");
  require(spec.damping >= 0.0 && spec.damping <= 1.0, "graph-diffusion: damping must be in [0,1]");
  require(spec.noise_std >= 0.0, "graph-diffusion: noise std must be nonnegative");

  Rng pos_rng(derive_seed(seed, 0));
  std::vector<double> px(static_cast<std::size_t>(P)), py(static_cast<std::size_t>(P));
  for (std::int64_t i = 0; i < P; ++i) {
    px[static_cast<std::size_t>(i)] = pos_rng.uniform();
    py[static_cast<std::size_t>(i)] = pos_rng.uniform();
  }
  Tensor dist(Shape{P, P});
  for (std::int64_t i = 0; i < P; ++i)
    for (std::int64_t j = 0; j < P; ++j) {
      const double dx = px[static_cast<std::size_t>(i)] - px[static_cast<std::size_t>(j)];
      const double dy = py[static_cast<std::size_t>(i)] - py[static_cast<std::size_t>(j)];
      dist.at2(i, j) = dx * dx + dy * dy;
    }
  SpatialGraph g(gaussian_kernel_adjacency(dist, spec.sigma_sq, spec.threshold));
  Tensor S = random_walk_support(g).matrix;

  Dataset ds;
  ds.values = Tensor::zeros(Shape{T, P, 1});
  ds.mask = Tensor(Shape{T, P, 1});
  ds.mask.fill(1.0);
  Rng dyn(derive_seed(seed, 1));
  std::vector<double> x(static_cast<std::size_t>(P));
  for (auto& v : x) v = dyn.normal();
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t p = 0; p < P; ++p) ds.values.at3(t, p, 0) = x[static_cast<std::size_t>(p)];
    std::vector<double> nx(static_cast<std::size_t>(P), 0.0);
    for (std::int64_t i = 0; i < P; ++i) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < P; ++j) acc += S.at2(i, j) * x[static_cast<std::size_t>(j)];
      nx[static_cast<std::size_t>(i)] = spec.damping * acc + spec.noise_std * dyn.normal();
    }
    x = nx;
  }
  ds.graph = g;
  ds.truth.kind = spec.kind;
  ds.truth.noise_std = spec.noise_std;
  ds.truth.damping = spec.damping;
  ds.truth.support = S;
  return ds;
}

inline Dataset synth_seasonal_grid(const SyntheticSpec& spec, std::uint64_t seed) {
  const std::int64_t T = spec.length, gw = spec.grid_w, gh = spec.grid_h;
  require(gw >= 2 && gh >= 2, "seasonal-grid: grid must be at least 2x2");
  require(spec.period > 0.0, "seasonal-grid: period must be positive");
  const std::int64_t P = gw * gh;
  const double two_pi = 2.0 * std::acos(-1.0);

  Dataset ds;
  ds.values = Tensor::zeros(Shape{T, P, 1});
  ds.mask = Tensor(Shape{T, P, 1});
  ds.mask.fill(1.0);
  Rng rng(derive_seed(seed, 0));
  std::vector<double> white(static_cast<std::size_t>(P));
  for (std::int64_t t = 0; t < T; ++t) {
    for (auto& w : white) w = rng.normal();
    for (std::int64_t i = 0; i < gw; ++i)
      for (std::int64_t j = 0; j < gh; ++j) {
        // 3x3 periodic mean filter correlates the noise spatially; the x3
        // rescale restores roughly unit variance before noise_std applies
        double sm = 0.0;
        for (std::int64_t di = -1; di <= 1; ++di)
          for (std::int64_t dj = -1; dj <= 1; ++dj) {
            const std::int64_t ii = (i + di + gw) % gw, jj = (j + dj + gh) % gh;
            sm += white[static_cast<std::size_t>(ii * gh + jj)];
          }
        sm = sm / 9.0 * 3.0;
        const double phase = two_pi * (static_cast<double>(i) / static_cast<double>(gw) +
                                       0.5 * static_cast<double>(j) / static_cast<double>(gh));
        const double base =
            spec.offset +
            spec.amplitude * std::sin(two_pi * static_cast<double>(t) / spec.period + phase);
        ds.values.at3(t, i * gh + j, 0) = base + spec.noise_std * sm;
      }
  }
  ds.grid_w = gw;
  ds.grid_h = gh;
  ds.truth.kind = spec.kind;
  ds.truth.noise_std = spec.noise_std;
  ds.truth.period = spec.period;
  ds.truth.amplitude = spec.amplitude;
  return ds;
}

// Scalar regression posed as a sequence task: even rows carry the covariate
// x, odd rows carry y = x + noise; windows stride by 2 with input_len =
// horizon = 1 so each window is one (x, y) pair.
inline Dataset synth_heteroscedastic_scalar(const SyntheticSpec& spec, std::uint64_t seed) {
  const std::int64_t T = spec.length;
  require(T >= 8 && T % 2 == 0, "heteroscedastic-scalar: length must be even and >= 8");
  require(spec.x_max > spec.x_min, "heteroscedastic-scalar: x range is empty");
  require(spec.noise_std >= 0.0 && spec.noise_slope >= 0.0,
          "heteroscedastic-scalar: noise parameters must be nonnegative");

  Dataset ds;
  ds.values = Tensor::zeros(Shape{T, 1, 1});
  ds.mask = Tensor(Shape{T, 1, 1});
  ds.mask.fill(1.0);
  Rng rng(derive_seed(seed, 0));
  for (std::int64_t k = 0; k + 1 < T; k += 2) {
    const double x = spec.x_min + (spec.x_max - spec.x_min) * rng.uniform();
    const double s = spec.noise_std + spec.noise_slope * std::abs(x);
    ds.values.at3(k, 0, 0) = x;
    ds.values.at3(k + 1, 0, 0) = x + s * rng.normal();
  }
  ds.window_stride = 2;
  Tensor self(Shape{1, 1});
  self.at2(0, 0) = 1.0;
  ds.graph = SpatialGraph(self);  // self-loop so graph cells run on scalar data
  ds.truth.kind = spec.kind;
  ds.truth.noise_std = spec.noise_std;
  ds.truth.x_min = spec.x_min;
  ds.truth.x_max = spec.x_max;
  ds.truth.q975_offset = kZ975 * spec.noise_std;
  return ds;
}

}  // namespace detail

inline Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                              std::int64_t input_len, std::int64_t horizon,
                              SplitSpec split = {}) {
  Dataset ds;
  if (spec.kind == "graph-diffusion") {
    ds = detail::synth_graph_diffusion(spec, seed);
  } else if (spec.kind == "seasonal-grid") {
    ds = detail::synth_seasonal_grid(spec, seed);
  } else if (spec.kind == "heteroscedastic-scalar") {
    require(input_len == 1 && horizon == 1,
            "heteroscedastic-scalar: windows must be input_len = horizon = 1");
    ds = detail::synth_heteroscedastic_scalar(spec, seed);
  } else {
    throw ValidationError("synthetic: unknown generator '" + spec.kind + "'");
  }
  ds.input_len = input_len;
  ds.horizon = horizon;
  ds.split = split;
  ds.timestamps.resize(static_cast<std::size_t>(ds.T()));
  for (std::int64_t t = 0; t < ds.T(); ++t)
    ds.timestamps[static_cast<std::size_t>(t)] = static_cast<double>(t);
  ds.node_ids.resize(static_cast<std::size_t>(ds.P()));
  for (std::int64_t p = 0; p < ds.P(); ++p)
    ds.node_ids[static_cast<std::size_t>(p)] = std::to_string(p);
  ds.finalize();
  return ds;
}

}  // namespace stuq
