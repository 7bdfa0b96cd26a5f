#pragma once

// Recurrent sequence-to-sequence forecasters over graphs and grids. The
// encoder consumes a history of frames, the decoder emits `horizon` frames
// autoregressively (feeding back its own median/point head in free-running
// mode, the ground truth under teacher forcing). Output heads: point,
// 3-quantile (0.025, 0.5, 0.975 in that order), lower/point/upper interval,
// and an 11-parameter spline quantile block per predicted scalar.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stuq/autodiff.hpp"
#include "stuq/common.hpp"
#include "stuq/rng.hpp"
#include "stuq/scoring.hpp"
#include "stuq/spatial.hpp"
#include "stuq/tensor.hpp"

namespace stuq {

struct ModelConfig {
  std::string cell_kind = "graph-conv";  // "graph-conv" | "grid-conv"
  std::int64_t hidden_units = 16;
  std::int64_t layers = 1;
  std::int64_t diffusion_steps = 2;  // K, graph cells only
  std::int64_t kernel_size = 3;      // grid cells only, odd
  std::int64_t horizon = 1;          // H
  std::string head_kind = "point";   // point | quantile-3 | interval-3 | spline-11
  double dropout_rate = 0.0;
  std::string gating = "gru";  // "gru" | "plain"
  std::int64_t input_dim = 1;  // D, features per node per frame
  std::int64_t output_dim = 1; // predicted scalars per node (features 0..output_dim-1)
  std::int64_t grid_w = 0, grid_h = 0;  // grid cells only
  std::string padding = "zero";         // grid cells only: "zero" | "periodic"
  std::string support_set = "dual-random-walk";  // graph cells only

  void validate() const {
    require(cell_kind == "graph-conv" || cell_kind == "grid-conv",
            "model: unknown cell kind '" + cell_kind + "'");
    require(hidden_units >= 1, "model: hidden_units must be positive");
    require(layers >= 1, "model: layers must be positive");
    require(horizon >= 1, "model: horizon must be positive");
    require(input_dim >= 1, "model: input_dim must be positive");
    require(output_dim >= 1 && output_dim <= input_dim,
            "model: output_dim must lie in [1, input_dim]");
    require(gating == "gru" || gating == "plain", "model: unknown gating '" + gating + "'");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "model: dropout_rate must lie in [0,1)");
    require(head_kind == "point" || head_kind == "quantile-3" || head_kind == "interval-3" ||
                head_kind == "spline-11",
            "model: unknown head kind '" + head_kind + "'");
    if (cell_kind == "graph-conv") {
      require(diffusion_steps >= 1, "model: diffusion_steps must be positive");
    } else {
      require(kernel_size >= 1 && kernel_size % 2 == 1, "model: kernel_size must be odd positive");
      require(grid_w >= 1 && grid_h >= 1, "model: grid dimensions must be positive");
      require(padding == "zero" || padding == "periodic",
              "model: unknown padding '" + padding + "'");
    }
  }

  std::int64_t head_channels() const {
    if (head_kind == "point") return 1;
    if (head_kind == "quantile-3" || head_kind == "interval-3") return 3;
    return SplineQuantileParams::kParamCount;
  }

  // channel fed back as the next decoder input; -1 means derived (spline median)
  std::int64_t median_channel() const {
    if (head_kind == "point") return 0;
    if (head_kind == "quantile-3" || head_kind == "interval-3") return 1;
    return -1;
  }
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Ordered, name-addressable parameter collection; the order is the contract
// for masks, gradients, flattened vectors and checkpoints.
class ParamStore {
public:
  std::size_t add(std::string name, Tensor t) {
    for (const auto& it : items_)
      require(it.name != name, "params: duplicate name '" + name + "'");
    items_.push_back({std::move(name), std::move(t)});
    return items_.size() - 1;
  }

  std::vector<NamedParam>& items() { return items_; }
  const std::vector<NamedParam>& items() const { return items_; }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& it : items_) n += it.tensor.numel();
    return n;
  }

  NamedParam* find(const std::string& name) {
    for (auto& it : items_)
      if (it.name == name) return &it;
    return nullptr;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total_scalars()));
    for (const auto& it : items_)
      out.insert(out.end(), it.tensor.data.begin(), it.tensor.data.end());
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    require(static_cast<std::int64_t>(flat.size()) == total_scalars(),
            "params: flat vector has wrong length");
    std::size_t pos = 0;
    for (auto& it : items_) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                flat.begin() + static_cast<std::ptrdiff_t>(pos + it.tensor.data.size()),
                it.tensor.data.begin());
      pos += it.tensor.data.size();
    }
  }

private:
  std::vector<NamedParam> items_;
};

// Bernoulli keep-masks over every parameter tensor, element-wise, seeded.
// Masks multiply weights as-is — no 1/(1-rate) rescaling — because they are
// applied at inference only.
inline std::vector<Tensor> make_dropout_masks(const ParamStore& store, double rate,
                                              std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1)");
  Rng rng(seed);
  std::vector<Tensor> masks;
  masks.reserve(store.items().size());
  for (const auto& it : store.items()) {
    Tensor m(it.tensor.shape);
    for (auto& v : m.data) v = rng.bernoulli(rate) ? 0.0 : 1.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

struct BoundParams {
  std::vector<Value> leaves;     // raw parameter leaves, aligned with the store
  std::vector<Value> effective;  // leaves after masking (== leaves when unmasked)
};

struct ForecastOutput {
  std::int64_t horizon = 0, nodes = 0, output_dim = 0, channels = 0;
  std::vector<Value> frames;  // one (P, output_dim*channels) value per step

  // gather current frame values into one (H, P, output_dim*channels) tensor
  Tensor values(const Tape& t) const {
    Tensor out(Shape{horizon, nodes, output_dim * channels});
    std::size_t pos = 0;
    for (const Value& f : frames) {
      const Tensor& v = t.value(f);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += v.data.size();
    }
    return out;
  }
};

class Forecaster {
public:
  ModelConfig cfg;
  std::int64_t P = 0;
  std::vector<GraphSupport> supports;  // empty for grid cells
  ParamStore params;

  Forecaster(ModelConfig config, std::int64_t nodes, std::vector<GraphSupport> sups,
             std::uint64_t init_seed)
      : cfg(std::move(config)), P(nodes), supports(std::move(sups)) {
    cfg.validate();
    require(P >= 1, "model: node count must be positive");
    if (cfg.cell_kind == "graph-conv") {
      require(!supports.empty(), "model: graph cells need at least one support");
      for (const auto& s : supports)
        require(s.matrix.shape == Shape({P, P}), "model: support shape disagrees with node count");
    } else {
      require(supports.empty(), "model: grid cells take no graph supports");
      require(cfg.grid_w * cfg.grid_h == P, "model: grid_w*grid_h must equal the node count");
    }

    Rng rng(init_seed);
    const std::int64_t U = cfg.hidden_units;
    const std::vector<std::string> gates =
        cfg.gating == "gru" ? std::vector<std::string>{"r", "u", "c"}
                            : std::vector<std::string>{"g"};
    for (const char* stage : {"enc", "dec"}) {
      std::vector<CellRef>& cells = stage[0] == 'e' ? enc_ : dec_;
      for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const std::int64_t in_ch = (l == 0 ? cfg.input_dim : U) + U;  // concat [x, h]
        CellRef cell;
        for (const std::string& g : gates) {
          GateRef ref;
          const std::string base =
              std::string(stage) + ".l" + std::to_string(l) + "." + g;
          if (cfg.cell_kind == "graph-conv") {
            for (std::size_t s = 0; s < supports.size(); ++s)
              for (std::int64_t k = 0; k < cfg.diffusion_steps; ++k)
                ref.w.push_back(params.add(
                    base + ".s" + std::to_string(s) + "k" + std::to_string(k) + ".W",
                    init_uniform(Shape{in_ch, U}, in_ch, rng)));
          } else {
            ref.w.push_back(params.add(
                base + ".W",
                init_uniform(Shape{cfg.kernel_size, cfg.kernel_size, in_ch, U},
                             cfg.kernel_size * cfg.kernel_size * in_ch, rng)));
          }
          ref.b = params.add(base + ".b", Tensor::zeros(Shape{U}));
          cell.gates.push_back(ref);
        }
        cells.push_back(cell);
      }
    }
    const std::int64_t out_ch = cfg.output_dim * cfg.head_channels();
    head_w_ = params.add("head.W", init_uniform(Shape{U, out_ch}, U, rng));
    head_b_ = params.add("head.b", Tensor::zeros(Shape{out_ch}));
  }

  BoundParams bind(Tape& t, bool trainable, const std::vector<Tensor>* masks = nullptr) const {
    if (masks != nullptr)
      require(masks->size() == params.items().size(), "bind: mask count mismatch");
    BoundParams bp;
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      const Tensor& base = params.items()[i].tensor;
      Value leaf = trainable ? t.param(base) : t.input(base);
      bp.leaves.push_back(leaf);
      if (masks != nullptr) {
        require((*masks)[i].shape == base.shape, "bind: mask shape mismatch");
        bp.effective.push_back(t.mul(leaf, t.input((*masks)[i])));
      } else {
        bp.effective.push_back(leaf);
      }
    }
    return bp;
  }

  // Encoder/decoder pass over one window. history: (T_in, P, D). teacher (if
  // any): (H, P, D); use_teacher[j] selects the input of decoder step j >= 1
  // (step 0 always consumes the last history frame). Free-running mode never
  // reads targets.
  ForecastOutput run(Tape& t, const BoundParams& bp, const Tensor& history,
                     const Tensor* teacher = nullptr,
                     const std::vector<int>* use_teacher = nullptr) const {
    require(history.shape.rank() == 3, "run: history must be (T, P, D), got " +
                                           history.shape.str());
    require(history.shape[1] == P && history.shape[2] == cfg.input_dim,
            "run: history frame shape disagrees with model config");
    const std::int64_t T = history.shape[0];
    require(T >= 1, "run: need at least one history frame");
    const std::int64_t H = cfg.horizon;
    if (teacher != nullptr)
      require(teacher->shape == Shape({H, P, cfg.input_dim}),
              "run: teacher frames must be (H, P, D) matching the configured horizon");
    if (use_teacher != nullptr) {
      require(static_cast<std::int64_t>(use_teacher->size()) == H,
              "run: use_teacher must have one flag per horizon step");
      for (std::size_t j = 1; j < use_teacher->size(); ++j)
        if ((*use_teacher)[j]) require(teacher != nullptr, "run: teacher frames missing");
    }

    std::vector<Value> sups;
    for (const auto& s : supports) sups.push_back(t.input(s.matrix));

    const std::int64_t U = cfg.hidden_units;
    std::vector<Value> h(static_cast<std::size_t>(cfg.layers));
    for (auto& hv : h) hv = t.input(Tensor::zeros(state_shape(U)));

    for (std::int64_t ti = 0; ti < T; ++ti) {
      Value x = t.input(frame_tensor(history, ti));
      for (std::int64_t l = 0; l < cfg.layers; ++l) {
        Value in = l == 0 ? x : h[static_cast<std::size_t>(l - 1)];
        h[static_cast<std::size_t>(l)] =
            cell_step(t, bp, enc_[static_cast<std::size_t>(l)], sups, in,
                      h[static_cast<std::size_t>(l)]);
      }
    }

    ForecastOutput out;
    out.horizon = H;
    out.nodes = P;
    out.output_dim = cfg.output_dim;
    out.channels = cfg.head_channels();

    Value persist;  // trailing unpredicted features, persisted from the last frame
    if (cfg.input_dim > cfg.output_dim) {
      Tensor last = frame2d(history, T - 1);
      Tensor tail(Shape{P, cfg.input_dim - cfg.output_dim});
      for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t d = cfg.output_dim; d < cfg.input_dim; ++d)
          tail.at2(p, d - cfg.output_dim) = last.at2(p, d);
      persist = t.input(tail);
    }

    Value din = t.input(frame_tensor(history, T - 1));
    for (std::int64_t j = 0; j < H; ++j) {
      for (std::int64_t l = 0; l < cfg.layers; ++l) {
        Value in = l == 0 ? din : h[static_cast<std::size_t>(l - 1)];
        h[static_cast<std::size_t>(l)] =
            cell_step(t, bp, dec_[static_cast<std::size_t>(l)], sups, in,
                      h[static_cast<std::size_t>(l)]);
      }
      Value top = h[static_cast<std::size_t>(cfg.layers - 1)];
      if (cfg.cell_kind == "grid-conv") top = t.reshape(top, Shape{P, U});
      Value frame =
          t.add_rowvec(t.matmul(top, bp.effective[head_w_]), bp.effective[head_b_]);
      out.frames.push_back(frame);

      if (j + 1 < H) {
        const bool teach = use_teacher != nullptr
                               ? (*use_teacher)[static_cast<std::size_t>(j + 1)] != 0
                               : teacher != nullptr;
        if (teach) {
          Tensor tf(Shape{P, cfg.input_dim});
          for (std::int64_t p = 0; p < P; ++p)
            for (std::int64_t d = 0; d < cfg.input_dim; ++d)
              tf.at2(p, d) = teacher->at3(j, p, d);
          din = t.input(reshape_frame(tf));
        } else {
          din = feedback_frame(t, frame, persist);
        }
      }
    }
    return out;
  }

  // Frozen single-window inference on a private tape.
  Tensor predict(const Tensor& history, const std::vector<Tensor>* masks = nullptr) const {
    Tape t;
    BoundParams bp = bind(t, false, masks);
    ForecastOutput out = run(t, bp, history);
    return out.values(t);
  }

private:
  struct GateRef {
    std::vector<std::size_t> w;
    std::size_t b = 0;
  };
  struct CellRef {
    std::vector<GateRef> gates;  // (r, u, c) for gru; (g) for plain
  };

  std::vector<CellRef> enc_, dec_;
  std::size_t head_w_ = 0, head_b_ = 0;

  static Tensor init_uniform(Shape s, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(s, -bound, bound, rng);
  }

  Shape state_shape(std::int64_t U) const {
    if (cfg.cell_kind == "graph-conv") return Shape{P, U};
    return Shape{cfg.grid_w, cfg.grid_h, U};
  }

  // (P, D) block for frame ti
  Tensor frame2d(const Tensor& history, std::int64_t ti) const {
    Tensor f(Shape{P, cfg.input_dim});
    const std::size_t base = static_cast<std::size_t>(ti * P * cfg.input_dim);
    std::copy(history.data.begin() + static_cast<std::ptrdiff_t>(base),
              history.data.begin() + static_cast<std::ptrdiff_t>(base + f.data.size()),
              f.data.begin());
    return f;
  }

  Tensor reshape_frame(Tensor f2d) const {
    if (cfg.cell_kind == "grid-conv") f2d.shape = Shape{cfg.grid_w, cfg.grid_h, cfg.input_dim};
    return f2d;
  }

  Tensor frame_tensor(const Tensor& history, std::int64_t ti) const {
    return reshape_frame(frame2d(history, ti));
  }

  Value gate_preact(Tape& t, const BoundParams& bp, const GateRef& g,
                    const std::vector<Value>& sups, Value xin) const {
    if (cfg.cell_kind == "graph-conv") {
      std::vector<Value> w;
      for (std::size_t i : g.w) w.push_back(bp.effective[i]);
      return graph_conv(t, xin, sups, static_cast<int>(cfg.diffusion_steps), w,
                        bp.effective[g.b]);
    }
    const Pad pad = cfg.padding == "periodic" ? Pad::Periodic : Pad::Zero;
    return t.add_rowvec(t.conv2d(xin, bp.effective[g.w[0]], pad), bp.effective[g.b]);
  }

  Value cell_step(Tape& t, const BoundParams& bp, const CellRef& cell,
                  const std::vector<Value>& sups, Value x, Value h) const {
    if (cfg.gating == "plain") {
      Value xh = t.concat_last({x, h});
      return t.sigmoid(gate_preact(t, bp, cell.gates[0], sups, xh));
    }
    Value xh = t.concat_last({x, h});
    Value r = t.sigmoid(gate_preact(t, bp, cell.gates[0], sups, xh));
    Value u = t.sigmoid(gate_preact(t, bp, cell.gates[1], sups, xh));
    Value xrh = t.concat_last({x, t.mul(r, h)});
    Value c = t.tanh_(gate_preact(t, bp, cell.gates[2], sups, xrh));
    return t.add(t.mul(u, h), t.mul(t.one_minus(u), c));
  }

  // Build the next decoder input from the frame just emitted: median/point
  // channels for the predicted features, persisted values for the rest.
  Value feedback_frame(Tape& t, Value frame, Value persist) const {
    const std::int64_t ch = cfg.head_channels();
    std::vector<Value> parts;
    for (std::int64_t d = 0; d < cfg.output_dim; ++d) {
      if (cfg.median_channel() >= 0) {
        parts.push_back(t.slice_last(frame, d * ch + cfg.median_channel(), 1));
      } else {
        // spline head: evaluate each node's median Q(0.5) from its 11-block
        Value block = t.reshape(t.slice_last(frame, d * ch, ch), Shape{P * ch});
        std::vector<Value> med(static_cast<std::size_t>(P));
        for (std::int64_t p = 0; p < P; ++p) {
          Value raw = t.slice_last(block, p * ch, ch);
          SplineValues sv = transform_spline_params(t, raw);
          Value q = sv.intercept;
          for (std::size_t j = 0; j < sv.knots.size(); ++j) {
            Value hinge = t.relu(t.add_const(t.neg(sv.knots[j]), 0.5));
            q = t.add(q, t.mul(sv.slopes[j], hinge));
          }
          med[static_cast<std::size_t>(p)] = q;
        }
        parts.push_back(t.reshape(t.concat_last(med), Shape{P, 1}));
      }
    }
    if (persist.valid()) parts.push_back(persist);
    Value fb = parts.size() == 1 ? parts[0] : t.concat_last(parts);
    if (cfg.cell_kind == "grid-conv")
      fb = t.reshape(fb, Shape{cfg.grid_w, cfg.grid_h, cfg.input_dim});
    return fb;
  }
};

// ------------------------------------------------------------ training loss

struct LossOptions {
  double rho = 0.05;          // interval-3 miscoverage level
  double point_weight = 1.0;  // weight of the |y - f| anchor in interval-3
};

// Head-matched training loss for one window, averaged over unmasked
// (step, node, feature) positions. targets: (H, P, D); mask (optional):
// (H, P, output_dim) with nonzero = include.
inline Value forecast_training_loss(Tape& t, const ModelConfig& cfg, const ForecastOutput& out,
                                    const Tensor& targets, const Tensor* mask,
                                    const LossOptions& opt = {}) {
  const std::int64_t H = out.horizon, P = out.nodes, od = out.output_dim;
  require(targets.shape == Shape({H, P, cfg.input_dim}),
          "loss: targets must be (H, P, D), got " + targets.shape.str());
  if (mask != nullptr)
    require(mask->shape == Shape({H, P, od}), "loss: mask must be (H, P, output_dim)");
  check_rho(opt.rho);

  std::int64_t included = 0;
  if (mask == nullptr) {
    included = H * P * od;
  } else {
    for (double v : mask->data)
      if (v != 0.0) ++included;
  }
  require(included > 0, "loss: all target positions are masked");

  const std::int64_t ch = out.channels;
  Value acc = t.constant(0.0);
  for (std::int64_t j = 0; j < H; ++j) {
    Value o = out.frames[j];
    for (std::int64_t d = 0; d < od; ++d) {
      Tensor yt(Shape{P, 1}), mt(Shape{P, 1});
      for (std::int64_t p = 0; p < P; ++p) {
        yt.at2(p, 0) = targets.at3(j, p, d);
        mt.at2(p, 0) = mask == nullptr ? 1.0 : mask->at3(j, p, d);
      }
      Value y = t.input(yt);
      Value m = t.input(mt);

      if (cfg.head_kind == "point") {
        Value f = t.slice_last(o, d, 1);
        acc = t.add(acc, t.sum_all(t.mul(t.abs_(t.sub(f, y)), m)));
      } else if (cfg.head_kind == "quantile-3") {
        const double levels[3] = {0.025, 0.5, 0.975};
        for (int c = 0; c < 3; ++c) {
          Value f = t.slice_last(o, d * ch + c, 1);
          Value pin = t.add(t.scale(t.sub(y, f), levels[c]), t.relu(t.sub(f, y)));
          acc = t.add(acc, t.sum_all(t.mul(pin, m)));
        }
      } else if (cfg.head_kind == "interval-3") {
        Value l = t.slice_last(o, d * ch + 0, 1);
        Value f = t.slice_last(o, d * ch + 1, 1);
        Value u = t.slice_last(o, d * ch + 2, 1);
        Value term = t.sub(u, l);
        term = t.add(term, t.scale(t.relu(t.sub(y, u)), 2.0 / opt.rho));
        term = t.add(term, t.scale(t.relu(t.sub(l, y)), 2.0 / opt.rho));
        term = t.add(term, t.scale(t.abs_(t.sub(y, f)), opt.point_weight));
        acc = t.add(acc, t.sum_all(t.mul(term, m)));
      } else {  // spline-11
        Value block = t.reshape(t.slice_last(o, d * ch, ch), Shape{P * ch});
        for (std::int64_t p = 0; p < P; ++p) {
          if (mask != nullptr && mask->at3(j, p, d) == 0.0) continue;
          Value raw = t.slice_last(block, p * ch, ch);
          SplineValues sv = transform_spline_params(t, raw);
          acc = t.add(acc, crps_pwl_node(t, sv, targets.at3(j, p, d)));
        }
      }
    }
  }
  return t.scale(acc, 1.0 / static_cast<double>(included));
}

}  // namespace stuq
