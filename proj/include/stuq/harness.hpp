#pragma once

// Experiment harness: sectioned key=value configs, dataset construction,
// method dispatch, results + raw-forecast artifacts, sample-complexity
// sweeps, plot-data CSV emission, checkpoints, and standalone oracle suites.
// All artifact writes are atomic (write temp, then rename); a results.json
// is only renamed into place after every other artifact of the run exists.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stuq/common.hpp"
#include "stuq/data.hpp"
#include "stuq/models.hpp"
#include "stuq/scoring.hpp"
#include "stuq/spatial.hpp"
#include "stuq/train.hpp"
#include "stuq/uq.hpp"

namespace stuq {

using Json = nlohmann::ordered_json;

// ----------------------------------------------------------------- file io

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "io: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline void finish_atomic_write(std::ofstream& out, const std::filesystem::path& tmp,
                                const std::filesystem::path& target) {
  out.flush();
  require(out.good(), "io: short write to '" + tmp.string() + "'");
  out.close();
  std::filesystem::rename(tmp, target);
}

inline std::filesystem::path begin_atomic_write(const std::string& path) {
  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  return tmp;
}

}  // namespace detail

inline void write_text_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path tmp = detail::begin_atomic_write(path);
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  require(out.good(), "io: cannot write '" + tmp.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  detail::finish_atomic_write(out, tmp, path);
}

inline void write_doubles_atomic(const std::string& path, const std::vector<double>& values) {
  const std::filesystem::path tmp = detail::begin_atomic_write(path);
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  require(out.good(), "io: cannot write '" + tmp.string() + "'");
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  detail::finish_atomic_write(out, tmp, path);
}

inline std::vector<double> read_doubles(const std::string& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(in.good(), "io: cannot open '" + path + "'");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  require(bytes == expected * sizeof(double),
          "io: '" + path + "' holds " + std::to_string(bytes / sizeof(double)) +
              " doubles, expected " + std::to_string(expected));
  std::vector<double> out(expected);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  require(in.good(), "io: short read from '" + path + "'");
  return out;
}

// shortest exact decimal round-trip for doubles in CSV/INI emissions
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- ini files

struct IniDoc {
  using Section = std::vector<std::pair<std::string, std::string>>;
  std::vector<std::pair<std::string, Section>> sections;  // insertion-ordered

  const Section* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.first == name) return &s.second;
    return nullptr;
  }

  Section& open(const std::string& name) {
    for (auto& s : sections)
      if (s.first == name) return s.second;
    sections.push_back({name, {}});
    return sections.back().second;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    Section& sec = open(section);
    for (auto& kv : sec)
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    sec.push_back({key, value});
  }
};

namespace detail {

inline std::string trim_copy(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

// Sections as `[name]`, entries as `key = value`, `#`/`;` comment lines.
// Values keep inner whitespace; duplicate sections or keys are errors.
inline IniDoc parse_ini(const std::string& text) {
  IniDoc doc;
  IniDoc::Section* cur = nullptr;
  std::string cur_name;
  std::istringstream in(text);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = detail::trim_copy(line);
    const std::string at = "config line " + std::to_string(line_no) + ": ";
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      require(t.size() >= 3 && t.back() == ']', at + "malformed section header '" + t + "'");
      cur_name = detail::trim_copy(t.substr(1, t.size() - 2));
      require(!cur_name.empty(), at + "empty section name");
      require(doc.find(cur_name) == nullptr, at + "duplicate section [" + cur_name + "]");
      cur = &doc.open(cur_name);
      continue;
    }
    const std::size_t eq = t.find('=');
    require(eq != std::string::npos, at + "expected 'key = value', got '" + t + "'");
    require(cur != nullptr, at + "entry before any [section]");
    const std::string key = detail::trim_copy(t.substr(0, eq));
    const std::string val = detail::trim_copy(t.substr(eq + 1));
    require(!key.empty(), at + "empty key");
    for (const auto& kv : *cur)
      require(kv.first != key, at + "duplicate key '" + key + "' in [" + cur_name + "]");
    cur->push_back({key, val});
  }
  return doc;
}

inline IniDoc load_ini(const std::string& path) { return parse_ini(read_text_file(path)); }

inline std::string ini_to_text(const IniDoc& doc) {
  std::ostringstream out;
  for (std::size_t i = 0; i < doc.sections.size(); ++i) {
    if (i) out << '\n';
    out << '[' << doc.sections[i].first << "]\n";
    for (const auto& kv : doc.sections[i].second) out << kv.first << " = " << kv.second << '\n';
  }
  return out.str();
}

inline Json ini_to_json(const IniDoc& doc) {
  Json j = Json::object();
  for (const auto& sec : doc.sections) {
    Json s = Json::object();
    for (const auto& kv : sec.second) s[kv.first] = kv.second;
    j[sec.first] = s;
  }
  return j;
}

inline IniDoc json_to_ini(const Json& j) {
  require(j.is_object(), "config echo: expected an object of sections");
  IniDoc doc;
  for (const auto& [sec, body] : j.items()) {
    require(body.is_object(), "config echo: section '" + sec + "' is not an object");
    IniDoc::Section& s = doc.open(sec);
    for (const auto& [key, val] : body.items()) {
      require(val.is_string(), "config echo: [" + sec + "] " + key + " is not a string");
      s.push_back({key, val.get<std::string>()});
    }
  }
  return doc;
}

namespace detail {

// Typed accessors over one section with consumed-key accounting, so any
// unrecognized key fails loudly instead of being silently ignored.
class SectionReader {
 public:
  SectionReader(const IniDoc& doc, std::string name) : name_(std::move(name)) {
    if (const IniDoc::Section* s = doc.find(name_)) pairs_ = *s;
    seen_.assign(pairs_.size(), false);
  }

  std::string str(const std::string& key, const std::string& fallback) {
    if (const std::string* v = take(key)) return *v;
    return fallback;
  }

  double num(const std::string& key, double fallback) {
    if (const std::string* v = take(key)) {
      try {
        std::size_t pos = 0;
        const double x = std::stod(*v, &pos);
        require(pos == v->size(), bad(key, *v, "number"));
        return x;
      } catch (const ValidationError&) {
        throw;
      } catch (...) {
        throw ValidationError(bad(key, *v, "number"));
      }
    }
    return fallback;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (const std::string* v = take(key)) {
      try {
        std::size_t pos = 0;
        const std::int64_t x = std::stoll(*v, &pos);
        require(pos == v->size(), bad(key, *v, "integer"));
        return x;
      } catch (const ValidationError&) {
        throw;
      } catch (...) {
        throw ValidationError(bad(key, *v, "integer"));
      }
    }
    return fallback;
  }

  std::uint64_t uinteger(const std::string& key, std::uint64_t fallback) {
    if (const std::string* v = take(key)) {
      require(v->find('-') == std::string::npos, bad(key, *v, "nonnegative integer"));
      try {
        std::size_t pos = 0;
        const std::uint64_t x = std::stoull(*v, &pos);
        require(pos == v->size(), bad(key, *v, "nonnegative integer"));
        return x;
      } catch (const ValidationError&) {
        throw;
      } catch (...) {
        throw ValidationError(bad(key, *v, "nonnegative integer"));
      }
    }
    return fallback;
  }

  void done() const {
    for (std::size_t i = 0; i < pairs_.size(); ++i)
      require(seen_[i], "config: unknown key '" + pairs_[i].first + "' in [" + name_ + "]");
  }

 private:
  const std::string* take(const std::string& key) {
    for (std::size_t i = 0; i < pairs_.size(); ++i)
      if (pairs_[i].first == key) {
        seen_[i] = true;
        return &pairs_[i].second;
      }
    return nullptr;
  }

  std::string bad(const std::string& key, const std::string& v, const char* want) const {
    return "config: [" + name_ + "] " + key + ": expected " + want + ", got '" + v + "'";
  }

  std::string name_;
  IniDoc::Section pairs_;
  std::vector<bool> seen_;
};

}  // namespace detail

// ----------------------------------------------------------- experiment cfg

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | csv
  SyntheticSpec synth{.kind = "graph-diffusion"};
  std::uint64_t data_seed = 0;
  std::string path, adjacency;          // csv mode
  std::int64_t grid_w = 0, grid_h = 0;  // grid layout; 0 = generator default / none
  std::int64_t input_len = 12, horizon = 3;
  std::int64_t stride = 0;  // 0 = keep the generator/loader default
  SplitSpec split;
};

struct MethodSpec {
  std::string tag = "point";
  double rho = 0.05;
  EnsembleBudget budget;       // bootstrap
  std::int64_t ensemble = 1;   // quantile/mis regressor ensembles
  double dropout_rate = 0.05;  // mc-dropout
  std::int64_t passes = 50;
  SamplerConfig sampler;  // sg-mcmc
};

struct RunSpec {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string eval_split = "test";  // test | val
  std::int64_t eval_limit = 0;      // 0 = every window of the split
};

struct SweepSpec {
  std::vector<std::int64_t> counts{5, 25};
  std::int64_t seed_count = 10;
};

inline const std::vector<std::string>& method_tags() {
  static const std::vector<std::string> tags{"point", "bootstrap", "quantile", "sq",
                                            "mis",   "mc-dropout", "sg-mcmc"};
  return tags;
}

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  MethodSpec method;
  RunSpec run;
  SweepSpec sweep;

  void validate() const {
    require(dataset.kind == "synthetic" || dataset.kind == "csv",
            "config: [dataset] kind must be synthetic or csv, got '" + dataset.kind + "'");
    if (dataset.kind == "csv") require(!dataset.path.empty(), "config: [dataset] path is required for csv datasets");
    require(dataset.input_len >= 1, "config: [dataset] input-len must be positive");
    require(dataset.horizon >= 1, "config: [dataset] horizon must be positive");
    require(dataset.stride >= 0, "config: [dataset] stride must be nonnegative");
    dataset.split.validate();
    train.validate();
    require(std::count(method_tags().begin(), method_tags().end(), method.tag) == 1,
            "config: [method] unknown tag '" + method.tag +
                "' (expected point, bootstrap, quantile, sq, mis, mc-dropout, or sg-mcmc)");
    check_rho(method.rho);
    require(run.eval_split == "test" || run.eval_split == "val",
            "config: [run] eval-split must be test or val");
    require(run.eval_limit >= 0, "config: [run] eval-limit must be nonnegative");
    require(!run.out.empty(), "config: [run] out must not be empty");
    require(!sweep.counts.empty(), "config: [sweep] samples list must not be empty");
    for (std::size_t i = 0; i < sweep.counts.size(); ++i) {
      require(sweep.counts[i] >= 2, "config: [sweep] sample counts must be at least 2");
      if (i) require(sweep.counts[i] > sweep.counts[i - 1], "config: [sweep] sample counts must be strictly ascending");
    }
    require(sweep.seed_count >= 1, "config: [sweep] seeds must be positive");
  }
};

inline std::vector<std::int64_t> parse_count_list(const std::string& raw) {
  std::vector<std::int64_t> out;
  std::string tok;
  std::istringstream in(raw);
  while (std::getline(in, tok, ',')) {
    tok = detail::trim_copy(tok);
    if (tok.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stoll(tok, &pos));
      require(pos == tok.size(), "config: bad sample count '" + tok + "'");
    } catch (const ValidationError&) {
      throw;
    } catch (...) {
      throw ValidationError("config: bad sample count '" + tok + "'");
    }
  }
  require(!out.empty(), "config: empty sample count list '" + raw + "'");
  return out;
}

inline ExperimentConfig config_from_ini(const IniDoc& doc) {
  for (const auto& sec : doc.sections)
    require(sec.first == "dataset" || sec.first == "model" || sec.first == "train" ||
                sec.first == "method" || sec.first == "run" || sec.first == "sweep",
            "config: unknown section [" + sec.first + "]");

  ExperimentConfig cfg;
  {
    detail::SectionReader r(doc, "dataset");
    DatasetSpec& d = cfg.dataset;
    d.kind = r.str("kind", d.kind);
    d.synth.kind = r.str("generator", d.synth.kind);
    d.synth.length = r.integer("length", d.synth.length);
    d.synth.nodes = r.integer("nodes", d.synth.nodes);
    d.synth.noise_std = r.num("noise-std", d.synth.noise_std);
    d.synth.damping = r.num("damping", d.synth.damping);
    d.synth.sigma_sq = r.num("sigma-sq", d.synth.sigma_sq);
    d.synth.threshold = r.num("threshold", d.synth.threshold);
    d.synth.period = r.num("period", d.synth.period);
    d.synth.amplitude = r.num("amplitude", d.synth.amplitude);
    d.synth.offset = r.num("offset", d.synth.offset);
    d.synth.x_min = r.num("x-min", d.synth.x_min);
    d.synth.x_max = r.num("x-max", d.synth.x_max);
    d.synth.noise_slope = r.num("noise-slope", d.synth.noise_slope);
    d.data_seed = r.uinteger("data-seed", d.data_seed);
    d.path = r.str("path", d.path);
    d.adjacency = r.str("adjacency", d.adjacency);
    d.grid_w = r.integer("grid-w", d.grid_w);
    d.grid_h = r.integer("grid-h", d.grid_h);
    d.input_len = r.integer("input-len", d.input_len);
    d.horizon = r.integer("horizon", d.horizon);
    d.stride = r.integer("stride", d.stride);
    d.split.train = r.num("train-fraction", d.split.train);
    d.split.val = r.num("val-fraction", d.split.val);
    d.split.test = r.num("test-fraction", d.split.test);
    r.done();
  }
  {
    detail::SectionReader r(doc, "model");
    ModelConfig& m = cfg.model;
    m.cell_kind = r.str("cell", m.cell_kind);
    m.hidden_units = r.integer("hidden", m.hidden_units);
    m.layers = r.integer("layers", m.layers);
    m.diffusion_steps = r.integer("diffusion-steps", m.diffusion_steps);
    m.kernel_size = r.integer("kernel-size", m.kernel_size);
    m.support_set = r.str("support-set", m.support_set);
    m.gating = r.str("gating", m.gating);
    m.dropout_rate = r.num("dropout", m.dropout_rate);
    m.padding = r.str("padding", m.padding);
    m.output_dim = r.integer("output-dim", m.output_dim);
    r.done();
  }
  {
    detail::SectionReader r(doc, "train");
    TrainConfig& t = cfg.train;
    t.epochs = r.integer("epochs", t.epochs);
    t.batch_size = r.integer("batch", t.batch_size);
    t.optimizer = r.str("optimizer", t.optimizer);
    t.lr = r.num("lr", t.lr);
    t.clip_norm = r.num("clip-norm", t.clip_norm);
    t.patience = r.integer("patience", t.patience);
    t.sampling_decay_epochs = r.integer("sampling-decay-epochs", t.sampling_decay_epochs);
    t.point_weight = r.num("point-weight", t.point_weight);
    r.done();
  }
  {
    detail::SectionReader r(doc, "method");
    MethodSpec& m = cfg.method;
    m.tag = r.str("tag", m.tag);
    m.rho = r.num("rho", m.rho);
    m.budget.replicates = r.integer("replicates", m.budget.replicates);
    m.budget.keep_fraction = r.num("keep-fraction", m.budget.keep_fraction);
    m.budget.weighting = r.str("weighting", m.budget.weighting);
    m.ensemble = r.integer("ensemble", m.ensemble);
    m.dropout_rate = r.num("dropout-rate", m.dropout_rate);
    m.passes = r.integer("passes", m.passes);
    m.sampler.h = r.num("h", m.sampler.h);
    m.sampler.diffusion_a = r.num("diffusion-a", m.sampler.diffusion_a);
    m.sampler.xi0 = r.num("xi0", m.sampler.xi0);
    m.sampler.prior_variance = r.num("prior-variance", m.sampler.prior_variance);
    m.sampler.init_std = r.num("init-std", m.sampler.init_std);
    m.sampler.burn_in = r.integer("burn-in", m.sampler.burn_in);
    m.sampler.thinning = r.integer("thinning", m.sampler.thinning);
    m.sampler.chains = r.integer("chains", m.sampler.chains);
    m.sampler.draws_per_chain = r.integer("draws-per-chain", m.sampler.draws_per_chain);
    m.sampler.batch_size = r.integer("sampler-batch", m.sampler.batch_size);
    m.sampler.max_epochs = r.integer("max-epochs", m.sampler.max_epochs);
    r.done();
  }
  {
    detail::SectionReader r(doc, "run");
    RunSpec& rr = cfg.run;
    rr.seed = r.uinteger("seed", rr.seed);
    rr.out = r.str("out", rr.out);
    rr.eval_split = r.str("eval-split", rr.eval_split);
    rr.eval_limit = r.integer("eval-limit", rr.eval_limit);
    r.done();
  }
  {
    detail::SectionReader r(doc, "sweep");
    const std::string counts = r.str("samples", "");
    if (!counts.empty()) cfg.sweep.counts = parse_count_list(counts);
    cfg.sweep.seed_count = r.integer("seeds", cfg.sweep.seed_count);
    r.done();
  }
  cfg.validate();
  return cfg;
}

// Complete effective-value echo; round-trips through config_from_ini exactly.
inline IniDoc config_to_ini(const ExperimentConfig& cfg) {
  IniDoc doc;
  const auto I = [](std::int64_t v) { return std::to_string(v); };
  const auto U = [](std::uint64_t v) { return std::to_string(v); };
  {
    IniDoc::Section& s = doc.open("dataset");
    const DatasetSpec& d = cfg.dataset;
    s.push_back({"kind", d.kind});
    s.push_back({"generator", d.synth.kind});
    s.push_back({"length", I(d.synth.length)});
    s.push_back({"nodes", I(d.synth.nodes)});
    s.push_back({"noise-std", fmt_g17(d.synth.noise_std)});
    s.push_back({"damping", fmt_g17(d.synth.damping)});
    s.push_back({"sigma-sq", fmt_g17(d.synth.sigma_sq)});
    s.push_back({"threshold", fmt_g17(d.synth.threshold)});
    s.push_back({"period", fmt_g17(d.synth.period)});
    s.push_back({"amplitude", fmt_g17(d.synth.amplitude)});
    s.push_back({"offset", fmt_g17(d.synth.offset)});
    s.push_back({"x-min", fmt_g17(d.synth.x_min)});
    s.push_back({"x-max", fmt_g17(d.synth.x_max)});
    s.push_back({"noise-slope", fmt_g17(d.synth.noise_slope)});
    s.push_back({"data-seed", U(d.data_seed)});
    s.push_back({"path", d.path});
    s.push_back({"adjacency", d.adjacency});
    s.push_back({"grid-w", I(d.grid_w)});
    s.push_back({"grid-h", I(d.grid_h)});
    s.push_back({"input-len", I(d.input_len)});
    s.push_back({"horizon", I(d.horizon)});
    s.push_back({"stride", I(d.stride)});
    s.push_back({"train-fraction", fmt_g17(d.split.train)});
    s.push_back({"val-fraction", fmt_g17(d.split.val)});
    s.push_back({"test-fraction", fmt_g17(d.split.test)});
  }
  {
    IniDoc::Section& s = doc.open("model");
    const ModelConfig& m = cfg.model;
    s.push_back({"cell", m.cell_kind});
    s.push_back({"hidden", I(m.hidden_units)});
    s.push_back({"layers", I(m.layers)});
    s.push_back({"diffusion-steps", I(m.diffusion_steps)});
    s.push_back({"kernel-size", I(m.kernel_size)});
    s.push_back({"support-set", m.support_set});
    s.push_back({"gating", m.gating});
    s.push_back({"dropout", fmt_g17(m.dropout_rate)});
    s.push_back({"padding", m.padding});
    s.push_back({"output-dim", I(m.output_dim)});
  }
  {
    IniDoc::Section& s = doc.open("train");
    const TrainConfig& t = cfg.train;
    s.push_back({"epochs", I(t.epochs)});
    s.push_back({"batch", I(t.batch_size)});
    s.push_back({"optimizer", t.optimizer});
    s.push_back({"lr", fmt_g17(t.lr)});
    s.push_back({"clip-norm", fmt_g17(t.clip_norm)});
    s.push_back({"patience", I(t.patience)});
    s.push_back({"sampling-decay-epochs", I(t.sampling_decay_epochs)});
    s.push_back({"point-weight", fmt_g17(t.point_weight)});
  }
  {
    IniDoc::Section& s = doc.open("method");
    const MethodSpec& m = cfg.method;
    s.push_back({"tag", m.tag});
    s.push_back({"rho", fmt_g17(m.rho)});
    s.push_back({"replicates", I(m.budget.replicates)});
    s.push_back({"keep-fraction", fmt_g17(m.budget.keep_fraction)});
    s.push_back({"weighting", m.budget.weighting});
    s.push_back({"ensemble", I(m.ensemble)});
    s.push_back({"dropout-rate", fmt_g17(m.dropout_rate)});
    s.push_back({"passes", I(m.passes)});
    s.push_back({"h", fmt_g17(m.sampler.h)});
    s.push_back({"diffusion-a", fmt_g17(m.sampler.diffusion_a)});
    s.push_back({"xi0", fmt_g17(m.sampler.xi0)});
    s.push_back({"prior-variance", fmt_g17(m.sampler.prior_variance)});
    s.push_back({"init-std", fmt_g17(m.sampler.init_std)});
    s.push_back({"burn-in", I(m.sampler.burn_in)});
    s.push_back({"thinning", I(m.sampler.thinning)});
    s.push_back({"chains", I(m.sampler.chains)});
    s.push_back({"draws-per-chain", I(m.sampler.draws_per_chain)});
    s.push_back({"sampler-batch", I(m.sampler.batch_size)});
    s.push_back({"max-epochs", I(m.sampler.max_epochs)});
  }
  {
    IniDoc::Section& s = doc.open("run");
    s.push_back({"seed", U(cfg.run.seed)});
    s.push_back({"out", cfg.run.out});
    s.push_back({"eval-split", cfg.run.eval_split});
    s.push_back({"eval-limit", I(cfg.run.eval_limit)});
  }
  {
    IniDoc::Section& s = doc.open("sweep");
    std::string counts;
    for (std::size_t i = 0; i < cfg.sweep.counts.size(); ++i)
      counts += (i ? "," : "") + std::to_string(cfg.sweep.counts[i]);
    s.push_back({"samples", counts});
    s.push_back({"seeds", I(cfg.sweep.seed_count)});
  }
  return doc;
}

// -------------------------------------------------------- dataset + windows

inline Dataset build_dataset(const DatasetSpec& spec) {
  if (spec.kind == "csv") {
    return load_dataset(spec.path, spec.adjacency, spec.input_len, spec.horizon, spec.split,
                        spec.grid_w, spec.grid_h, spec.stride > 0 ? spec.stride : 1);
  }
  SyntheticSpec s = spec.synth;
  if (spec.grid_w > 0) s.grid_w = spec.grid_w;
  if (spec.grid_h > 0) s.grid_h = spec.grid_h;
  Dataset ds = make_synthetic(s, spec.data_seed, spec.input_len, spec.horizon, spec.split);
  if (spec.stride > 0 && spec.stride != ds.window_stride) {
    ds.window_stride = spec.stride;
    ds.finalize();
  }
  return ds;
}

inline std::vector<std::int64_t> eval_windows_for(const ExperimentConfig& cfg, const Dataset& ds) {
  const std::vector<std::int64_t>& all =
      cfg.run.eval_split == "val" ? ds.val_windows : ds.test_windows;
  require(!all.empty(), "run: the " + cfg.run.eval_split + " split holds no complete windows");
  if (cfg.run.eval_limit > 0 &&
      cfg.run.eval_limit < static_cast<std::int64_t>(all.size()))
    return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.run.eval_limit)};
  return all;
}

// ------------------------------------------------------------ method dispatch

inline ProbabilisticForecast dispatch_method(const ExperimentConfig& cfg, const Dataset& ds,
                                             const std::vector<std::int64_t>& windows) {
  const MethodSpec& m = cfg.method;
  const std::uint64_t seed = cfg.run.seed;
  if (m.tag == "point") return point_forecast(ds, cfg.model, cfg.train, seed, windows);
  if (m.tag == "bootstrap") {
    EnsembleBudget b = m.budget;
    b.base_seed = seed;
    return bootstrap_forecast(ds, cfg.model, cfg.train, b, m.rho, windows);
  }
  if (m.tag == "quantile")
    return quantile_forecast(ds, cfg.model, cfg.train, seed, windows, m.ensemble);
  if (m.tag == "sq") return sq_forecast(ds, cfg.model, cfg.train, seed, m.rho, windows);
  if (m.tag == "mis")
    return mis_forecast(ds, cfg.model, cfg.train, seed, m.rho, windows, m.ensemble);
  if (m.tag == "mc-dropout") {
    TrainedModel tm = train_point(ds, cfg.model, cfg.train, seed);
    return mc_dropout_forecast(tm.model, ds, m.dropout_rate, m.passes, m.rho,
                               derive_seed(seed, 2), windows);
  }
  if (m.tag == "sg-mcmc") {
    SamplerConfig sc = m.sampler;
    sc.seed = seed;
    return sgnht_sample(ds, cfg.model, sc, m.rho, windows);
  }
  throw ValidationError("method: unknown tag '" + m.tag + "'");
}

inline std::optional<std::int64_t> method_sample_count(const MethodSpec& m) {
  if (m.tag == "bootstrap") return m.budget.replicates;
  if (m.tag == "mc-dropout") return m.passes;
  if (m.tag == "sg-mcmc") return m.sampler.chains * m.sampler.draws_per_chain;
  return std::nullopt;
}

// ------------------------------------------------------------ results record

namespace detail {

inline void require_metric(double v, const char* what) {
  require(std::isfinite(v), std::string("results: non-finite ") + what);
}

inline Json horizon_json(const HorizonMetrics& h) {
  Json j;
  j["step"] = h.step;
  require_metric(h.mae, "mae");
  require_metric(h.rmse, "rmse");
  j["mae"] = h.mae;
  j["rmse"] = h.rmse;
  if (h.has_interval) {
    require_metric(h.mis, "mis");
    require_metric(h.width, "interval width");
    require_metric(h.coverage, "coverage");
    require_metric(h.crossing_rate, "crossing rate");
    require(h.coverage >= 0.0 && h.coverage <= 1.0, "results: coverage outside [0,1]");
    j["mis"] = h.mis;
    j["interval_width"] = h.width;
    j["coverage"] = h.coverage;
    j["crossing_rate"] = h.crossing_rate;
  } else {
    j["mis"] = nullptr;
    j["interval_width"] = nullptr;
    j["coverage"] = nullptr;
    j["crossing_rate"] = nullptr;
  }
  return j;
}

}  // namespace detail

struct ExperimentResult {
  ExperimentConfig config;
  ProbabilisticForecast forecast;
  std::vector<HorizonMetrics> per_horizon;
  MetricSummary overall;
  double wall_clock_seconds = 0.0;
  Json record;
};

inline Json build_results_record(const ExperimentConfig& cfg, const ProbabilisticForecast& pf,
                                 const std::vector<HorizonMetrics>& per, const MetricSummary& all,
                                 double wall_clock_seconds) {
  Json rec;
  rec["schema"] = "stuq-results-v1";
  rec["method"] = pf.method;
  rec["seed"] = cfg.run.seed;
  rec["rho"] = pf.rho;
  if (auto s = method_sample_count(cfg.method); s.has_value())
    rec["sample_count"] = *s;
  else
    rec["sample_count"] = nullptr;
  rec["has_interval"] = pf.has_interval;
  rec["crossing"] = pf.crossing;
  rec["eval_split"] = cfg.run.eval_split;
  rec["eval_windows"] = static_cast<std::int64_t>(pf.windows.size());
  rec["horizon"] = static_cast<std::int64_t>(per.size());
  rec["wall_clock_seconds"] = wall_clock_seconds;
  rec["config"] = ini_to_json(config_to_ini(cfg));
  Json steps = Json::array();
  for (const HorizonMetrics& h : per) steps.push_back(detail::horizon_json(h));
  rec["per_horizon"] = steps;
  HorizonMetrics pooled;
  pooled.step = 0;  // 0 marks the pooled-over-steps aggregate
  pooled.mae = all.mae;
  pooled.rmse = all.rmse;
  pooled.has_interval = pf.has_interval;
  pooled.mis = all.mis;
  pooled.width = all.interval_width;
  pooled.coverage = all.coverage;
  pooled.crossing_rate = all.crossing_rate;
  Json overall = detail::horizon_json(pooled);
  overall.erase("step");
  rec["overall"] = overall;
  return rec;
}

// --------------------------------------------------------- forecast artifact

inline void write_forecast_artifact(const std::string& stem, const ProbabilisticForecast& pf) {
  std::vector<double> flat = pf.mean.data;
  Json meta;
  meta["schema"] = "stuq-forecast-v1";
  meta["method"] = pf.method;
  meta["rho"] = pf.rho;
  meta["has_interval"] = pf.has_interval;
  meta["dtype"] = "float64";
  meta["order"] = "row-major";
  meta["shape"] = pf.mean.shape.dims;
  meta["windows"] = pf.windows;
  Json arrays;
  arrays["mean"] = 0;
  if (pf.has_interval) {
    arrays["lower"] = flat.size();
    flat.insert(flat.end(), pf.lower.data.begin(), pf.lower.data.end());
    arrays["upper"] = flat.size();
    flat.insert(flat.end(), pf.upper.data.begin(), pf.upper.data.end());
  }
  meta["arrays"] = arrays;
  write_doubles_atomic(stem + ".bin", flat);
  write_text_atomic(stem + ".json", meta.dump(2) + "\n");
}

inline ProbabilisticForecast read_forecast_artifact(const std::string& stem) {
  Json meta;
  try {
    meta = Json::parse(read_text_file(stem + ".json"));
  } catch (const ValidationError&) {
    throw ValidationError("plot: missing raw-forecast artifact '" + stem + ".json'");
  } catch (const std::exception& e) {
    throw ValidationError("plot: bad forecast sidecar '" + stem + ".json': " + e.what());
  }
  require(meta.value("schema", "") == "stuq-forecast-v1",
          "plot: '" + stem + ".json' is not a forecast sidecar");
  ProbabilisticForecast pf;
  pf.method = meta.at("method").get<std::string>();
  pf.rho = meta.at("rho").get<double>();
  pf.has_interval = meta.at("has_interval").get<bool>();
  pf.windows = meta.at("windows").get<std::vector<std::int64_t>>();
  const std::vector<std::int64_t> dims = meta.at("shape").get<std::vector<std::int64_t>>();
  require(dims.size() == 4, "plot: forecast shape must have rank 4");
  Shape shape{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t block = static_cast<std::size_t>(shape.numel());
  const std::size_t total = pf.has_interval ? 3 * block : block;
  std::vector<double> flat = read_doubles(stem + ".bin", total);
  pf.mean = Tensor(shape);
  std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(block), pf.mean.data.begin());
  if (pf.has_interval) {
    pf.lower = Tensor(shape);
    pf.upper = Tensor(shape);
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(block),
              flat.begin() + static_cast<std::ptrdiff_t>(2 * block), pf.lower.data.begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(2 * block), flat.end(),
              pf.upper.data.begin());
  }
  return pf;
}

// ------------------------------------------------------------- checkpoints

inline void save_checkpoint(const std::string& stem, const Forecaster& f, const Json& config_echo) {
  Json meta;
  meta["schema"] = "stuq-checkpoint-v1";
  meta["config"] = config_echo;
  Json params = Json::array();
  std::vector<double> flat;
  for (const NamedParam& p : f.params.items()) {
    Json e;
    e["name"] = p.name;
    e["shape"] = p.tensor.shape.dims;
    e["offset"] = flat.size();
    params.push_back(e);
    flat.insert(flat.end(), p.tensor.data.begin(), p.tensor.data.end());
  }
  meta["params"] = params;
  write_doubles_atomic(stem + ".bin", flat);
  write_text_atomic(stem + ".json", meta.dump(2) + "\n");
}

inline void load_checkpoint(const std::string& stem, Forecaster& f) {
  Json meta;
  try {
    meta = Json::parse(read_text_file(stem + ".json"));
  } catch (const std::exception& e) {
    throw ValidationError("checkpoint: cannot parse '" + stem + ".json': " + e.what());
  }
  require(meta.value("schema", "") == "stuq-checkpoint-v1",
          "checkpoint: '" + stem + ".json' is not a checkpoint");
  const Json& params = meta.at("params");
  require(params.size() == f.params.items().size(),
          "checkpoint: holds " + std::to_string(params.size()) + " arrays, model has " +
              std::to_string(f.params.items().size()));
  std::size_t total = 0;
  for (const Json& e : params) {
    const std::vector<std::int64_t> dims = e.at("shape").get<std::vector<std::int64_t>>();
    std::size_t n = 1;
    for (std::int64_t d : dims) n *= static_cast<std::size_t>(d);
    total += n;
  }
  const std::vector<double> flat = read_doubles(stem + ".bin", total);
  for (const Json& e : params) {
    const std::string name = e.at("name").get<std::string>();
    NamedParam* p = f.params.find(name);
    require(p != nullptr, "checkpoint: model has no parameter '" + name + "'");
    const std::vector<std::int64_t> dims = e.at("shape").get<std::vector<std::int64_t>>();
    require(dims == p->tensor.shape.dims, "checkpoint: shape mismatch for '" + name + "'");
    const std::size_t off = e.at("offset").get<std::size_t>();
    require(off + p->tensor.data.size() <= flat.size(),
            "checkpoint: array '" + name + "' overruns the value file");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + p->tensor.data.size()),
              p->tensor.data.begin());
  }
}

// ------------------------------------------------------------ run experiment

// Computes everything before touching disk; the forecast artifact lands
// first and results.json last, so a results.json always marks a whole run.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_artifacts = true) {
  cfg.validate();
  Dataset ds = build_dataset(cfg.dataset);
  const std::vector<std::int64_t> windows = eval_windows_for(cfg, ds);

  const auto t0 = std::chrono::steady_clock::now();
  ProbabilisticForecast pf = dispatch_method(cfg, ds, windows);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ExperimentResult res;
  res.config = cfg;
  res.per_horizon = evaluate_forecast(pf, ds);
  res.overall = evaluate_overall(pf, ds);
  res.wall_clock_seconds = wall;
  res.record = build_results_record(cfg, pf, res.per_horizon, res.overall, wall);
  res.forecast = std::move(pf);

  if (write_artifacts) {
    const std::filesystem::path out(cfg.run.out);
    write_forecast_artifact((out / "forecast").string(), res.forecast);
    write_text_atomic((out / "results.json").string(), res.record.dump(2) + "\n");
  }
  return res;
}

// ------------------------------------------------------------------- sweep

struct SweepRow {
  std::int64_t samples = 0;
  std::uint64_t seed = 0;
  double mis = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;                            // per (seed, count)
  std::vector<std::pair<std::int64_t, double>> means;    // per count, across seeds
};

// One full-budget run per seed; smaller counts reuse its leading samples,
// which the per-replicate/per-chain seed derivation makes byte-identical to
// from-scratch runs at that count.
inline SweepTable sample_complexity_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string& tag = cfg.method.tag;
  require(tag == "bootstrap" || tag == "mc-dropout" || tag == "sg-mcmc",
          "sweep: sample-complexity sweeps need a sampling method "
          "(bootstrap, mc-dropout, or sg-mcmc), got '" + tag + "'");
  if (tag == "sg-mcmc")
    require(cfg.method.sampler.draws_per_chain == 1,
            "sweep: sg-mcmc sweeps vary the chain count; set draws-per-chain = 1");
  const std::vector<std::int64_t>& counts = cfg.sweep.counts;
  const std::int64_t s_max = counts.back();

  Dataset ds = build_dataset(cfg.dataset);
  const std::vector<std::int64_t> windows = eval_windows_for(cfg, ds);

  SweepTable tab;
  std::vector<double> sum(counts.size(), 0.0);
  for (std::int64_t i = 0; i < cfg.sweep.seed_count; ++i) {
    ExperimentConfig big = cfg;
    big.run.seed = cfg.run.seed + static_cast<std::uint64_t>(i);
    if (tag == "bootstrap")
      big.method.budget.replicates = s_max;
    else if (tag == "mc-dropout")
      big.method.passes = s_max;
    else
      big.method.sampler.chains = s_max;
    ProbabilisticForecast full = dispatch_method(big, ds, windows);
    require(static_cast<std::int64_t>(full.raw_samples.size()) == s_max,
            "sweep: method returned " + std::to_string(full.raw_samples.size()) +
                " samples, expected " + std::to_string(s_max));
    for (std::size_t ci = 0; ci < counts.size(); ++ci) {
      const std::int64_t s = counts[ci];
      std::vector<Tensor> prefix(full.raw_samples.begin(),
                                 full.raw_samples.begin() + static_cast<std::ptrdiff_t>(s));
      ProbabilisticForecast sub =
          assemble_from_samples(full.method, full.rho, windows, std::move(prefix));
      const double mis = evaluate_overall(sub, ds).mis;
      tab.rows.push_back({s, big.run.seed, mis});
      sum[ci] += mis;
    }
  }
  for (std::size_t ci = 0; ci < counts.size(); ++ci)
    tab.means.push_back({counts[ci], sum[ci] / static_cast<double>(cfg.sweep.seed_count)});
  return tab;
}

inline std::string sweep_csv(const SweepTable& t) {
  std::ostringstream out;
  out << "samples,seed,mis\n";
  for (const SweepRow& r : t.rows)
    out << r.samples << ',' << r.seed << ',' << fmt_g17(r.mis) << '\n';
  for (const auto& [s, m] : t.means) out << s << ",mean," << fmt_g17(m) << '\n';
  return out.str();
}

inline SweepTable parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "sweep: empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "samples,seed,mis", "sweep: bad header '" + line + "'");
  SweepTable t;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_copy(line).empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    require(std::getline(row, a, ',') && std::getline(row, b, ',') && std::getline(row, c),
            "sweep line " + std::to_string(line_no) + ": expected samples,seed,mis");
    try {
      if (b == "mean") {
        t.means.push_back({std::stoll(a), std::stod(c)});
      } else {
        t.rows.push_back({std::stoll(a), std::stoull(b), std::stod(c)});
      }
    } catch (...) {
      throw ValidationError("sweep line " + std::to_string(line_no) + ": bad number");
    }
  }
  return t;
}

// --------------------------------------------------------------- plot data

// Forecast-band rows for the first evaluated window of each result directory:
// one row per horizon step per location per method, feature 0. Point methods
// leave the bound columns empty.
inline std::string forecast_band_csv(const std::vector<std::string>& result_dirs) {
  require(!result_dirs.empty(), "plot: no result directories given");
  std::ostringstream out;
  out << "time,location_id,truth,mean,lower,upper,method\n";
  std::optional<std::int64_t> expect_window;
  for (const std::string& dir : result_dirs) {
    const std::filesystem::path base(dir);
    Json rec;
    try {
      rec = Json::parse(read_text_file((base / "results.json").string()));
    } catch (const std::exception& e) {
      throw ValidationError("plot: cannot read results in '" + dir + "': " + e.what());
    }
    ExperimentConfig cfg = config_from_ini(json_to_ini(rec.at("config")));
    Dataset ds = build_dataset(cfg.dataset);
    ProbabilisticForecast pf = read_forecast_artifact((base / "forecast").string());
    require(!pf.windows.empty(), "plot: forecast in '" + dir + "' holds no windows");
    const std::int64_t w0 = pf.windows.front();
    if (expect_window.has_value())
      require(*expect_window == w0,
              "plot: result directories start at different windows; band rows would not align");
    expect_window = w0;

    const std::int64_t H = pf.mean.shape[1], P = pf.mean.shape[2];
    Tensor truth = ds.window_target_raw(w0);
    for (std::int64_t j = 0; j < H; ++j)
      for (std::int64_t p = 0; p < P; ++p) {
        out << fmt_g17(ds.timestamps[static_cast<std::size_t>(w0 + ds.input_len + j)]) << ','
            << ds.node_ids[static_cast<std::size_t>(p)] << ',' << fmt_g17(truth.at3(j, p, 0))
            << ',' << fmt_g17(pf.mean.at4(0, j, p, 0)) << ',';
        if (pf.has_interval)
          out << fmt_g17(pf.lower.at4(0, j, p, 0)) << ',' << fmt_g17(pf.upper.at4(0, j, p, 0));
        else
          out << ',';
        out << ',' << pf.method << '\n';
      }
  }
  return out.str();
}

// Coverage/width per horizon step for every interval-bearing result file.
inline std::string coverage_vs_width_csv(const std::vector<std::string>& results_paths) {
  require(!results_paths.empty(), "plot: no results files given");
  std::ostringstream out;
  out << "method,horizon,coverage,width\n";
  for (const std::string& path : results_paths) {
    Json rec;
    try {
      rec = Json::parse(read_text_file(path));
    } catch (const std::exception& e) {
      throw ValidationError("plot: cannot read '" + path + "': " + e.what());
    }
    require(rec.value("schema", "") == "stuq-results-v1",
            "plot: '" + path + "' is not a results record");
    const std::string method = rec.at("method").get<std::string>();
    for (const Json& h : rec.at("per_horizon")) {
      if (h.at("coverage").is_null()) continue;
      out << method << ',' << h.at("step").get<std::int64_t>() << ','
          << fmt_g17(h.at("coverage").get<double>()) << ','
          << fmt_g17(h.at("interval_width").get<double>()) << '\n';
    }
  }
  return out.str();
}

// ------------------------------------------------------------ oracle suites

struct OracleOutcome {
  std::string name;
  bool pass = false;
  double runtime_seconds = 0.0;
  std::string detail;
};

namespace oracle {

// Closed-form empirical interval vs exhaustive minimizer: identical (l, u)
// on random batches spanning sizes, coverage levels, and value families.
inline OracleOutcome prop2_equivalence(std::int64_t batches = 200, std::uint64_t seed = 2024) {
  const auto t0 = std::chrono::steady_clock::now();
  OracleOutcome out;
  out.name = "prop2-closed-form";
  const std::int64_t sizes[] = {5, 25, 100};
  const double rhos[] = {0.05, 0.2, 0.5};
  Rng rng(seed);
  std::int64_t agree = 0;
  for (std::int64_t b = 0; b < batches; ++b) {
    const std::int64_t n = sizes[b % 3];
    const double rho = rhos[(b / 3) % 3];
    const int family = static_cast<int>((b / 9) % 3);
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (double& v : vals) {
      if (family == 0)
        v = rng.normal(0.0, 2.0);
      else if (family == 1)
        v = rng.uniform(-3.0, 5.0);
      else
        v = std::exp(rng.normal(0.0, 1.0));  // heavy right tail
    }
    IntervalSpec closed = empirical_interval(vals, rho);
    IntervalSpec brute = brute_force_mis_minimizer(vals, rho);
    if (closed.lower == brute.lower && closed.upper == brute.upper) {
      ++agree;
    } else if (out.detail.empty()) {
      out.detail = "batch " + std::to_string(b) + " disagrees: closed (" +
                   fmt_g17(closed.lower) + ", " + fmt_g17(closed.upper) + ") vs brute (" +
                   fmt_g17(brute.lower) + ", " + fmt_g17(brute.upper) + ")";
    }
  }
  out.pass = agree == batches;
  if (out.pass)
    out.detail = std::to_string(agree) + "/" + std::to_string(batches) + " batches identical";
  out.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

namespace detail {

inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                          double fm, double fb, double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * eps)
    return left + right + (left + right - whole) / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double eps) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, eps, 40);
}

inline double q_hinge(const SplineShape& s, double alpha) {
  double q = s.intercept;
  for (std::size_t j = 0; j < s.knots.size(); ++j)
    q += s.slopes[j] * std::max(0.0, alpha - s.knots[j]);
  return q;
}

// CRPS as the integral of the quantile score, split at every kink (knots and
// the level crossing, located by bisection) so each piece is smooth.
inline double crps_by_quadrature(const SplineShape& s, double y) {
  const auto f = [&](double a) {
    const double e = y - q_hinge(s, a);
    const double pin = e >= 0.0 ? a * e : (a - 1.0) * e;
    return 2.0 * pin;
  };
  std::vector<double> pts{0.0, 1.0};
  for (double k : s.knots)
    if (k > 0.0 && k < 1.0) pts.push_back(k);
  if (q_hinge(s, 0.0) < y && q_hinge(s, 1.0) > y) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (q_hinge(s, mid) < y ? lo : hi) = mid;
    }
    pts.push_back(0.5 * (lo + hi));
  }
  std::sort(pts.begin(), pts.end());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (pts[i + 1] > pts[i]) acc += integrate(f, pts[i], pts[i + 1], 1e-12);
  return acc;
}

}  // namespace detail

// Closed-form CRPS vs adaptive quadrature, plus the exact uniform value.
inline OracleOutcome crps_quadrature(std::int64_t pairs = 100, std::uint64_t seed = 67) {
  const auto t0 = std::chrono::steady_clock::now();
  OracleOutcome out;
  out.name = "crps-closed-form";
  Rng rng(seed);
  double worst = 0.0;
  for (std::int64_t rep = 0; rep < pairs; ++rep) {
    SplineQuantileParams p;
    p.intercept = rng.normal(0.0, 1.0);
    for (auto& v : p.raw_slopes) v = rng.normal(0.0, 1.5);
    for (auto& v : p.raw_knots) v = rng.normal(0.0, 1.5);
    const SplineShape s = p.shape();
    const double y = rng.normal(0.0, 2.0);
    const double gap = std::fabs(crps_pwl(s, y) - detail::crps_by_quadrature(s, y));
    worst = std::max(worst, gap);
  }
  SplineShape uniform;
  uniform.intercept = 0.0;
  uniform.knots = {0.0};
  uniform.slopes = {1.0};
  const double ugap = std::fabs(crps_pwl(uniform, 0.5) - 1.0 / 12.0);
  out.pass = worst < 1e-6 && ugap < 1e-9;
  out.detail = "max quadrature gap " + fmt_g17(worst) + " over " + std::to_string(pairs) +
               " pairs; uniform gap " + fmt_g17(ugap);
  out.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

namespace detail {

// Scalar losses routing through every differentiable tape primitive; each
// returns (loss, leaves) on the given tape for finite_difference_check.
inline std::pair<Value, std::vector<Value>> elementwise_zoo(Tape& t, Rng& rng) {
  Tensor ta(Shape{2, 3}), tb(Shape{2, 3}), tr(Shape{3});
  for (double& v : ta.data) v = rng.uniform(0.4, 1.6);
  for (double& v : tb.data) v = rng.uniform(-1.6, -0.4);  // keeps |a-b| > 0.8
  for (double& v : tr.data) v = rng.normal(0.0, 0.5);
  Value a = t.param(ta), b = t.param(tb), r = t.param(tr);
  Value s = t.param(Tensor::scalar(0.7));

  Value c = t.add(a, b);
  Value d = t.sub(c, t.mul(a, b));
  Value e = t.div(d, t.add_const(t.abs_(b), 2.0));
  Value f = t.maximum(e, t.scale(a, 0.3));
  Value g = t.mul(f, t.greater_mask(a, b));
  Value mix = t.add(t.sigmoid(g), t.tanh_(t.scale(g, 0.7)));
  mix = t.add(mix, t.relu(t.add_const(t.mul(a, a), 0.05)));
  mix = t.add(mix, t.softplus(t.neg(f)));
  mix = t.add(mix, t.exp_(t.scale(a, 0.1)));
  mix = t.add(mix, t.log_(t.add_const(t.mul(b, b), 1.5)));
  mix = t.add(mix, t.one_minus(t.scale_by(a, s)));
  mix = t.add_rowvec(mix, r);
  Value flat = t.reshape(mix, Shape{6});
  Value stitched = t.concat_last(std::vector<Value>{t.slice_last(flat, 0, 2),
                                                    t.slice_last(flat, 2, 4)});
  Value loss = t.add(t.mean_all(stitched), t.sum_all(t.mul(mix, mix)));
  loss = t.add(loss, t.pick(flat, 4));
  return {loss, {a, b, r, s}};
}

inline std::pair<Value, std::vector<Value>> matmul_zoo(Tape& t, Rng& rng) {
  Tensor ta(Shape{2, 3}), tb(Shape{3, 4});
  for (double& v : ta.data) v = rng.normal(0.0, 0.8);
  for (double& v : tb.data) v = rng.normal(0.0, 0.8);
  Value a = t.param(ta), b = t.param(tb);
  Value loss = t.sum_all(t.sigmoid(t.matmul(a, b)));
  return {loss, {a, b}};
}

inline std::pair<Value, std::vector<Value>> conv_zoo(Tape& t, Rng& rng, Pad pad) {
  Tensor tx(Shape{3, 4, 2}), tw(Shape{3, 3, 2, 2});
  for (double& v : tx.data) v = rng.normal(0.0, 0.8);
  for (double& v : tw.data) v = rng.normal(0.0, 0.5);
  Value x = t.param(tx), w = t.param(tw);
  Value loss = t.sum_all(t.tanh_(t.conv2d(x, w, pad)));
  return {loss, {x, w}};
}

inline std::pair<Value, std::vector<Value>> graph_zoo(Tape& t, Rng& rng) {
  Tensor adj(Shape{3, 3});
  adj.data = {0, 1, 0.5, 1, 0, 1, 0.5, 1, 0};
  SpatialGraph g(adj);
  std::vector<GraphSupport> sups = make_supports(g, "dual-random-walk");
  Tensor tx(Shape{3, 2});
  for (double& v : tx.data) v = rng.normal(0.0, 0.8);
  Value x = t.param(tx);
  std::vector<Value> svals;
  for (const GraphSupport& s : sups) svals.push_back(t.input(s.matrix));
  const int K = 2;
  std::vector<Value> leaves{x}, weights;
  for (std::size_t i = 0; i < sups.size() * K; ++i) {
    Tensor tw(Shape{2, 3});
    for (double& v : tw.data) v = rng.normal(0.0, 0.5);
    weights.push_back(t.param(tw));
    leaves.push_back(weights.back());
  }
  Tensor tbias(Shape{3});
  for (double& v : tbias.data) v = rng.normal(0.0, 0.2);
  Value bias = t.param(tbias);
  leaves.push_back(bias);
  Value loss = t.sum_all(t.tanh_(graph_conv(t, x, svals, K, weights, bias)));
  return {loss, leaves};
}

}  // namespace detail

// Finite-difference sweep over every tape primitive and all four training
// losses on a 3-node, horizon-2, hidden-4 forecaster.
inline OracleOutcome gradient_checks(std::uint64_t seed = 11) {
  const auto t0 = std::chrono::steady_clock::now();
  OracleOutcome out;
  out.name = "gradient-fd";
  double worst = 0.0;
  std::string worst_site = "none";
  const auto track = [&](const char* site, double rel) {
    if (rel > worst) {
      worst = rel;
      worst_site = site;
    }
  };

  Rng rng(seed);
  {
    Tape t;
    auto [loss, leaves] = detail::elementwise_zoo(t, rng);
    track("elementwise", finite_difference_check(t, loss, leaves, 1e-5));
  }
  {
    Tape t;
    auto [loss, leaves] = detail::matmul_zoo(t, rng);
    track("matmul", finite_difference_check(t, loss, leaves, 1e-5));
  }
  {
    Tape t;
    auto [loss, leaves] = detail::conv_zoo(t, rng, Pad::Zero);
    track("conv2d-zero", finite_difference_check(t, loss, leaves, 1e-5));
  }
  {
    Tape t;
    auto [loss, leaves] = detail::conv_zoo(t, rng, Pad::Periodic);
    track("conv2d-periodic", finite_difference_check(t, loss, leaves, 1e-5));
  }
  {
    Tape t;
    auto [loss, leaves] = detail::graph_zoo(t, rng);
    track("graph-conv", finite_difference_check(t, loss, leaves, 1e-5));
  }

  // the four training losses on a small forecaster
  Tensor adj(Shape{3, 3});
  adj.data = {0, 1, 0.5, 1, 0, 1, 0.5, 1, 0};
  SpatialGraph g(adj);
  const char* heads[] = {"point", "quantile-3", "interval-3", "spline-11"};
  for (const char* head : heads) {
    ModelConfig cfg;
    cfg.cell_kind = "graph-conv";
    cfg.hidden_units = 4;
    cfg.diffusion_steps = 2;
    cfg.support_set = "dual-random-walk";
    cfg.horizon = 2;
    cfg.head_kind = head;
    Forecaster f(cfg, 3, make_supports(g, cfg.support_set), derive_seed(seed, 1));
    Tensor hist(Shape{3, 3, 1}), target(Shape{2, 3, 1});
    for (double& v : hist.data) v = rng.normal(0.0, 0.7);
    for (double& v : target.data) v = rng.normal(0.0, 0.7);
    Tape t;
    BoundParams bp = f.bind(t, true);
    ForecastOutput fo = f.run(t, bp, hist, &target);
    LossOptions opt;
    opt.rho = 0.2;
    Value loss = forecast_training_loss(t, f.cfg, fo, target, nullptr, opt);
    track(head, finite_difference_check(t, loss, bp.leaves, 1e-5));
  }

  out.pass = worst < 1e-4;
  out.detail = "max relative error " + fmt_g17(worst) + " at " + worst_site;
  out.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace oracle

inline std::vector<OracleOutcome> run_oracle_suites() {
  return {oracle::prop2_equivalence(), oracle::crps_quadrature(), oracle::gradient_checks()};
}

}  // namespace stuq
