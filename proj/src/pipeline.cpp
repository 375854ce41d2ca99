#include "leafkit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "leafkit/dynamics.hpp"
#include "leafkit/foliation.hpp"
#include "leafkit/qmat.hpp"
#include "leafkit/typicality.hpp"

namespace leafkit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// --- constants ---------------------------------------------------------------

double default_g() { return (std::sqrt(5.0) + 5.0) / 8.0; }
double default_g_alt() { return std::sqrt(10.0) / 8.0; }
double default_h() { return std::sqrt(5.0) / 2.0; }
double default_d() { return M_PI / 20.0; }

ChainSpec chaotic_chain(int length) {
  return ChainSpec{length, default_g(), default_h(), default_d(), Boundary::Periodic};
}

// --- hashing ------------------------------------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64_str(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- config parsing --------------------------------------------------------------

namespace {

int line_of_key(const std::string& text, const std::string& key) {
  if (text.empty()) return 0;
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + pos, '\n'));
}

[[noreturn]] void config_fail(const std::string& source, const std::string& text,
                              const std::string& key, const std::string& msg) {
  std::ostringstream out;
  out << source;
  const int line = line_of_key(text, key);
  if (line > 0) out << ":" << line;
  out << ": " << msg;
  throw InvalidParameter(out.str());
}

struct Parser {
  const std::string& text;
  const std::string& source;

  void check_keys(const json& obj, const std::string& section,
                  std::initializer_list<const char*> allowed) const {
    if (!obj.is_object())
      config_fail(source, text, section, "section '" + section + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
            return it.key() == a;
          }) == allowed.end())
        config_fail(source, text, it.key(),
                    "unknown key \"" + it.key() + "\" in section '" + section + "'");
    }
  }

  double num(const json& v, const std::string& key) const {
    if (!v.is_number())
      config_fail(source, text, key, "key \"" + key + "\" must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x))
      config_fail(source, text, key, "key \"" + key + "\" must be finite");
    return x;
  }

  long integer(const json& v, const std::string& key) const {
    if (!v.is_number_integer())
      config_fail(source, text, key, "key \"" + key + "\" must be an integer");
    return v.get<long>();
  }

  bool boolean(const json& v, const std::string& key) const {
    if (!v.is_boolean())
      config_fail(source, text, key, "key \"" + key + "\" must be a boolean");
    return v.get<bool>();
  }

  std::string str(const json& v, const std::string& key) const {
    if (!v.is_string())
      config_fail(source, text, key, "key \"" + key + "\" must be a string");
    return v.get<std::string>();
  }

  ChainSpec chain(const json& obj, const std::string& section, bool model_defaults,
                  bool require_length) const {
    check_keys(obj, section, {"L", "g", "h", "D", "boundary"});
    ChainSpec spec;
    if (obj.contains("L")) {
      spec.length = static_cast<int>(integer(obj.at("L"), "L"));
    } else if (require_length) {
      config_fail(source, text, section, "section '" + section + "' requires \"L\"");
    }
    spec.g = model_defaults ? default_g() : 0.0;
    spec.h = model_defaults ? default_h() : 0.0;
    spec.d = model_defaults ? default_d() : 0.0;
    if (obj.contains("g")) spec.g = num(obj.at("g"), "g");
    if (obj.contains("h")) spec.h = num(obj.at("h"), "h");
    if (obj.contains("D")) spec.d = num(obj.at("D"), "D");
    if (obj.contains("boundary")) {
      const std::string b = str(obj.at("boundary"), "boundary");
      if (b == "periodic") spec.boundary = Boundary::Periodic;
      else if (b == "open") spec.boundary = Boundary::Open;
      else config_fail(source, text, "boundary", "boundary must be \"periodic\" or \"open\"");
    }
    return spec;
  }
};

std::string boundary_name(Boundary b) {
  return b == Boundary::Periodic ? "periodic" : "open";
}

json chain_json(const ChainSpec& spec) {
  return {{"L", spec.length}, {"g", spec.g}, {"h", spec.h}, {"D", spec.d},
          {"boundary", boundary_name(spec.boundary)}};
}

}  // namespace

ExperimentConfig parse_config_json(const json& j, const std::string& text,
                                   const std::string& source) {
  Parser p{text, source};
  p.check_keys(j, "(root)",
               {"model", "state", "foliation", "diagnostics", "evolve", "swap_roles",
                "output", "sweep", "figure", "seed"});
  if (!j.contains("model"))
    config_fail(source, text, "model", "config requires a \"model\" section");
  if (!j.contains("state"))
    config_fail(source, text, "state", "config requires a \"state\" section");

  ExperimentConfig cfg;
  cfg.model = p.chain(j.at("model"), "model", /*model_defaults=*/true, /*require_length=*/true);
  if (cfg.model.length < 2 || cfg.model.length > 14)
    config_fail(source, text, "L", "model.L must be in 2..14");

  const json& st = j.at("state");
  p.check_keys(st, "state", {"uniform", "h0", "beta", "file"});
  const int ways = st.contains("uniform") + st.contains("h0") + st.contains("file");
  if (ways != 1)
    config_fail(source, text, "state",
                "state must specify exactly one of \"uniform\", \"h0\", \"file\"");
  if (st.contains("uniform")) {
    if (!p.boolean(st.at("uniform"), "uniform"))
      config_fail(source, text, "uniform", "state.uniform must be true when present");
    cfg.state.kind = StateSection::Kind::Uniform;
  } else if (st.contains("h0")) {
    cfg.state.kind = StateSection::Kind::Thermal;
    cfg.state.h0 = p.chain(st.at("h0"), "h0", /*model_defaults=*/false, /*require_length=*/false);
    if (!st.contains("beta"))
      config_fail(source, text, "h0", "a thermal state requires \"beta\"");
    cfg.state.beta = p.num(st.at("beta"), "beta");
  } else {
    cfg.state.kind = StateSection::Kind::File;
    cfg.state.file = p.str(st.at("file"), "file");
    if (!fs::exists(cfg.state.file))
      config_fail(source, text, "file", "state file not found: " + cfg.state.file);
  }

  if (j.contains("foliation")) {
    const json& f = j.at("foliation");
    p.check_keys(f, "foliation", {"gap_tol", "rank_floor", "allow_degenerate"});
    if (f.contains("gap_tol")) cfg.foliation.gap_tol = p.num(f.at("gap_tol"), "gap_tol");
    if (f.contains("rank_floor"))
      cfg.foliation.rank_floor = p.num(f.at("rank_floor"), "rank_floor");
    if (f.contains("allow_degenerate"))
      cfg.foliation.allow_degenerate = p.boolean(f.at("allow_degenerate"), "allow_degenerate");
  }

  if (j.contains("diagnostics")) {
    const json& d = j.at("diagnostics");
    p.check_keys(d, "diagnostics", {"shell_size", "delta_points", "subset", "site"});
    if (d.contains("shell_size")) {
      const json& s = d.at("shell_size");
      if (s.is_string()) {
        if (s.get<std::string>() != "sqrt")
          config_fail(source, text, "shell_size",
                      "shell_size must be \"sqrt\" or a positive integer");
        cfg.diagnostics.shell_size = 0;
      } else {
        cfg.diagnostics.shell_size = static_cast<int>(p.integer(s, "shell_size"));
        if (cfg.diagnostics.shell_size < 1)
          config_fail(source, text, "shell_size", "shell_size must be >= 1");
      }
    }
    if (d.contains("delta_points")) {
      cfg.diagnostics.delta_points = static_cast<int>(p.integer(d.at("delta_points"), "delta_points"));
      if (cfg.diagnostics.delta_points < 2)
        config_fail(source, text, "delta_points", "delta_points must be >= 2");
    }
    if (d.contains("subset")) {
      const std::string s = p.str(d.at("subset"), "subset");
      if (s == "main") cfg.diagnostics.main_text_subset = true;
      else if (s == "full") cfg.diagnostics.main_text_subset = false;
      else config_fail(source, text, "subset", "subset must be \"full\" or \"main\"");
    }
    if (d.contains("site")) {
      cfg.diagnostics.site = static_cast<int>(p.integer(d.at("site"), "site"));
      if (cfg.diagnostics.site < 1)
        config_fail(source, text, "site", "site must be >= 1");
    }
  }

  if (j.contains("evolve")) {
    const json& e = j.at("evolve");
    p.check_keys(e, "evolve", {"t_max", "dt"});
    if (e.contains("t_max")) cfg.evolve.t_max = p.num(e.at("t_max"), "t_max");
    if (e.contains("dt")) cfg.evolve.dt = p.num(e.at("dt"), "dt");
    if (cfg.evolve.t_max < 0.0)
      config_fail(source, text, "t_max", "t_max must be >= 0");
    if (cfg.evolve.t_max > 0.0 && cfg.evolve.dt <= 0.0)
      config_fail(source, text, "dt", "dt must be > 0 when t_max > 0");
  }

  if (j.contains("swap_roles")) cfg.swap_roles = p.boolean(j.at("swap_roles"), "swap_roles");
  if (cfg.swap_roles && cfg.state.kind != StateSection::Kind::Thermal)
    config_fail(source, text, "swap_roles", "swap_roles requires a thermal state");

  if (j.contains("output")) {
    const json& o = j.at("output");
    p.check_keys(o, "output", {"dir", "emit"});
    if (o.contains("dir")) cfg.output.dir = p.str(o.at("dir"), "dir");
    if (o.contains("emit")) {
      if (!o.at("emit").is_array())
        config_fail(source, text, "emit", "emit must be an array");
      cfg.output.emit.clear();
      for (const json& e : o.at("emit")) {
        const std::string name = p.str(e, "emit");
        if (name != "leaf" && name != "diagnostics" && name != "evolution" &&
            name != "figures")
          config_fail(source, text, "emit", "unknown emit class \"" + name + "\"");
        cfg.output.emit.push_back(name);
      }
    }
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    p.check_keys(s, "sweep", {"L", "beta"});
    if (s.contains("L")) {
      if (!s.at("L").is_array()) config_fail(source, text, "sweep", "sweep.L must be an array");
      for (const json& v : s.at("L")) {
        const int L = static_cast<int>(p.integer(v, "L"));
        if (L < 2 || L > 14) config_fail(source, text, "sweep", "sweep.L entries must be in 2..14");
        cfg.sweep.lengths.push_back(L);
      }
    }
    if (s.contains("beta")) {
      if (!s.at("beta").is_array())
        config_fail(source, text, "sweep", "sweep.beta must be an array");
      for (const json& v : s.at("beta")) cfg.sweep.betas.push_back(p.num(v, "beta"));
    }
    if (!cfg.sweep.betas.empty() && cfg.state.kind != StateSection::Kind::Thermal)
      config_fail(source, text, "sweep", "sweep.beta requires a thermal state");
  }

  if (j.contains("figure")) {
    const json& f = j.at("figure");
    p.check_keys(f, "figure", {"grid_step", "beta_max", "beta_points", "max_leaf_curves"});
    if (f.contains("grid_step")) {
      cfg.figure.grid_step = p.num(f.at("grid_step"), "grid_step");
      if (cfg.figure.grid_step <= 0.0 || cfg.figure.grid_step > 1.0)
        config_fail(source, text, "grid_step", "grid_step must be in (0, 1]");
    }
    if (f.contains("beta_max")) cfg.figure.beta_max = p.num(f.at("beta_max"), "beta_max");
    if (f.contains("beta_points")) {
      cfg.figure.beta_points = static_cast<int>(p.integer(f.at("beta_points"), "beta_points"));
      if (cfg.figure.beta_points < 2)
        config_fail(source, text, "beta_points", "beta_points must be >= 2");
    }
    if (f.contains("max_leaf_curves")) {
      cfg.figure.max_leaf_curves =
          static_cast<int>(p.integer(f.at("max_leaf_curves"), "max_leaf_curves"));
      if (cfg.figure.max_leaf_curves < 1)
        config_fail(source, text, "max_leaf_curves", "max_leaf_curves must be >= 1");
    }
  }

  if (j.contains("seed")) {
    const long s = p.integer(j.at("seed"), "seed");
    if (s < 0) config_fail(source, text, "seed", "seed must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(s);
  }
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    const int line =
        1 + static_cast<int>(std::count(text.begin(),
                                        text.begin() + std::min<std::size_t>(err.byte, text.size()),
                                        '\n'));
    std::ostringstream msg;
    msg << source << ":" << line << ": malformed JSON: " << err.what();
    throw InvalidParameter(msg.str());
  }
  return parse_config_json(j, text, source);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

json ExperimentConfig::effective() const {
  json j;
  j["model"] = chain_json(model);
  switch (state.kind) {
    case StateSection::Kind::Uniform:
      j["state"] = {{"uniform", true}};
      break;
    case StateSection::Kind::Thermal: {
      ChainSpec h0 = state.h0;
      if (h0.length == 0) h0.length = model.length;
      j["state"] = {{"h0", chain_json(h0)}, {"beta", state.beta}};
      break;
    }
    case StateSection::Kind::File:
      j["state"] = {{"file", state.file}};
      break;
  }
  j["foliation"] = {{"gap_tol", foliation.gap_tol},
                    {"rank_floor", foliation.rank_floor},
                    {"allow_degenerate", foliation.allow_degenerate}};
  j["diagnostics"] = {{"shell_size", diagnostics.shell_size == 0
                                         ? json("sqrt")
                                         : json(diagnostics.shell_size)},
                      {"delta_points", diagnostics.delta_points},
                      {"subset", diagnostics.main_text_subset ? "main" : "full"},
                      {"site", diagnostics.site}};
  j["evolve"] = {{"t_max", evolve.t_max}, {"dt", evolve.dt}};
  j["swap_roles"] = swap_roles;
  j["output"] = {{"dir", output.dir}, {"emit", output.emit}};
  j["sweep"] = {{"L", sweep.lengths}, {"beta", sweep.betas}};
  j["figure"] = {{"grid_step", figure.grid_step},
                 {"beta_max", figure.beta_max},
                 {"beta_points", figure.beta_points},
                 {"max_leaf_curves", figure.max_leaf_curves}};
  j["seed"] = seed;
  return j;
}

// --- run context -------------------------------------------------------------------

RunContext::RunContext(std::string out_dir, std::string cache_dir, int threads,
                       json effective_config)
    : out_dir_(std::move(out_dir)),
      cache_dir_(std::move(cache_dir)),
      threads_(threads),
      config_(std::move(effective_config)) {
  config_hash_ = hex64(fnv1a64_str(config_.dump()));
  fs::create_directories(out_dir_);
}

void RunContext::add_stage(const std::string& name, double seconds) {
  stages_.push_back({name, seconds});
}

void RunContext::emit_file(const std::string& rel_path, const std::string& bytes) {
  const fs::path full = fs::path(out_dir_) / rel_path;
  fs::create_directories(full.parent_path());
  std::ofstream out(full, std::ios::binary);
  if (!out) throw IoError("cannot open " + full.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + full.string());
  files_.push_back({rel_path, bytes.size(), hex64(fnv1a64(bytes.data(), bytes.size()))});
}

void RunContext::write_manifest() {
  std::vector<FileRecord> sorted = files_;
  std::sort(sorted.begin(), sorted.end(),
            [](const FileRecord& a, const FileRecord& b) { return a.path < b.path; });
  json j;
  j["toolkit_version"] = kVersion;
  j["config"] = config_;
  j["config_hash"] = config_hash_;
  j["stages"] = json::array();
  for (const StageTime& s : stages_) j["stages"].push_back({{"name", s.name}, {"seconds", s.seconds}});
  j["files"] = json::array();
  for (const FileRecord& f : sorted)
    j["files"].push_back({{"path", f.path}, {"bytes", f.bytes}, {"fnv1a64", f.fnv1a64}});
  const fs::path full = fs::path(out_dir_) / "run_manifest.json";
  std::ofstream out(full);
  if (!out) throw IoError("cannot open " + full.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + full.string());
}

RunContext make_context(const ExperimentConfig& cfg, const std::string& out_override,
                        int threads_override) {
  std::string out_dir = out_override.empty() ? cfg.output.dir : out_override;
  std::string cache_dir;
  if (const char* env = std::getenv("LEAFKIT_CACHE"); env && *env) cache_dir = env;
  else cache_dir = (fs::path(out_dir) / "cache").string();
  int threads = threads_override;
  if (threads <= 0) {
    if (const char* env = std::getenv("LEAFKIT_THREADS"); env && *env)
      threads = std::max(1, std::atoi(env));
    else
      threads = std::max(1, static_cast<int>(std::min(4u, std::thread::hardware_concurrency())));
  }
  json effective = cfg.effective();
  if (!out_override.empty()) effective["output"]["dir"] = out_override;
  return RunContext(out_dir, cache_dir, threads, std::move(effective));
}

// --- decomposition cache ---------------------------------------------------------------

SpectralDecomposition cached_chain_decomposition(const ChainSpec& spec,
                                                 const std::string& cache_dir) {
  spec.validate();
  const int d = spec.hilbert_dim();
  const std::string key = hex64(fnv1a64_str(spec.content_key()));
  const fs::path vals_path = fs::path(cache_dir) / ("chain_" + key + "_vals.qmat");
  const fs::path vecs_path = fs::path(cache_dir) / ("chain_" + key + "_vecs.qmat");

  if (fs::exists(vals_path) && fs::exists(vecs_path)) {
    try {
      const qmat::Loaded vals = qmat::read_file(vals_path.string());
      const qmat::Loaded vecs = qmat::read_file(vecs_path.string());
      if (vals.kind == qmat::Kind::State && vecs.kind == qmat::Kind::Unitary &&
          vals.matrix.rows() == d && vecs.matrix.rows() == d) {
        SpectralDecomposition s;
        s.eigenvalues = vals.matrix.col(0).real();
        s.eigenvectors = vecs.matrix;
        return s;
      }
    } catch (const IoError&) {
      // corrupt cache entries are recomputed below
    }
  }

  const SpectralDecomposition s = spectral_decompose(build_hamiltonian(spec));
  fs::create_directories(cache_dir);
  static std::atomic<unsigned> tmp_counter{0};
  const std::string tmp_tag =
      "." + std::to_string(::getpid()) + "." + std::to_string(tmp_counter.fetch_add(1)) + ".tmp";
  Vector vals = s.eigenvalues.cast<Complex>();
  qmat::write_file(vals_path.string() + tmp_tag, vals);
  qmat::write_file(vecs_path.string() + tmp_tag, s.eigenvectors, qmat::Kind::Unitary);
  fs::rename(vals_path.string() + tmp_tag, vals_path);
  fs::rename(vecs_path.string() + tmp_tag, vecs_path);
  return s;
}

// --- shared cell machinery ----------------------------------------------------------------

namespace {

struct Artifact {
  std::string rel_path;
  std::string bytes;
};

struct CellResult {
  std::vector<Artifact> artifacts;
  std::vector<StageTime> stages;
};

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

class StageClock {
 public:
  explicit StageClock(std::vector<StageTime>& sink, std::string prefix)
      : sink_(sink), prefix_(std::move(prefix)) {}
  void lap(const std::string& name) {
    const double t = now_seconds();
    sink_.push_back({prefix_ + name, t - mark_});
    mark_ = t;
  }

 private:
  std::vector<StageTime>& sink_;
  std::string prefix_;
  double mark_ = now_seconds();
};

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string format_short(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

std::string sanitize_label(std::string label) {
  std::replace(label.begin(), label.end(), ',', '-');
  return label;
}

// One experiment cell: a foliation Hamiltonian and a state, plus metadata.
struct Cell {
  ChainSpec fol_chain;          // generates the foliation
  StateSection state;           // resolved: thermal h0.length filled in
  FoliationSection fol;
  std::string tag;              // min | commuting | swap | bench | intg
  int length = 0;
  double beta = std::numeric_limits<double>::quiet_NaN();  // NaN for non-thermal

  std::string file_stem(const std::string& kind) const {
    std::ostringstream s;
    s << kind << "_" << tag << "_L" << length;
    if (std::isfinite(beta)) s << "_beta" << format_short(beta);
    return s.str();
  }
};

std::vector<Cell> expand_cells(const ExperimentConfig& cfg) {
  std::vector<int> lengths =
      cfg.sweep.lengths.empty() ? std::vector<int>{cfg.model.length} : cfg.sweep.lengths;
  std::vector<double> betas;
  if (cfg.state.kind == StateSection::Kind::Thermal)
    betas = cfg.sweep.betas.empty() ? std::vector<double>{cfg.state.beta} : cfg.sweep.betas;
  else
    betas = {std::numeric_limits<double>::quiet_NaN()};
  if (cfg.state.kind == StateSection::Kind::File &&
      (!cfg.sweep.lengths.empty() || !cfg.sweep.betas.empty()))
    throw InvalidParameter("sweep is not supported with a file state");

  std::vector<Cell> cells;
  for (int L : lengths) {
    for (double beta : betas) {
      Cell cell;
      cell.length = L;
      cell.fol = cfg.foliation;
      ChainSpec model = cfg.model;
      model.length = L;
      if (cfg.state.kind == StateSection::Kind::Thermal) {
        ChainSpec h0 = cfg.state.h0;
        h0.length = L;  // the cell length overrides any explicit h0.L
        if (beta == 0.0) {
          // rho = I/d exactly; use the commuting fast path on the foliation chain
          cell.fol_chain = cfg.swap_roles ? h0 : model;
          cell.state.kind = StateSection::Kind::Uniform;
          cell.tag = "commuting";
          cell.beta = 0.0;
        } else {
          cell.fol_chain = cfg.swap_roles ? h0 : model;
          cell.state.kind = StateSection::Kind::Thermal;
          cell.state.h0 = cfg.swap_roles ? model : h0;
          cell.state.beta = beta;
          cell.tag = cfg.swap_roles ? "swap" : "min";
          cell.beta = beta;
        }
      } else if (cfg.state.kind == StateSection::Kind::Uniform) {
        cell.fol_chain = model;
        cell.state.kind = StateSection::Kind::Uniform;
        cell.tag = "commuting";
      } else {
        cell.fol_chain = model;
        cell.state = cfg.state;
        cell.tag = "min";
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

struct BuiltLeaf {
  SpectralDecomposition h_spec;
  std::optional<HermitianOperator> h;  // dense foliation Hamiltonian (thermal/file path)
  std::optional<DensityMatrix> rho;    // absent for the uniform fast path
  std::optional<Leaf> leaf;
};

BuiltLeaf build_cell_leaf(const Cell& cell, const std::string& cache_dir,
                          StageClock& clock) {
  BuiltLeaf out;
  out.h_spec = cached_chain_decomposition(cell.fol_chain, cache_dir);
  clock.lap("decompose_h");

  FoliationOptions opts;
  opts.gap_tol = cell.fol.gap_tol;
  opts.allow_degenerate = cell.fol.allow_degenerate;

  switch (cell.state.kind) {
    case StateSection::Kind::Uniform:
      out.leaf = commuting_leaf(out.h_spec, opts);
      break;
    case StateSection::Kind::Thermal: {
      const SpectralDecomposition h0_spec =
          cached_chain_decomposition(cell.state.h0, cache_dir);
      clock.lap("decompose_h0");
      out.rho = boltzmann_state(h0_spec, cell.state.beta, cell.fol.rank_floor);
      out.h = build_hamiltonian(cell.fol_chain);
      out.leaf = optimal_ensemble(*out.rho, *out.h, opts);
      break;
    }
    case StateSection::Kind::File: {
      const qmat::Loaded loaded = qmat::read_file(cell.state.file);
      if (loaded.kind != qmat::Kind::Density)
        throw IoError("state file " + cell.state.file + " is not a QMAT1 density matrix");
      if (loaded.matrix.rows() != cell.fol_chain.hilbert_dim())
        throw InvalidParameter("state file " + cell.state.file +
                               " dimension does not match model.L");
      out.rho = DensityMatrix(loaded.matrix, cell.fol.rank_floor);
      out.h = build_hamiltonian(cell.fol_chain);
      out.leaf = optimal_ensemble(*out.rho, *out.h, opts);
      break;
    }
  }
  clock.lap("foliation");
  return out;
}

ObservableCatalog cell_catalog(const Cell& cell, const DiagnosticsSection& diag,
                               bool with_identity) {
  ObservableCatalog full = local_observables(cell.length, diag.site);
  ObservableCatalog catalog(cell.length);
  if (diag.main_text_subset) {
    const int partner = diag.site % cell.length + 1;
    std::ostringstream z, zz;
    z << "z@" << diag.site;
    zz << "zz@" << diag.site << "," << partner;
    for (int i = 0; i < full.size(); ++i)
      if (full.label(i) == z.str() || full.label(i) == zz.str())
        catalog.add(full.label(i), full.factors(i));
  } else {
    for (int i = 0; i < full.size(); ++i) catalog.add(full.label(i), full.factors(i));
  }
  if (with_identity) catalog.add("identity", {});
  return catalog;
}

bool emits(const ExperimentConfig& cfg, const std::string& what) {
  return std::find(cfg.output.emit.begin(), cfg.output.emit.end(), what) !=
         cfg.output.emit.end();
}

json cell_meta(const Cell& cell) {
  json j;
  j["tag"] = cell.tag;
  j["L"] = cell.length;
  if (std::isfinite(cell.beta)) j["beta"] = cell.beta;
  j["foliation_chain"] = chain_json(cell.fol_chain);
  if (cell.state.kind == StateSection::Kind::Thermal)
    j["thermal_h0"] = chain_json(cell.state.h0);
  return j;
}

// Run `work(i)` for i in 0..n-1 on up to `threads` workers; results land in
// index order, so downstream emission is deterministic.
void parallel_cells(int n, int threads, std::vector<CellResult>& results,
                    const std::function<CellResult(int)>& work) {
  results.resize(n);
  if (n == 0) return;
  const int nw = std::max(1, std::min(threads, n));
  if (nw == 1) {
    for (int i = 0; i < n; ++i) results[i] = work(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < nw; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          results[i] = work(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void emit_results(RunContext& ctx, std::vector<CellResult>& results) {
  for (CellResult& r : results) {
    for (Artifact& a : r.artifacts) ctx.emit_file(a.rel_path, a.bytes);
    for (const StageTime& s : r.stages) ctx.add_stage(s.name, s.seconds);
  }
}

std::string matrix_to_qmat_bytes(const Matrix& m, qmat::Kind kind) {
  std::ostringstream out(std::ios::binary);
  qmat::write(out, m, kind);
  return out.str();
}

// --- foliate -----------------------------------------------------------------------

CellResult foliate_cell(const Cell& cell, const ExperimentConfig& cfg,
                        const std::string& cache_dir, const std::string& prefix) {
  CellResult result;
  StageClock clock(result.stages, cell.file_stem("foliate") + ":");
  BuiltLeaf built = build_cell_leaf(cell, cache_dir, clock);
  const Leaf& leaf = *built.leaf;

  json summary = cell_meta(cell);
  summary["leaf_entropy"] = leaf_entropy(leaf);
  if (cell.state.kind == StateSection::Kind::Uniform) {
    // commuting leaf: the family is orthonormal, so these are exact
    summary["qfi"] = 0.0;
    summary["incoherence"] = std::log(static_cast<double>(leaf.dim()));
    summary["incoherence_ratio"] = 1.0;
  } else {
    summary["qfi"] = qfi(*built.rho, *built.h);
    const double inc = incoherence(leaf);
    summary["incoherence"] = inc;
    summary["incoherence_ratio"] = inc / std::log(static_cast<double>(leaf.dim()));
  }
  clock.lap("summary");

  if (emits(cfg, "leaf")) {
    const std::string stem = prefix + cell.file_stem("leaf") + "_";
    json manifest;
    manifest["dim"] = leaf.dim();
    manifest["energies"] = std::vector<double>(leaf.energies().data(),
                                               leaf.energies().data() + leaf.dim());
    manifest["populations"] = std::vector<double>(
        leaf.populations().data(), leaf.populations().data() + leaf.dim());
    manifest["source_energy"] = leaf.source_energy();
    manifest["flags"] = {{"unique", leaf.unique()},
                         {"unreliable_indices", leaf.unreliable()}};
    manifest["files"] = {{"h_rho", stem + "h_rho.qmat"}, {"states", stem + "states.qmat"}};
    manifest["summary"] = summary;
    result.artifacts.push_back({stem + "leaf.json", manifest.dump(2) + "\n"});
    result.artifacts.push_back(
        {stem + "h_rho.qmat", matrix_to_qmat_bytes(leaf.h_rho(), qmat::Kind::Hermitian)});
    result.artifacts.push_back(
        {stem + "states.qmat", matrix_to_qmat_bytes(leaf.states(), qmat::Kind::Unitary)});
    clock.lap("serialize");
  }
  return result;
}

// --- diagnostics ----------------------------------------------------------------------

CellResult diagnostics_cell(const Cell& cell, const ExperimentConfig& cfg,
                            const std::string& cache_dir, const std::string& prefix) {
  CellResult result;
  StageClock clock(result.stages, cell.file_stem("diag") + ":");
  BuiltLeaf built = build_cell_leaf(cell, cache_dir, clock);
  const Leaf& leaf = *built.leaf;

  const ObservableCatalog catalog = cell_catalog(cell, cfg.diagnostics, false);
  const int shell_size = cfg.diagnostics.shell_size > 0 ? cfg.diagnostics.shell_size
                                                        : default_shell_size(leaf.dim());
  auto [report, curves] =
      diagnostics(leaf, catalog, shell_size, {}, cfg.diagnostics.delta_points);
  clock.lap("diagnostics");

  if (emits(cfg, "diagnostics")) {
    for (DiagnosticsCurve& curve : curves) {
      curve.chain_length = cell.length;
      curve.beta = std::isfinite(cell.beta) ? cell.beta : 0.0;
      const std::string stem =
          prefix + cell.file_stem("diag") + "_" + sanitize_label(curve.observable_label);

      std::ostringstream csv;
      csv << "delta,N,log_d_N\n";
      for (size_t k = 0; k < curve.deltas.size(); ++k) {
        csv << format_double(curve.deltas[k]) << "," << curve.counts[k] << ",";
        if (curve.counts[k] > 0) csv << format_double(curve.log_d_counts[k]);
        csv << "\n";
      }
      result.artifacts.push_back({stem + ".csv", csv.str()});

      json sidecar = cell_meta(cell);
      sidecar["observable"] = curve.observable_label;
      sidecar["shell_size"] = shell_size;
      sidecar["incoherence_ratio"] = curve.incoherence_ratio;
      sidecar["mask_count"] = report.mask_count;
      result.artifacts.push_back({stem + ".json", sidecar.dump(2) + "\n"});
    }
    clock.lap("serialize");
  }
  return result;
}

// --- evolve ---------------------------------------------------------------------------

std::vector<double> time_grid(const EvolveSection& e) {
  std::vector<double> times;
  if (e.t_max <= 0.0) {
    times.push_back(0.0);
    return times;
  }
  for (int i = 0;; ++i) {
    const double t = i * e.dt;
    if (t > e.t_max * (1.0 + 1e-12)) break;
    times.push_back(t);
  }
  return times;
}

CellResult evolve_cell(const Cell& cell, const ExperimentConfig& cfg,
                       const std::string& cache_dir, const std::string& prefix) {
  CellResult result;
  StageClock clock(result.stages, cell.file_stem("evolve") + ":");
  BuiltLeaf built = build_cell_leaf(cell, cache_dir, clock);
  const Leaf& leaf = *built.leaf;

  // identity sentinel appended: both curves must be exactly 1
  const ObservableCatalog catalog = cell_catalog(cell, cfg.diagnostics, true);
  const int shell_size = cfg.diagnostics.shell_size > 0 ? cfg.diagnostics.shell_size
                                                        : default_shell_size(leaf.dim());
  auto [report, curves] =
      diagnostics(leaf, catalog, shell_size, {}, cfg.diagnostics.delta_points);
  clock.lap("shells");

  DensityMatrix rho = built.rho ? *built.rho : DensityMatrix::maximally_mixed(leaf.dim());
  const std::vector<double> times = time_grid(cfg.evolve);
  const std::vector<EvolutionComparison> comparisons =
      compare_evolutions(leaf, rho, built.h_spec, catalog, times, report);
  clock.lap("evolve");

  if (emits(cfg, "evolution")) {
    const std::string stem = prefix + cell.file_stem("evolve");
    for (const EvolutionComparison& cmp : comparisons) {
      std::ostringstream csv;
      csv << "t,exact,representative,band_low,band_high\n";
      for (size_t i = 0; i < cmp.times.size(); ++i) {
        csv << format_double(cmp.times[i]) << "," << format_double(cmp.exact[i]) << ","
            << format_double(cmp.representative[i]) << ","
            << format_double(cmp.band_low[i]) << "," << format_double(cmp.band_high[i])
            << "\n";
      }
      result.artifacts.push_back(
          {stem + "_" + sanitize_label(cmp.observable_label) + ".csv", csv.str()});
    }
    json meta = cell_meta(cell);
    meta["representative_index"] = comparisons.front().representative_index;
    meta["representative_energy"] = comparisons.front().representative_energy;
    meta["source_energy"] = leaf.source_energy();
    meta["shell_size"] = shell_size;
    meta["incoherence_ratio"] = curves.front().incoherence_ratio;
    meta["t_max"] = cfg.evolve.t_max;
    meta["dt"] = cfg.evolve.dt;
    json labels = json::array();
    for (const EvolutionComparison& cmp : comparisons) labels.push_back(cmp.observable_label);
    meta["observables"] = labels;
    result.artifacts.push_back({stem + "_meta.json", meta.dump(2) + "\n"});
    clock.lap("serialize");
  }
  return result;
}

void run_cells(const ExperimentConfig& cfg, RunContext& ctx, const std::string& prefix,
               const std::vector<Cell>& cells,
               CellResult (*cell_fn)(const Cell&, const ExperimentConfig&,
                                     const std::string&, const std::string&)) {
  std::vector<CellResult> results;
  parallel_cells(static_cast<int>(cells.size()), ctx.threads(), results, [&](int i) {
    return cell_fn(cells[i], cfg, ctx.cache_dir(), prefix);
  });
  emit_results(ctx, results);
}

}  // namespace

void run_foliate(const ExperimentConfig& cfg, RunContext& ctx) {
  run_cells(cfg, ctx, "", expand_cells(cfg), &foliate_cell);
  ctx.write_manifest();
}

void run_diagnostics(const ExperimentConfig& cfg, RunContext& ctx) {
  run_cells(cfg, ctx, "", expand_cells(cfg), &diagnostics_cell);
  ctx.write_manifest();
}

void run_evolve(const ExperimentConfig& cfg, RunContext& ctx) {
  run_cells(cfg, ctx, "", expand_cells(cfg), &evolve_cell);
  ctx.write_manifest();
}

// --- figures -----------------------------------------------------------------------------

namespace {

json deep_merge(json base, const json& overrides) {
  if (!base.is_object() || !overrides.is_object()) return overrides;
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (base.contains(it.key()))
      base[it.key()] = deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
  return base;
}

json figure_preset_json(const std::string& name) {
  const json sweep_l = {6, 8, 10, 12};
  if (name == "fig1") {
    return json{{"model", {{"L", 2}}},
                {"state", {{"uniform", true}}},
                {"output", {{"dir", "out"}}}};
  }
  if (name == "fig2-left") {
    return json{{"model", {{"L", 12}}},
                {"state", {{"h0", {{"g", 0.0}, {"h", 1.5}, {"D", 0.0}}}, {"beta", 0.25}}},
                {"sweep", {{"L", sweep_l}, {"beta", {0.25, 0.75, 1.75}}}},
                {"diagnostics", {{"subset", "main"}}}};
  }
  if (name == "fig2-right") {
    return json{{"model", {{"L", 12}}},
                {"state", {{"h0", {{"g", 0.0}, {"h", 1.5}, {"D", 0.0}}}, {"beta", 0.5}}}};
  }
  if (name == "s1" || name == "s2" || name == "s3" || name == "s4") {
    const double beta = name == "s2" ? 0.75 : (name == "s3" ? 1.75 : 0.25);
    json preset{{"model", {{"L", 12}}},
                {"state", {{"h0", {{"g", 0.0}, {"h", 0.5}, {"D", 0.0}}}, {"beta", beta}}},
                {"sweep", {{"L", sweep_l}}}};
    if (name == "s4") {
      preset["swap_roles"] = true;
      // the integrable foliation can carry (near-)degenerate state Hamiltonians
      preset["foliation"] = {{"allow_degenerate", true}};
    }
    return preset;
  }
  throw InvalidParameter("unknown figure name: " + name);
}

// Uniform-state companions: the commuting-leaf benchmark of each foliation
// chain, and (fig2-left) the commuting-leaf diagnostics of the integrable H0.
std::vector<Cell> benchmark_cells(const ExperimentConfig& cfg, const std::string& tag,
                                  const ChainSpec& chain_template, bool allow_degenerate) {
  std::vector<int> lengths =
      cfg.sweep.lengths.empty() ? std::vector<int>{cfg.model.length} : cfg.sweep.lengths;
  std::vector<Cell> cells;
  for (int L : lengths) {
    Cell cell;
    cell.length = L;
    cell.fol = cfg.foliation;
    cell.fol.allow_degenerate = cell.fol.allow_degenerate || allow_degenerate;
    cell.fol_chain = chain_template;
    cell.fol_chain.length = L;
    cell.state.kind = StateSection::Kind::Uniform;
    cell.tag = tag;
    cell.beta = 0.0;
    cells.push_back(std::move(cell));
  }
  return cells;
}

// --- fig1: qutrit foliation sampling -------------------------------------------------------

std::string fig1_leaf_id(const DensityMatrix& bary) {
  // barycenter rounded to 1e-6, hashed
  std::vector<long long> rounded;
  const Matrix& m = bary.matrix();
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      rounded.push_back(std::llround(m(i, j).real() * 1e6));
      rounded.push_back(std::llround(m(i, j).imag() * 1e6));
    }
  }
  return hex64(fnv1a64(rounded.data(), rounded.size() * sizeof(long long)));
}

CellResult fig1_cell(const ExperimentConfig& cfg) {
  CellResult result;
  StageClock clock(result.stages, "fig1:");

  const Matrix h_matrix =
      0.5 * gell_mann(3).matrix() + 1.5 * std::sqrt(3.0) * gell_mann(8).matrix();
  const HermitianOperator h(h_matrix);
  const Matrix l1 = gell_mann(1).matrix();
  const Matrix l3 = gell_mann(3).matrix();
  const Matrix l8 = gell_mann(8).matrix();
  const Matrix eye = Matrix::Identity(3, 3);

  FoliationOptions opts;
  opts.gap_tol = cfg.foliation.gap_tol;
  opts.allow_degenerate = false;  // degenerate points are leaf intersections; skip them

  const int half = std::max(1, static_cast<int>(std::lround(1.0 / cfg.figure.grid_step)));
  const int steps = 2 * half;  // grid n = -1 .. 1, steps+1 values per axis

  std::ostringstream points;
  points << "n1,n3,n8,incoherence,leaf_id\n";
  std::map<std::string, Leaf> leaves;
  long n_points = 0, n_skipped = 0;

  for (int i1 = 0; i1 <= steps; ++i1) {
    const double n1 = -1.0 + 2.0 * i1 / steps;
    for (int i3 = 0; i3 <= steps; ++i3) {
      const double n3 = -1.0 + 2.0 * i3 / steps;
      for (int i8 = 0; i8 <= steps; ++i8) {
        const double n8 = -1.0 + 2.0 * i8 / steps;
        Matrix rho_m = eye / 3.0 + 0.5 * (n1 * l1 + n3 * l3 + n8 * l8);
        Eigen::SelfAdjointEigenSolver<Matrix> es(rho_m, Eigen::EigenvaluesOnly);
        const double lmin = es.eigenvalues()(0);
        const double lmax = es.eigenvalues()(2);
        if (lmax <= 0.0 || lmin / lmax <= cfg.foliation.rank_floor || lmin <= 0.0) {
          ++n_skipped;
          continue;
        }
        try {
          const DensityMatrix rho(rho_m, cfg.foliation.rank_floor);
          const Leaf leaf = optimal_ensemble(rho, h, opts);
          const double inc = incoherence(leaf);
          const std::string id = fig1_leaf_id(barycenter(leaf));
          points << format_double(n1) << "," << format_double(n3) << ","
                 << format_double(n8) << "," << format_double(inc) << "," << id << "\n";
          ++n_points;
          leaves.try_emplace(id, leaf);
        } catch (const DegenerateStateHamiltonian&) {
          ++n_skipped;
        } catch (const RankDeficient&) {
          ++n_skipped;
        }
      }
    }
  }
  clock.lap("grid");

  // leaf-canonical curves for a deterministic subsample of the leaves
  std::vector<std::string> ids;
  ids.reserve(leaves.size());
  for (const auto& [id, leaf] : leaves) ids.push_back(id);
  const int want = std::min<int>(cfg.figure.max_leaf_curves, static_cast<int>(ids.size()));
  std::ostringstream curves;
  curves << "leaf_id,beta,n1,n3,n8,purity\n";
  for (int k = 0; k < want; ++k) {
    const std::string& id = ids[static_cast<size_t>(k) * ids.size() / want];
    const Leaf& leaf = leaves.at(id);
    for (int b = 0; b < cfg.figure.beta_points; ++b) {
      const double beta =
          -cfg.figure.beta_max + 2.0 * cfg.figure.beta_max * b / (cfg.figure.beta_points - 1);
      const DensityMatrix state = leaf_canonical(leaf, beta);
      const Matrix& sm = state.matrix();
      const double c1 = (sm.transpose().cwiseProduct(l1)).sum().real();
      const double c3 = (sm.transpose().cwiseProduct(l3)).sum().real();
      const double c8 = (sm.transpose().cwiseProduct(l8)).sum().real();
      const double purity = sm.squaredNorm();
      curves << id << "," << format_double(beta) << "," << format_double(c1) << ","
             << format_double(c3) << "," << format_double(c8) << ","
             << format_double(purity) << "\n";
    }
  }
  clock.lap("curves");

  json meta;
  meta["hamiltonian"] = "0.5*lambda3 + (3*sqrt(3)/2)*lambda8";
  meta["grid_step"] = 2.0 / steps;
  meta["points"] = n_points;
  meta["skipped"] = n_skipped;
  meta["distinct_leaves"] = leaves.size();
  meta["curve_leaves"] = want;
  meta["beta_max"] = cfg.figure.beta_max;
  meta["beta_points"] = cfg.figure.beta_points;

  result.artifacts.push_back({"fig1/points.csv", points.str()});
  result.artifacts.push_back({"fig1/curves.csv", curves.str()});
  result.artifacts.push_back({"fig1/meta.json", meta.dump(2) + "\n"});
  return result;
}

}  // namespace

bool figure_name_known(const std::string& name) {
  return name == "fig1" || name == "fig2-left" || name == "fig2-right" || name == "s1" ||
         name == "s2" || name == "s3" || name == "s4";
}

ExperimentConfig figure_config(const std::string& name, const json& overrides) {
  json merged = figure_preset_json(name);
  if (!overrides.is_null() && !overrides.empty()) merged = deep_merge(merged, overrides);
  return parse_config_json(merged, "", "preset:" + name);
}

void run_figure(const std::string& name, const json& overrides, RunContext& ctx) {
  const ExperimentConfig cfg = figure_config(name, overrides);

  if (name == "fig1") {
    std::vector<CellResult> results(1);
    results[0] = fig1_cell(cfg);
    emit_results(ctx, results);
    ctx.write_manifest();
    return;
  }

  if (name == "fig2-right") {
    run_cells(cfg, ctx, name + "/", expand_cells(cfg), &evolve_cell);
    ctx.write_manifest();
    return;
  }

  // diagnostics figures: the swept min-variance cells plus the commuting-leaf
  // benchmark of the foliation chain; fig2-left adds the integrable H0 curves
  std::vector<Cell> cells = expand_cells(cfg);
  const ChainSpec fol_template = cfg.swap_roles ? cfg.state.h0 : cfg.model;
  const bool integrable_foliation = cfg.swap_roles;
  std::vector<Cell> bench =
      benchmark_cells(cfg, "bench", fol_template, integrable_foliation);
  cells.insert(cells.end(), bench.begin(), bench.end());
  if (name == "fig2-left") {
    std::vector<Cell> intg = benchmark_cells(cfg, "intg", cfg.state.h0, true);
    cells.insert(cells.end(), intg.begin(), intg.end());
  }
  run_cells(cfg, ctx, name + "/", cells, &diagnostics_cell);
  ctx.write_manifest();
}

}  // namespace leafkit::pipeline
