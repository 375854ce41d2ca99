#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafkit/spinchain.hpp"

namespace leafkit::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// Chaotic-chain couplings in units of the xx coupling. The alternative g
// reading stays available by setting model.g explicitly in the config.
double default_g();      // (sqrt(5) + 5)/8
double default_g_alt();  // sqrt(10)/8
double default_h();      // sqrt(5)/2
double default_d();      // pi/20
ChainSpec chaotic_chain(int length);

struct StateSection {
  enum class Kind { Uniform, Thermal, File };
  Kind kind = Kind::Uniform;
  ChainSpec h0;       // Thermal; h0.length == 0 means "inherit model.L"
  double beta = 0.0;  // Thermal
  std::string file;   // File: QMAT1 density matrix
};

struct FoliationSection {
  double gap_tol = tol::gap_rel;
  double rank_floor = tol::rank_floor;
  bool allow_degenerate = false;
};

struct DiagnosticsSection {
  int shell_size = 0;  // 0 = round(sqrt(d))
  int delta_points = 201;
  bool main_text_subset = false;  // {z@site, zz@site,site+1} only
  int site = 1;
};

struct EvolveSection {
  double t_max = 10.0;
  double dt = 0.25;
};

struct OutputSection {
  std::string dir = "out";
  std::vector<std::string> emit = {"leaf", "diagnostics", "evolution", "figures"};
};

struct SweepSection {
  std::vector<int> lengths;
  std::vector<double> betas;
};

struct FigureSection {
  double grid_step = 0.05;
  double beta_max = 12.0;
  int beta_points = 49;
  int max_leaf_curves = 512;
};

struct ExperimentConfig {
  ChainSpec model;
  StateSection state;
  FoliationSection foliation;
  DiagnosticsSection diagnostics;
  EvolveSection evolve;
  bool swap_roles = false;
  OutputSection output;
  SweepSection sweep;
  FigureSection figure;
  std::uint64_t seed = 0;

  nlohmann::json effective() const;  // all defaults filled, ready to echo
};

// Strict parsing: unknown keys are errors with a line-anchored message.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& source_name);
ExperimentConfig parse_config_json(const nlohmann::json& j, const std::string& text,
                                   const std::string& source_name);

// --- hashing -----------------------------------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64_str(const std::string& s);
std::string hex64(std::uint64_t v);

// --- run context / manifest ----------------------------------------------------

struct StageTime {
  std::string name;
  double seconds;
};

struct FileRecord {
  std::string path;  // relative to the output dir
  std::uint64_t bytes;
  std::string fnv1a64;
};

class RunContext {
 public:
  RunContext(std::string out_dir, std::string cache_dir, int threads,
             nlohmann::json effective_config);

  const std::string& out_dir() const { return out_dir_; }
  const std::string& cache_dir() const { return cache_dir_; }
  int threads() const { return threads_; }
  const std::string& config_hash() const { return config_hash_; }

  void add_stage(const std::string& name, double seconds);
  // Writes bytes to out_dir/rel_path (creating directories) and records it.
  void emit_file(const std::string& rel_path, const std::string& bytes);
  void write_manifest();

  const std::vector<FileRecord>& files() const { return files_; }

 private:
  std::string out_dir_;
  std::string cache_dir_;
  int threads_;
  nlohmann::json config_;
  std::string config_hash_;
  std::vector<StageTime> stages_;
  std::vector<FileRecord> files_;
};

// Resolves output/cache dirs and thread count (flag > env > default) and
// creates the directories.
RunContext make_context(const ExperimentConfig& cfg, const std::string& out_override,
                        int threads_override);

// Spectral decomposition of a chain Hamiltonian, cached as a QMAT1 pair keyed
// by a content hash of the ChainSpec.
SpectralDecomposition cached_chain_decomposition(const ChainSpec& spec,
                                                 const std::string& cache_dir);

// --- commands -------------------------------------------------------------------

void run_foliate(const ExperimentConfig& cfg, RunContext& ctx);
void run_diagnostics(const ExperimentConfig& cfg, RunContext& ctx);
void run_evolve(const ExperimentConfig& cfg, RunContext& ctx);

// name in {fig1, fig2-left, fig2-right, s1, s2, s3, s4}; overrides may be empty.
bool figure_name_known(const std::string& name);
void run_figure(const std::string& name, const nlohmann::json& overrides, RunContext& ctx);
// Effective config a figure preset would run with (for context construction).
ExperimentConfig figure_config(const std::string& name, const nlohmann::json& overrides);

}  // namespace leafkit::pipeline
