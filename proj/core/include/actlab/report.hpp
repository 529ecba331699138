#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "actlab/fits.hpp"
#include "actlab/model.hpp"
#include "actlab/records.hpp"
#include "actlab/success_grid.hpp"

namespace actlab {

/// Separation label used when grouping runs: 0 stands for "s equals a".
inline constexpr int kSeparationEqualsA = 0;

struct CurveRow {
  GridKey key;
  CellStats stats;
};

/// One success curve p(t) at fixed (a, n, f, s).
struct TmaxRow {
  int a = 0, n = 0, s = 0;
  double f = 0;
  double x = 0;  // f * a / n
  std::optional<SigmoidFit> fit;
  bool usable = false;  // converged with t_max inside the sampled t range
  std::string note;
};

struct KappaRow {
  int separation = kSeparationEqualsA;
  ScalingFit fit;
  std::optional<ResistanceEstimate> resistance;
  std::optional<double> predicted_token_kappa;
};

/// One token-attack curve p(a) at fixed (t, s).
struct AminRow {
  int t = 0;
  int separation = kSeparationEqualsA;
  std::optional<AminFit> fit;
  std::optional<TokenKappaEstimate> estimate;
  bool usable = false;
  std::string note;
};

struct FitReport {
  std::vector<CurveRow> activation_curve;
  std::vector<CurveRow> token_curve;
  std::vector<TmaxRow> tmax;
  std::vector<KappaRow> kappa;
  std::optional<SeparationFit> separation;
  std::vector<AminRow> amin;
  std::optional<CombinedEstimate> token_kappa;
  std::vector<std::string> notes;
};

/// Aggregates records into grids and runs every fit the data supports. Fits
/// without enough points are left absent with a note. With a model config,
/// kappa rows also carry chi and the predicted token multiplier.
FitReport build_report(const std::vector<RunRecord>& records, const std::optional<ModelConfig>& model);

/// Files written into out_dir:
///   success_curve.csv  a,n,f,s,t,mean_p,std_p,count,full_rate      (activation runs)
///   token_curve.csv    a,n,f,s,t,mean_p,std_p,count,full_rate      (token runs)
///   scaling.csv        x,t_max,stderr,a,n,f,s,alpha,converged,usable
///   report.csv         quantity,s,t,value,stderr,note
/// Absent inputs produce header-only files (report.csv always has config_hash).
void write_report(const FitReport& report, const std::filesystem::path& out_dir, const std::string& config_hash);

struct ResistanceRow {
  std::string name;
  double d = 0;
  double p_bits = 16;
  double vocab = 0;
  double kappa = 0;
  double kappa_stderr = 0;
};

/// Reads name,d,p_bits,vocab,kappa[,kappa_stderr] rows (header line required).
std::vector<ResistanceRow> read_resistance_rows(const std::filesystem::path& path);
/// name,d,p_bits,vocab,kappa,kappa_stderr,d_over_kappa,chi,chi_stderr,predicted_token_kappa
std::string resistance_table_csv(const std::vector<ResistanceRow>& rows);

}  // namespace actlab
