#include "actlab/report.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace actlab {
namespace {

std::string separation_label(int separation) {
  return separation == kSeparationEqualsA ? "a" : std::to_string(separation);
}

struct Grids {
  SuccessGrid activation;
  SuccessGrid token;
};

Grids build_grids(const std::vector<RunRecord>& records) {
  Grids g;
  for (const auto& r : records) {
    auto& grid = r.type == AttackType::token ? g.token : g.activation;
    try {
      grid.add(r.spec, r.outcome);
    } catch (const DuplicateRunError&) {
      throw RecordError("duplicate run (spec, seed) in records: seed " + std::to_string(r.spec.seed));
    }
  }
  return g;
}

// True when some a was run at more than one separation, i.e. s is a sweep axis.
bool separation_varies(const std::vector<CurveRow>& rows) {
  std::map<int, std::set<int>> seps;
  for (const auto& r : rows) seps[r.key.a].insert(r.key.s);
  for (const auto& [a, s] : seps) {
    if (s.size() > 1) return true;
  }
  return false;
}

std::vector<CurveRow> curve_rows(const SuccessGrid& grid) {
  // Sorted by (a, n, f, s, t) to match the column order.
  std::map<std::tuple<int, int, double, int, int>, CurveRow> sorted;
  for (const auto& [key, stats] : grid.all_stats()) {
    sorted[{key.a, key.n, key.f, key.s, key.t}] = CurveRow{key, stats};
  }
  std::vector<CurveRow> out;
  for (auto& [k, row] : sorted) out.push_back(row);
  return out;
}

void fit_tmax(FitReport& report) {
  std::map<std::tuple<int, int, double, int>, std::vector<FitPoint>> curves;
  for (const auto& row : report.activation_curve) {
    const auto& k = row.key;
    curves[{k.a, k.n, k.f, k.s}].push_back(
        {static_cast<double>(k.t), row.stats.mean, cell_weight(row.stats.count, row.stats.stddev)});
  }
  for (const auto& [key, points] : curves) {
    TmaxRow row;
    std::tie(row.a, row.n, row.f, row.s) = key;
    row.x = row.f * row.a / row.n;
    if (points.size() < 3) {
      row.note = "fewer than 3 target lengths";
    } else {
      row.fit = fit_sigmoid(points);
      if (!row.fit->converged()) {
        row.note = "fit did not converge";
      } else if (row.fit->curve.extrapolated) {
        row.note = "t_max outside sampled range";
      } else {
        row.usable = true;
      }
    }
    report.tmax.push_back(row);
  }
}

void fit_kappas(FitReport& report, const std::optional<ModelConfig>& model) {
  const bool by_s = separation_varies(report.activation_curve);
  std::map<int, std::vector<ScalingPoint>> groups;
  for (const auto& row : report.tmax) {
    if (!row.usable) continue;
    const ScalingPoint pt{row.x, row.fit->t_max(), row.fit->t_max_stderr()};
    if (by_s || row.s != row.a) groups[row.s].push_back(pt);
    if (row.s == row.a) groups[kSeparationEqualsA].push_back(pt);
  }
  for (const auto& [separation, points] : groups) {
    KappaRow row;
    row.separation = separation;
    row.fit = fit_kappa(points);
    if (model && row.fit.kappa > 0) {
      row.resistance = attack_resistance(model->d, model->p_bits, model->vocab, row.fit.kappa,
                                         std::isfinite(row.fit.kappa_stderr) ? row.fit.kappa_stderr : 0.0);
      row.predicted_token_kappa = predicted_token_kappa(row.fit.kappa, model->d, model->p_bits, model->vocab);
    }
    report.kappa.push_back(row);
  }
  if (report.kappa.empty()) report.notes.push_back("kappa: no usable t_max values");

  std::vector<SeparationPoint> sep;
  for (const auto& row : report.kappa) {
    if (row.separation != kSeparationEqualsA) sep.push_back({static_cast<double>(row.separation), row.fit.kappa});
  }
  if (sep.size() >= 4) {
    try {
      report.separation = fit_separation(sep);
    } catch (const std::invalid_argument& e) {
      report.notes.push_back(std::string("separation fit absent: ") + e.what());
    }
  } else if (sep.size() > 1) {
    report.notes.push_back("separation fit absent: fewer than 4 separations with a kappa");
  }
}

void fit_token(FitReport& report) {
  const bool by_s = separation_varies(report.token_curve);
  std::map<std::pair<int, int>, std::vector<FitPoint>> curves;
  for (const auto& row : report.token_curve) {
    const auto& k = row.key;
    const FitPoint pt{static_cast<double>(k.a), row.stats.mean, cell_weight(row.stats.count, row.stats.stddev)};
    if (by_s || k.s != k.a) curves[{k.t, k.s}].push_back(pt);
    if (k.s == k.a) curves[{k.t, kSeparationEqualsA}].push_back(pt);
  }
  std::vector<double> values, errors;
  bool all_have_errors = true;
  for (const auto& [key, points] : curves) {
    if (points.size() < 3) continue;  // single-a groups are expected for s = a sweeps
    AminRow row;
    std::tie(row.t, row.separation) = key;
    row.fit = fit_amin(points);
    if (!row.fit->converged()) {
      row.note = "fit did not converge";
    } else if (row.fit->curve.extrapolated) {
      row.note = "a_min outside sampled range";
    } else {
      row.usable = true;
      row.estimate = token_kappa_from_amin(row.t, row.fit->a_min(), row.fit->a_min_stderr());
    }
    if (row.usable && row.separation == kSeparationEqualsA) {
      values.push_back(row.estimate->kappa);
      errors.push_back(row.estimate->kappa_stderr);
      if (!(row.estimate->kappa_stderr > 0)) all_have_errors = false;
    }
    report.amin.push_back(row);
  }
  if (values.empty()) {
    if (!report.token_curve.empty()) report.notes.push_back("token kappa: no usable a_min fits with s = a");
    return;
  }
  if (all_have_errors) {
    report.token_kappa = combine_estimates(values, errors);
  } else {
    CombinedEstimate c;
    double sum = 0;
    for (double v : values) sum += v;
    c.inverse_variance_mean = c.variance_weighted_mean = sum / static_cast<double>(values.size());
    c.inverse_variance_stderr = std::nan("");
    c.note = "some a_min fits have no error estimate; plain mean used";
    report.token_kappa = c;
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "a,n,f,s,t,mean_p,std_p,count,full_rate\n";
  for (const auto& r : rows) {
    os << r.key.a << ',' << r.key.n << ',' << format_double(r.key.f) << ',' << r.key.s << ',' << r.key.t << ','
       << format_double(r.stats.mean) << ',' << format_double(r.stats.stddev) << ',' << r.stats.count << ','
       << format_double(r.stats.full_rate) << '\n';
  }
  return os.str();
}

}  // namespace

FitReport build_report(const std::vector<RunRecord>& records, const std::optional<ModelConfig>& model) {
  const Grids grids = build_grids(records);
  FitReport report;
  report.activation_curve = curve_rows(grids.activation);
  report.token_curve = curve_rows(grids.token);
  fit_tmax(report);
  fit_kappas(report, model);
  fit_token(report);
  if (report.token_kappa && !report.token_kappa->note.empty()) report.notes.push_back(report.token_kappa->note);
  return report;
}

void write_report(const FitReport& report, const std::filesystem::path& out_dir, const std::string& config_hash) {
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "success_curve.csv", curve_csv(report.activation_curve));
  write_file_atomic(out_dir / "token_curve.csv", curve_csv(report.token_curve));

  std::ostringstream scaling;
  scaling << "x,t_max,stderr,a,n,f,s,alpha,converged,usable\n";
  for (const auto& r : report.tmax) {
    if (!r.fit) continue;
    scaling << format_double(r.x) << ',' << format_double(r.fit->t_max()) << ','
            << format_double(r.fit->t_max_stderr()) << ',' << r.a << ',' << r.n << ',' << format_double(r.f) << ','
            << r.s << ',' << format_double(r.fit->alpha()) << ',' << (r.fit->converged() ? 1 : 0) << ','
            << (r.usable ? 1 : 0) << '\n';
  }
  write_file_atomic(out_dir / "scaling.csv", scaling.str());

  std::ostringstream rep;
  rep << "quantity,s,t,value,stderr,note\n";
  auto line = [&](const std::string& q, const std::string& s, const std::string& t, double v, double e,
                  const std::string& note) {
    rep << q << ',' << s << ',' << t << ',' << format_double(v) << ',' << format_double(e) << ',' << csv_escape(note)
        << '\n';
  };
  rep << "config_hash,,," << config_hash << ",,\n";
  for (const auto& r : report.tmax) {
    const std::string cell = "a=" + std::to_string(r.a) + " n=" + std::to_string(r.n) + " f=" + format_double(r.f);
    if (r.usable) {
      line("t_max", std::to_string(r.s), "", r.fit->t_max(), r.fit->t_max_stderr(), cell);
    } else {
      rep << "t_max," << r.s << ",,,," << csv_escape(cell + ": absent, " + r.note) << '\n';
    }
  }
  for (const auto& k : report.kappa) {
    const auto s = separation_label(k.separation);
    line("kappa", s, "", k.fit.kappa, k.fit.kappa_stderr,
         std::to_string(k.fit.points_used) + " points" + (k.fit.weighted ? ", weighted" : ", unweighted"));
    if (k.resistance) line("chi", s, "", k.resistance->chi, k.resistance->chi_stderr, "");
    if (k.predicted_token_kappa) line("predicted_token_kappa", s, "", *k.predicted_token_kappa, std::nan(""), "");
  }
  if (report.separation) {
    const auto& sf = *report.separation;
    line("separation_kappa0", "", "", sf.kappa0, std::nan(""), "");
    line("separation_s0", "", "", sf.s0, std::nan(""), "");
    line("separation_slope", "", "", sf.slope, std::nan(""), "");
    line("separation_residual_sum", "", "", sf.residual_sum, std::nan(""), "");
  }
  for (const auto& a : report.amin) {
    const auto s = separation_label(a.separation);
    if (a.usable) {
      line("token_a_min", s, std::to_string(a.t), a.estimate->a_min, a.estimate->a_min_stderr, "");
      line("token_kappa", s, std::to_string(a.t), a.estimate->kappa, a.estimate->kappa_stderr, "");
    } else {
      rep << "token_a_min," << s << ',' << a.t << ",,," << csv_escape("absent: " + a.note) << '\n';
    }
  }
  if (report.token_kappa) {
    const auto& c = *report.token_kappa;
    line("token_kappa_inverse_variance", "a", "", c.inverse_variance_mean, c.inverse_variance_stderr, c.note);
    line("token_kappa_variance_weighted", "a", "", c.variance_weighted_mean, std::nan(""), "");
  }
  for (const auto& n : report.notes) rep << "note,,,,," << csv_escape(n) << '\n';
  write_file_atomic(out_dir / "report.csv", rep.str());
}

std::vector<ResistanceRow> read_resistance_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<ResistanceRow> rows;
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 5 && cols.size() != 6) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 5 or 6 columns");
    }
    try {
      ResistanceRow r;
      r.name = cols[0];
      r.d = std::stod(cols[1]);
      r.p_bits = std::stod(cols[2]);
      r.vocab = std::stod(cols[3]);
      r.kappa = std::stod(cols[4]);
      r.kappa_stderr = cols.size() == 6 ? std::stod(cols[5]) : 0.0;
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  return rows;
}

std::string resistance_table_csv(const std::vector<ResistanceRow>& rows) {
  std::ostringstream os;
  os << "name,d,p_bits,vocab,kappa,kappa_stderr,d_over_kappa,chi,chi_stderr,predicted_token_kappa\n";
  for (const auto& r : rows) {
    const auto chi = attack_resistance(r.d, r.p_bits, r.vocab, r.kappa, r.kappa_stderr);
    os << csv_escape(r.name) << ',' << format_double(r.d) << ',' << format_double(r.p_bits) << ','
       << format_double(r.vocab) << ',' << format_double(r.kappa) << ',' << format_double(r.kappa_stderr) << ','
       << format_double(r.d / r.kappa) << ',' << format_double(chi.chi) << ',' << format_double(chi.chi_stderr) << ','
       << format_double(predicted_token_kappa(r.kappa, r.d, r.p_bits, r.vocab)) << '\n';
  }
  return os.str();
}

}  // namespace actlab
