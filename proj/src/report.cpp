#include "mvmae/report.hpp"

#include "mvmae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#ifndef MVMAE_CODE_VERSION
#define MVMAE_CODE_VERSION "unknown"
#endif

namespace mvmae {

namespace {

constexpr std::array<const char*, 7> kColumns{"method", "scenario", "budget", "seed", "label", "auroc", "macro_auroc"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  if (text == "nan") return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("not a number '" + text + "' at " + where);
  }
}

// Budget order: numeric ascending, full last.
bool budget_less(long a, long b) {
  if (a == b) return false;
  if (a == kFullBudget) return false;
  if (b == kFullBudget) return true;
  return a < b;
}

bool is_probe(const std::string& method) {
  constexpr std::string_view suffix = "-probe";
  return method.size() > suffix.size() && method.ends_with(suffix);
}

std::string base_method(const std::string& method) {
  return is_probe(method) ? method.substr(0, method.size() - 6) : method;
}

std::string display_name(const std::string& method) {
  if (method == "supervised") return "Supervised";
  if (method == "mvmae") return "MVMAE";
  if (method == "contrastive") return "Contrastive";
  return method;
}

int method_rank(const std::string& m) {
  if (m == "supervised") return 0;
  if (m == "mvmae") return 1;
  if (m == "contrastive") return 2;
  return 3;
}

std::vector<std::string> ordered_scenarios(const std::vector<EvalRow>& rows) {
  std::vector<std::string> out;
  for (const char* s : {"Frontal", "Lateral", "Ensemble"}) {
    if (std::any_of(rows.begin(), rows.end(), [&](const EvalRow& r) { return r.scenario == s; })) out.emplace_back(s);
  }
  std::set<std::string> other;
  for (const EvalRow& r : rows) {
    if (r.scenario != "Frontal" && r.scenario != "Lateral" && r.scenario != "Ensemble") other.insert(r.scenario);
  }
  out.insert(out.end(), other.begin(), other.end());
  return out;
}

std::string fixed(double v, int decimals) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr std::array<const char*, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": missing header; missing columns: method, scenario, budget, seed, label, auroc, macro_auroc");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  std::array<int, kColumns.size()> index{};
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) {
      missing.emplace_back(kColumns[c]);
      index[c] = -1;
    } else {
      index[c] = static_cast<int>(it - header.begin());
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw SchemaError(source + ": missing columns: " + list);
  }
  std::vector<EvalRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) {
      throw SchemaError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()), line_no);
    }
    auto cell = [&](std::size_t c) -> const std::string& { return cells[static_cast<std::size_t>(index[c])]; };
    EvalRow r;
    r.method = cell(0);
    r.scenario = cell(1);
    if (cell(2) == "full") {
      r.budget = kFullBudget;
    } else {
      const double b = parse_number(cell(2), where);
      if (!(b >= 1) || b != std::floor(b)) throw SchemaError(where + ": bad budget '" + cell(2) + "'", line_no);
      r.budget = static_cast<long>(b);
    }
    const double seed = parse_number(cell(3), where);
    if (!(seed >= 0) || seed != std::floor(seed)) throw SchemaError(where + ": bad seed '" + cell(3) + "'", line_no);
    r.seed = static_cast<std::uint64_t>(seed);
    r.label = cell(4);
    if (cell(5) != "skipped" && !cell(5).empty()) r.auroc = parse_number(cell(5), where);
    r.macro_auroc = parse_number(cell(6), where);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_eval_csv(buf.str(), path.string());
}

std::map<MacroKey, double> seed_mean_macro(const std::vector<EvalRow>& rows) {
  // Every label row of one (method, scenario, budget, seed) repeats its macro value.
  std::map<MacroKey, std::map<std::uint64_t, double>> per_seed;
  for (const EvalRow& r : rows) per_seed[MacroKey{r.method, r.scenario, r.budget}][r.seed] = r.macro_auroc;
  std::map<MacroKey, double> out;
  for (const auto& [key, seeds] : per_seed) {
    double sum = 0.0;
    for (const auto& [seed, v] : seeds) sum += v;
    out[key] = sum / static_cast<double>(seeds.size());
  }
  return out;
}

std::optional<long> table_budget(const std::vector<EvalRow>& rows) {
  std::optional<long> probe;
  std::optional<long> any;
  for (const EvalRow& r : rows) {
    if (!any || budget_less(r.budget, *any)) any = r.budget;
    if (is_probe(r.method) && (!probe || budget_less(r.budget, *probe))) probe = r.budget;
  }
  return probe ? probe : any;
}

std::string render_strategy_table(const std::vector<EvalRow>& rows) {
  const std::optional<long> budget = table_budget(rows);
  const auto means = seed_mean_macro(rows);
  std::set<std::string> bases;
  for (const EvalRow& r : rows) bases.insert(base_method(r.method));
  std::vector<std::string> methods(bases.begin(), bases.end());
  std::stable_sort(methods.begin(), methods.end(),
                   [](const std::string& a, const std::string& b) { return method_rank(a) < method_rank(b); });

  auto cell = [&](const std::string& method, const std::string& scenario) {
    if (!budget) return std::string("-");
    const auto it = means.find(MacroKey{method, scenario, *budget});
    return it == means.end() ? std::string("-") : fixed(it->second, 2);
  };

  std::ostringstream out;
  out << "| Strategy | Modality | Fine-tuning | Linear Probing |\n";
  out << "|---|---|---|---|\n";
  for (const std::string& m : methods) {
    bool first = true;
    for (const std::string& s : ordered_scenarios(rows)) {
      out << "| " << (first ? display_name(m) : "") << " | " << s << " | " << cell(m, s) << " | "
          << cell(m + "-probe", s) << " |\n";
      first = false;
    }
  }
  if (budget) out << "\nLabel budget: " << budget_name(*budget) << "\n";
  return out.str();
}

std::string render_budget_plot(const std::vector<EvalRow>& rows, const std::string& scenario) {
  const auto means = seed_mean_macro(rows);
  std::vector<long> budgets;
  std::set<std::string> method_set;
  for (const auto& [key, v] : means) {
    if (key.scenario != scenario) continue;
    if (std::find(budgets.begin(), budgets.end(), key.budget) == budgets.end()) budgets.push_back(key.budget);
    method_set.insert(key.method);
  }
  std::sort(budgets.begin(), budgets.end(), budget_less);
  std::vector<std::string> methods(method_set.begin(), method_set.end());
  std::stable_sort(methods.begin(), methods.end(), [](const std::string& a, const std::string& b) {
    const int ra = method_rank(base_method(a)) * 2 + (is_probe(a) ? 1 : 0);
    const int rb = method_rank(base_method(b)) * 2 + (is_probe(b) ? 1 : 0);
    return ra < rb;
  });

  double lo = 1.0;
  double hi = 0.0;
  for (const auto& [key, v] : means) {
    if (key.scenario == scenario && std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (lo > hi) {
    lo = 0.5;
    hi = 1.0;
  }
  lo = std::floor(lo * 20.0 - 1e-9) / 20.0;
  hi = std::ceil(hi * 20.0 + 1e-9) / 20.0;
  if (hi - lo < 0.05) hi = lo + 0.05;

  constexpr double W = 480, H = 320, L = 60, R = 130, T = 30, B = 50;
  const double pw = W - L - R;
  const double ph = H - T - B;
  auto x_of = [&](std::size_t i) {
    return budgets.size() <= 1 ? L + pw / 2 : L + pw * static_cast<double>(i) / static_cast<double>(budgets.size() - 1);
  };
  auto y_of = [&](double v) { return T + ph * (hi - v) / (hi - lo); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fixed(L + pw / 2, 1) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
    << xml_escape(scenario) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
  for (double v = lo; v <= hi + 1e-9; v += 0.05) {
    const std::string y = fixed(y_of(v), 1);
    o << "<line x1=\"" << L - 4 << "\" y1=\"" << y << "\" x2=\"" << L + pw << "\" y2=\"" << y
      << "\" stroke=\"#dddddd\"/>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << y << "\" text-anchor=\"end\" dominant-baseline=\"middle\">"
      << fixed(v, 2) << "</text>\n";
  }
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    const std::string x = fixed(x_of(i), 1);
    o << "<text x=\"" << x << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << budget_name(budgets[i])
      << "</text>\n";
  }
  o << "<text x=\"" << fixed(L + pw / 2, 1) << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">labeled pairs</text>\n";
  o << "<text x=\"14\" y=\"" << fixed(T + ph / 2, 1) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << fixed(T + ph / 2, 1) << ")\">macro AUROC</text>\n";

  for (std::size_t m = 0; m < methods.size(); ++m) {
    const std::string color = kPalette[static_cast<std::size_t>(method_rank(base_method(methods[m]))) % kPalette.size()];
    const std::string dash = is_probe(methods[m]) ? " stroke-dasharray=\"5,3\"" : "";
    std::string points;
    std::vector<std::pair<std::string, std::string>> dots;
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      const auto it = means.find(MacroKey{methods[m], scenario, budgets[i]});
      if (it == means.end() || !std::isfinite(it->second)) continue;
      dots.emplace_back(fixed(x_of(i), 1), fixed(y_of(it->second), 1));
      points += (points.empty() ? "" : " ") + dots.back().first + "," + dots.back().second;
    }
    if (dots.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"" << dash << " points=\"" << points
        << "\"/>\n";
    }
    for (const auto& [x, y] : dots) {
      o << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 10 + 16.0 * static_cast<double>(m);
    o << "<line x1=\"" << L + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << dash << "/>\n";
    o << "<text x=\"" << L + pw + 34 << "\" y=\"" << ly << "\" dominant-baseline=\"middle\">"
      << xml_escape(is_probe(methods[m]) ? display_name(base_method(methods[m])) + " (probe)"
                                         : display_name(methods[m]))
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::filesystem::path> write_report(const std::vector<EvalRow>& rows,
                                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
    written.push_back(p);
  };
  emit(out_dir / "table.md", render_strategy_table(rows));
  for (const std::string& s : ordered_scenarios(rows)) {
    std::string name = s;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    emit(out_dir / (name + ".svg"), render_budget_plot(rows, s));
  }
  return written;
}

std::string code_version() { return MVMAE_CODE_VERSION; }

json to_json(const RunSummary& s) {
  return json{{"command", s.command},
              {"config_hash", config_hash(s.config)},
              {"code_version", code_version()},
              {"wall_seconds", s.wall_seconds},
              {"overrides", s.overrides},
              {"config", to_json(s.config)},
              {"results", s.results}};
}

void write_run_summary(const std::filesystem::path& path, const RunSummary& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(s).dump(2) << '\n';
}

}  // namespace mvmae
