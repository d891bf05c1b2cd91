#include "llmmap/cartographer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace llmmap::map {

namespace {

constexpr const char* kModule = "cartographer";

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
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

std::string row_label(const MapRow& r) {
  switch (r.source) {
    case SeriesKind::umap_silhouette:
    case SeriesKind::umap_anisotropy: return std::string(to_string(r.category)) + " / umap";
    default: return std::string(to_string(r.category)) + " / " + std::string(to_string(r.source));
  }
}

const char* row_color(SeriesKind k) {
  switch (k) {
    case SeriesKind::umap_silhouette:
    case SeriesKind::umap_anisotropy: return "#4c78a8";
    case SeriesKind::saliency: return "#f58518";
    case SeriesKind::lesioning: return "#54a24b";
    case SeriesKind::patching: return "#e45756";
  }
  return "#888888";
}

nlohmann::json interval_json(const LayerInterval& iv) {
  return {{"start", iv.start},
          {"end", iv.end},
          {"source", to_string(iv.source)},
          {"concept", to_string(iv.category)},
          {"strength", iv.strength},
          {"flags", iv.flags}};
}

LayerInterval interval_from_json(const nlohmann::json& j) {
  return {j.at("start").get<int>(),
          j.at("end").get<int>(),
          parse_series_kind(j.at("source").get<std::string>()),
          parse_concept(j.at("concept").get<std::string>()),
          j.at("strength").get<double>(),
          j.at("flags").get<std::vector<std::string>>()};
}

nlohmann::json rows_json(const std::vector<MapRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json ivs = nlohmann::json::array();
    for (const auto& iv : r.intervals) ivs.push_back(interval_json(iv));
    out.push_back({{"concept", to_string(r.category)},
                   {"source", to_string(r.source)},
                   {"rule", r.rule},
                   {"intervals", ivs}});
  }
  return out;
}

std::vector<MapRow> rows_from_json(const nlohmann::json& j) {
  std::vector<MapRow> out;
  for (const auto& r : j) {
    MapRow row{parse_concept(r.at("concept").get<std::string>()), parse_series_kind(r.at("source").get<std::string>()),
               r.at("rule").get<std::string>(), {}};
    for (const auto& iv : r.at("intervals")) row.intervals.push_back(interval_from_json(iv));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

Series gaussian_smooth(const Series& series, double sigma) {
  if (series.empty()) throw Error(kModule, "cannot smooth an empty series");
  if (!(sigma > 0.0)) throw Error(kModule, "smoothing sigma must be positive");
  if (std::none_of(series.begin(), series.end(), [](const auto& v) { return v.has_value(); }))
    throw Error(kModule, "cannot smooth a series with no valid cells");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k)
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));

  const int n = static_cast<int>(series.size());
  Series out(series.size());
  for (int i = 0; i < n; ++i) {
    if (!series[static_cast<std::size_t>(i)]) continue;
    double num = 0.0, den = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      const int j = i + k;
      if (j < 0 || j >= n || !series[static_cast<std::size_t>(j)]) continue;
      const double w = kernel[static_cast<std::size_t>(k + radius)];
      num += w * *series[static_cast<std::size_t>(j)];
      den += w;
    }
    out[static_cast<std::size_t>(i)] = num / den;
  }
  return out;
}

std::vector<double> gaussian_smooth(const std::vector<double>& series, double sigma) {
  const auto s = gaussian_smooth(Series(series.begin(), series.end()), sigma);
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = *s[i];
  return out;
}

LayerInterval rising_window_interval(const Series& series, int window) {
  if (window < 1) throw Error(kModule, "window must be at least 1");
  const int n = static_cast<int>(series.size());
  if (n < window + 1)
    throw Error(kModule, "series of length " + std::to_string(n) + " is shorter than window + 1 = " +
                             std::to_string(window + 1));
  std::optional<int> best;
  double best_rate = 0.0;
  for (int i = 0; i + window < n; ++i) {
    bool complete = true;
    for (int j = i; j <= i + window; ++j) complete = complete && series[static_cast<std::size_t>(j)].has_value();
    if (!complete) continue;
    const double rate =
        (*series[static_cast<std::size_t>(i + window)] - *series[static_cast<std::size_t>(i)]) / window;
    if (!best || rate > best_rate) {
      best = i;
      best_rate = rate;
    }
  }
  if (!best) throw Error(kModule, "no window of " + std::to_string(window + 1) + " consecutive valid cells");
  LayerInterval out;
  out.start = *best;
  out.end = *best + window - 1;
  out.strength = best_rate;
  if (best_rate <= 0.0) out.flags.push_back(kFlagNoRise);
  return out;
}

std::vector<LayerInterval> percentile_intervals(const Series& series, double p, int min_len, int max_n) {
  if (min_len < 1 || max_n < 1) throw Error(kModule, "min_len and max_n must be at least 1");
  std::vector<double> valid;
  for (const auto& v : series)
    if (v) valid.push_back(*v);
  if (valid.size() < 4)
    throw Error(kModule, "percentile intervals need at least 4 valid cells, got " + std::to_string(valid.size()));
  const double threshold = percentile(valid, p);

  std::vector<LayerInterval> runs;
  const int n = static_cast<int>(series.size());
  for (int i = 0; i < n;) {
    const auto& v = series[static_cast<std::size_t>(i)];
    if (!v || !(*v > threshold)) {
      ++i;
      continue;
    }
    int j = i;
    double sum = 0.0;
    while (j < n && series[static_cast<std::size_t>(j)] && *series[static_cast<std::size_t>(j)] > threshold)
      sum += *series[static_cast<std::size_t>(j++)];
    if (j - i >= min_len) {
      LayerInterval iv;
      iv.start = i;
      iv.end = j - 1;
      iv.strength = sum / (j - i);
      runs.push_back(iv);
    }
    i = j;
  }
  std::stable_sort(runs.begin(), runs.end(),
                   [](const LayerInterval& a, const LayerInterval& b) { return a.strength > b.strength; });
  if (runs.size() > static_cast<std::size_t>(max_n)) runs.resize(static_cast<std::size_t>(max_n));
  std::sort(runs.begin(), runs.end(), [](const LayerInterval& a, const LayerInterval& b) { return a.start < b.start; });
  return runs;
}

LLMMap assemble_map(const std::vector<stats::MetricSeries>& series, const std::string& model_name, int n_layers,
                    const MapParams& params) {
  if (n_layers < 1) throw Error(kModule, "n_layers must be at least 1");
  std::map<std::pair<Concept, SeriesKind>, const stats::MetricSeries*> primary;
  for (const auto& s : series) {
    if (!s.variant.empty()) continue;
    if (s.per_layer.size() > static_cast<std::size_t>(n_layers) + 1)
      throw Error(kModule, std::string(to_string(s.analysis)) + " series for " + std::string(to_string(s.category)) +
                               " has " + std::to_string(s.per_layer.size()) + " cells, more than n_layers + 1");
    if (!primary.emplace(std::pair{s.category, s.analysis}, &s).second)
      throw Error(kModule, "duplicate " + std::string(to_string(s.analysis)) + " series for " +
                               std::string(to_string(s.category)));
  }

  LLMMap m;
  m.model_name = model_name;
  m.n_layers = n_layers;
  m.params = params;

  auto tag = [](std::vector<LayerInterval> ivs, Concept c, SeriesKind k) {
    for (auto& iv : ivs) {
      iv.category = c;
      iv.source = k;
    }
    return ivs;
  };

  for (Concept c : kAllConcepts) {
    const bool present = std::any_of(primary.begin(), primary.end(), [&](const auto& e) { return e.first.first == c; });
    if (!present) continue;
    const std::string cname(to_string(c));

    auto try_row = [&](SeriesKind k, const std::string& rule, std::vector<MapRow>& into) {
      const auto it = primary.find({c, k});
      if (it == primary.end()) {
        m.warnings.push_back(cname + ": no " + std::string(to_string(k)) + " series; row omitted");
        return;
      }
      try {
        const auto smooth = gaussian_smooth(it->second->means(), params.sigma);
        MapRow row{c, k, rule, {}};
        if (rule == "rising_window")
          row.intervals = tag({rising_window_interval(smooth, params.window)}, c, k);
        else
          row.intervals = tag(percentile_intervals(smooth, params.percentile, params.min_len, params.max_n), c, k);
        into.push_back(std::move(row));
      } catch (const Error& e) {
        m.warnings.push_back(cname + ": " + std::string(to_string(k)) + " row omitted: " + e.detail());
      }
    };

    if (c == Concept::age) {
      try_row(SeriesKind::umap_anisotropy, "rising_window", m.rows);
      if (primary.count({c, SeriesKind::umap_anisotropy}))
        try_row(SeriesKind::umap_anisotropy, "percentile", m.alternatives);
    } else if (c != Concept::dosages) {
      try_row(SeriesKind::umap_silhouette, "rising_window", m.rows);
    }
    for (SeriesKind k : {SeriesKind::saliency, SeriesKind::lesioning, SeriesKind::patching})
      try_row(k, "percentile", m.rows);
  }
  return m;
}

nlohmann::json to_json(const LLMMap& m) {
  return {{"schema", "llmmap.map/1"},
          {"model_name", m.model_name},
          {"n_layers", m.n_layers},
          {"params",
           {{"sigma", m.params.sigma},
            {"window", m.params.window},
            {"percentile", m.params.percentile},
            {"min_len", m.params.min_len},
            {"max_n", m.params.max_n}}},
          {"rows", rows_json(m.rows)},
          {"alternatives", rows_json(m.alternatives)},
          {"warnings", m.warnings}};
}

LLMMap map_from_json(const nlohmann::json& j) {
  LLMMap m;
  try {
    if (j.at("schema").get<std::string>() != "llmmap.map/1")
      throw Error(kModule, "unsupported map schema " + j.at("schema").dump());
    m.model_name = j.at("model_name").get<std::string>();
    m.n_layers = j.at("n_layers").get<int>();
    const auto& p = j.at("params");
    m.params = {p.at("sigma").get<double>(), p.at("window").get<int>(), p.at("percentile").get<double>(),
                p.at("min_len").get<int>(), p.at("max_n").get<int>()};
    m.rows = rows_from_json(j.at("rows"));
    m.alternatives = rows_from_json(j.at("alternatives"));
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed map document: ") + e.what());
  }
  return m;
}

std::string render_map(const LLMMap& m, const std::string& format) {
  if (format == "json") return to_json(m).dump(2) + "\n";
  if (format != "svg") throw Error(kModule, "unsupported map format '" + format + "' (expected svg or json)");

  constexpr double kLeft = 180, kRight = 30, kTop = 50, kRowH = 24, kPlotW = 720;
  const double span = std::max(m.n_layers, 1);
  const double layer_w = kPlotW / (span + 1);  // layers 0..n_layers each get one slot
  const double height = kTop + kRowH * static_cast<double>(m.rows.size()) + 50;
  const double width = kLeft + kPlotW + kRight;
  auto x_of = [&](double layer) { return kLeft + layer * layer_w; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", width) << "\" height=\""
     << fmt("%.0f", height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << fmt("%.1f", kLeft) << "\" y=\"20\" font-size=\"14\">" << xml_escape(m.model_name)
     << "</text>\n";

  const double axis_y = kTop + kRowH * static_cast<double>(m.rows.size()) + 10;
  os << "<line x1=\"" << fmt("%.1f", x_of(0)) << "\" y1=\"" << fmt("%.1f", axis_y) << "\" x2=\""
     << fmt("%.1f", x_of(span + 1)) << "\" y2=\"" << fmt("%.1f", axis_y) << "\" stroke=\"black\"/>\n";
  const int step = m.n_layers <= 20 ? 1 : 5;
  for (int l = 0; l <= m.n_layers; l += step) {
    const double x = x_of(l + 0.5);
    os << "<line x1=\"" << fmt("%.1f", x) << "\" y1=\"" << fmt("%.1f", axis_y) << "\" x2=\"" << fmt("%.1f", x)
       << "\" y2=\"" << fmt("%.1f", axis_y + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt("%.1f", x) << "\" y=\"" << fmt("%.1f", axis_y + 18) << "\" text-anchor=\"middle\">"
       << l << "</text>\n";
  }
  os << "<text x=\"" << fmt("%.1f", x_of((span + 1) / 2.0)) << "\" y=\"" << fmt("%.1f", axis_y + 36)
     << "\" text-anchor=\"middle\">layer</text>\n";

  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    const auto& row = m.rows[r];
    const double y = kTop + kRowH * static_cast<double>(r);
    os << "<text x=\"" << fmt("%.1f", kLeft - 8) << "\" y=\"" << fmt("%.1f", y + kRowH * 0.65)
       << "\" text-anchor=\"end\">" << xml_escape(row_label(row)) << "</text>\n";
    for (const auto& iv : row.intervals) {
      os << "<rect x=\"" << fmt("%.1f", x_of(iv.start)) << "\" y=\"" << fmt("%.1f", y + 3) << "\" width=\""
         << fmt("%.1f", (iv.end - iv.start + 1) * layer_w) << "\" height=\"" << fmt("%.1f", kRowH - 6)
         << "\" fill=\"" << row_color(row.source) << "\"><title>" << iv.start << "-" << iv.end
         << " strength " << fmt("%.6g", iv.strength) << "</title></rect>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace llmmap::map
