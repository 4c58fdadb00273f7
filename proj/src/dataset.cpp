#include "slide/dataset.hpp"

#include "slide/format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace slide {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("cannot parse number \"" + s + "\" in " + context);
  return v;
}

bool field_missing(const std::string& s) { return s.empty() || s == "?"; }

}  // namespace

void dataset::validate() const {
  if (y.size() != X.rows || z.size() != X.rows)
    throw std::runtime_error("dataset: label/sensitive length mismatch");
  if (schema.size() != X.cols)
    throw std::runtime_error("dataset: schema size does not match column count");
  for (double v : X.a)
    if (!std::isfinite(v)) throw std::runtime_error("dataset: non-finite feature value");
  for (int v : y)
    if (v != -1 && v != 1) throw std::runtime_error("dataset: label outside {-1,+1}");
  for (int v : z)
    if (v != 0 && v != 1) throw std::runtime_error("dataset: sensitive value outside {0,1}");
  // one-hot groups (runs of onehot columns sharing a source) must sum to 1
  std::size_t j = 0;
  while (j < X.cols) {
    if (schema[j].kind != column_kind::onehot_group) {
      ++j;
      continue;
    }
    std::size_t k = j;
    while (k < X.cols && schema[k].kind == column_kind::onehot_group &&
           schema[k].source == schema[j].source)
      ++k;
    for (std::size_t i = 0; i < X.rows; ++i) {
      double s = 0.0;
      for (std::size_t c = j; c < k; ++c) s += X.at(i, c);
      if (s != 1.0)
        throw std::runtime_error("dataset: one-hot group \"" + schema[j].source +
                                 "\" does not sum to 1 at row " + std::to_string(i));
    }
    j = k;
  }
}

// ---- CSV parsing ------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto end_field = [&] { row.push_back(std::move(field)); field.clear(); };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < n) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          field.push_back('"');
          i += 2;
          continue;
        }
        in_quotes = false;
        ++i;
        continue;
      }
      field.push_back(c);
      ++i;
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw std::runtime_error("CSV: quote inside unquoted field near offset " +
                                   std::to_string(i));
        in_quotes = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        if (i + 1 < n && text[i + 1] == '\n') ++i;
        end_row();
        ++i;
        break;
      case '\n':
        end_row();
        ++i;
        break;
      default:
        field.push_back(c);
        ++i;
    }
  }
  if (in_quotes) throw std::runtime_error("CSV: unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

// ---- Schema -----------------------------------------------------------------

schema_config schema_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  schema_config cfg;
  cfg.name = j.value("name", std::string("unnamed"));
  cfg.label_column = j.at("label").at("column").get<std::string>();
  cfg.label_positive = j.at("label").at("positive").get<std::string>();
  if (j.at("label").contains("negatives"))
    cfg.label_negatives = j.at("label").at("negatives").get<std::vector<std::string>>();
  cfg.sensitive_column = j.at("sensitive").at("column").get<std::string>();
  cfg.sensitive_rule = j.at("sensitive").at("rule").get<std::string>();
  for (const auto& f : j.at("features")) {
    schema_column col;
    col.name = f.at("column").get<std::string>();
    col.kind = f.at("kind").get<std::string>();
    if (col.kind != "continuous" && col.kind != "categorical")
      throw std::runtime_error("schema: unknown column kind \"" + col.kind + "\" for " +
                               col.name);
    if (f.contains("categories"))
      col.categories = f.at("categories").get<std::vector<std::string>>();
    cfg.features.push_back(std::move(col));
  }
  if (cfg.features.empty()) throw std::runtime_error("schema: no feature columns declared");
  return cfg;
}

schema_config schema_from_json_file(const std::string& path) {
  return schema_from_json(read_file(path));
}

dataset load_csv(const std::string& path, const schema_config& schema) {
  auto cells = parse_csv(read_file(path));
  if (cells.empty()) throw std::runtime_error("empty CSV file: " + path);
  const auto& header = cells.front();
  std::map<std::string, std::size_t> col_index;
  for (std::size_t k = 0; k < header.size(); ++k) col_index[header[k]] = k;

  auto need = [&](const std::string& name) -> std::size_t {
    auto it = col_index.find(name);
    if (it == col_index.end())
      throw std::runtime_error("CSV is missing required column \"" + name + "\"");
    return it->second;
  };

  std::size_t label_at = need(schema.label_column);
  std::size_t sens_at = need(schema.sensitive_column);
  std::vector<std::size_t> feat_at;
  for (const auto& f : schema.features) {
    if (f.name == schema.label_column)
      throw std::runtime_error("schema: label column \"" + f.name +
                               "\" cannot also be a feature");
    feat_at.push_back(need(f.name));
  }

  // collect usable rows (drop rows with missing values in any used column)
  std::vector<std::vector<std::string>> kept;
  std::size_t dropped = 0;
  for (std::size_t r = 1; r < cells.size(); ++r) {
    const auto& row = cells[r];
    if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
    if (row.size() != header.size())
      throw std::runtime_error("CSV row " + std::to_string(r) + " has " +
                               std::to_string(row.size()) + " fields, expected " +
                               std::to_string(header.size()));
    bool missing = field_missing(row[label_at]) || field_missing(row[sens_at]);
    for (std::size_t k = 0; k < feat_at.size() && !missing; ++k)
      missing = field_missing(row[feat_at[k]]);
    if (missing) {
      ++dropped;
      continue;
    }
    kept.push_back(row);
  }
  if (kept.empty()) throw std::runtime_error("no usable rows in " + path);

  // sensitive rule
  std::vector<int> zvals(kept.size());
  if (schema.sensitive_rule.rfind("equals:", 0) == 0) {
    std::string target = schema.sensitive_rule.substr(7);
    for (std::size_t i = 0; i < kept.size(); ++i)
      zvals[i] = kept[i][sens_at] == target ? 1 : 0;
  } else if (schema.sensitive_rule == "ge_median") {
    std::vector<double> vals(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i)
      vals[i] = parse_double(kept[i][sens_at], "sensitive column " + schema.sensitive_column);
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted.size() % 2 == 1
                        ? sorted[sorted.size() / 2]
                        : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    for (std::size_t i = 0; i < kept.size(); ++i) zvals[i] = vals[i] >= median ? 1 : 0;
  } else {
    throw std::runtime_error("schema: unknown sensitive rule \"" + schema.sensitive_rule +
                             "\"");
  }

  // labels
  std::vector<int> yvals(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::string& v = kept[i][label_at];
    if (v == schema.label_positive) {
      yvals[i] = 1;
    } else if (!schema.label_negatives.empty()) {
      if (std::find(schema.label_negatives.begin(), schema.label_negatives.end(), v) ==
          schema.label_negatives.end())
        throw std::runtime_error("unmapped label value \"" + v + "\" in " + path);
      yvals[i] = -1;
    } else {
      yvals[i] = -1;
    }
  }

  // categorical category sets (declared or collected sorted-unique)
  std::vector<std::vector<std::string>> cats(schema.features.size());
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    if (schema.features[f].kind != "categorical") continue;
    if (!schema.features[f].categories.empty()) {
      cats[f] = schema.features[f].categories;
    } else {
      std::set<std::string> uniq;
      for (const auto& row : kept) uniq.insert(row[feat_at[f]]);
      cats[f].assign(uniq.begin(), uniq.end());
    }
  }

  // expanded schema
  dataset out;
  std::vector<std::pair<std::size_t, std::size_t>> layout;  // (feature, category or 0)
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    if (schema.features[f].kind == "continuous") {
      out.schema.push_back({schema.features[f].name, column_kind::continuous,
                            schema.features[f].name});
      layout.emplace_back(f, 0);
    } else {
      for (std::size_t c = 0; c < cats[f].size(); ++c) {
        out.schema.push_back({schema.features[f].name + "=" + cats[f][c],
                              column_kind::onehot_group, schema.features[f].name});
        layout.emplace_back(f, c);
      }
    }
  }

  out.X = matrix(kept.size(), out.schema.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    double* xr = out.X.row(i);
    for (std::size_t c = 0; c < layout.size(); ++c) {
      auto [f, cat] = layout[c];
      const std::string& raw = kept[i][feat_at[f]];
      if (schema.features[f].kind == "continuous") {
        xr[c] = parse_double(raw, "column " + schema.features[f].name);
      } else {
        if (std::find(cats[f].begin(), cats[f].end(), raw) == cats[f].end())
          throw std::runtime_error("value \"" + raw + "\" not among declared categories of " +
                                   schema.features[f].name);
        xr[c] = raw == cats[f][cat] ? 1.0 : 0.0;
      }
    }
  }
  out.y = std::move(yvals);
  out.z = std::move(zvals);
  out.provenance = "csv:" + schema.name + " rows=" + std::to_string(kept.size()) +
                   " dropped=" + std::to_string(dropped);
  out.validate();
  return out;
}

// ---- Splitting --------------------------------------------------------------

split_result split(const dataset& data, const split_spec& spec) {
  std::size_t n = data.n();
  if (n < 10) throw std::invalid_argument("split: need at least 10 rows");
  double rsum = spec.ratios[0] + spec.ratios[1] + spec.ratios[2];
  if (std::abs(rsum - 1.0) > 1e-12)
    throw std::invalid_argument("split: ratios must sum to 1");
  std::size_t n_val = static_cast<std::size_t>(spec.ratios[1] * static_cast<double>(n));
  std::size_t n_test = static_cast<std::size_t>(spec.ratios[2] * static_cast<double>(n));
  std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng g = rng(spec.seed).substream("split");
  g.shuffle(idx);

  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> part(idx.begin() + from, idx.begin() + from + count);
    dataset d;
    d.X = matrix(count, data.d());
    d.y.resize(count);
    d.z.resize(count);
    d.schema = data.schema;
    for (std::size_t i = 0; i < count; ++i) {
      const double* src = data.X.row(part[i]);
      std::copy(src, src + data.d(), d.X.row(i));
      d.y[i] = data.y[part[i]];
      d.z[i] = data.z[part[i]];
    }
    return std::pair(std::move(d), std::move(part));
  };

  split_result out;
  auto [tr, tri] = take(0, n_train);
  auto [va, vai] = take(n_train, n_val);
  auto [te, tei] = take(n_train + n_val, n_test);
  out.train = std::move(tr);
  out.val = std::move(va);
  out.test = std::move(te);
  out.train_idx = std::move(tri);
  out.val_idx = std::move(vai);
  out.test_idx = std::move(tei);
  out.train.provenance = data.provenance + " split=train";
  out.val.provenance = data.provenance + " split=val";
  out.test.provenance = data.provenance + " split=test";
  return out;
}

// ---- Standardization --------------------------------------------------------

standardizer standardize_fit(const dataset& train) {
  standardizer s;
  std::size_t d = train.d();
  s.mean.assign(d, 0.0);
  s.sd.assign(d, 1.0);
  s.constant_column.assign(d, false);
  s.provenance = "train";
  std::size_t n = train.n();
  if (n == 0) throw std::invalid_argument("standardize_fit: empty dataset");
  for (std::size_t j = 0; j < d; ++j) {
    if (train.schema[j].kind != column_kind::continuous) continue;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += train.X.at(i, j);
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double c = train.X.at(i, j) - m;
      ss += c * c;
    }
    double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean[j] = m;
    if (sd < 1e-8) {
      s.constant_column[j] = true;
      s.sd[j] = 1e-8;
      std::cerr << "warning: column \"" << train.schema[j].name
                << "\" is constant in the training split; standardized to zeros\n";
    } else {
      s.sd[j] = sd;
    }
  }
  return s;
}

void standardize_apply(const standardizer& s, dataset& data) {
  if (s.provenance != "train")
    throw std::runtime_error("standardize_apply: parameters were not fit on a train split");
  if (s.mean.size() != data.d())
    throw std::invalid_argument("standardize_apply: dimension mismatch");
  for (std::size_t j = 0; j < data.d(); ++j) {
    if (data.schema[j].kind != column_kind::continuous) continue;
    for (std::size_t i = 0; i < data.n(); ++i)
      data.X.at(i, j) = (data.X.at(i, j) - s.mean[j]) / s.sd[j];
  }
}

// ---- Synthetic generators ---------------------------------------------------

synth_kind synth_kind_from_string(const std::string& s) {
  if (s == "gaussian_mixture_2d") return synth_kind::gaussian_mixture_2d;
  if (s == "two_moon") return synth_kind::two_moon;
  if (s == "gaussian_1d_groups") return synth_kind::gaussian_1d_groups;
  if (s == "convergence_sim") return synth_kind::convergence_sim;
  throw std::invalid_argument("unknown synthetic dataset kind: \"" + s + "\"");
}

const char* to_string(synth_kind k) {
  switch (k) {
    case synth_kind::gaussian_mixture_2d: return "gaussian_mixture_2d";
    case synth_kind::two_moon: return "two_moon";
    case synth_kind::gaussian_1d_groups: return "gaussian_1d_groups";
    case synth_kind::convergence_sim: return "convergence_sim";
  }
  throw std::logic_error("to_string(synth_kind): unreachable");
}

dataset synth(synth_kind kind, std::size_t n, std::uint64_t seed, const synth_params& p) {
  if (n < 1) throw std::invalid_argument("synth: n must be >= 1");
  rng g = rng(seed).substream(to_string(kind));
  dataset out;
  std::ostringstream prov;
  prov << "synth:" << to_string(kind) << " n=" << n << " seed=" << seed;

  switch (kind) {
    case synth_kind::gaussian_mixture_2d: {
      out.X = matrix(n, 2);
      out.y.resize(n);
      out.z.assign(n, 0);
      double sd = std::sqrt(p.gm_var);
      for (std::size_t i = 0; i < n; ++i) {
        bool cls1 = g.uniform01() < 0.5;
        const auto& mu = cls1 ? p.gm_mean1 : p.gm_mean0;
        out.X.at(i, 0) = g.normal(mu[0], sd);
        out.X.at(i, 1) = g.normal(mu[1], sd);
        out.y[i] = cls1 ? 1 : -1;
      }
      out.schema = {{"x1", column_kind::continuous, "x1"},
                    {"x2", column_kind::continuous, "x2"}};
      prov << " var=" << p.gm_var << " (no sensitive attribute; z=0)";
      break;
    }
    case synth_kind::two_moon: {
      out.X = matrix(n, 2);
      out.y.resize(n);
      out.z.assign(n, 0);
      constexpr double pi = 3.14159265358979323846;
      double R = p.moon_radius;
      for (std::size_t i = 0; i < n; ++i) {
        bool inner = g.uniform01() < 0.5;
        double t = g.uniform(0.0, pi);
        double x, y;
        if (!inner) {
          x = R * std::cos(t);
          y = R * std::sin(t);
        } else {
          x = R - R * std::cos(t);
          y = p.moon_offset - R * std::sin(t);
        }
        out.X.at(i, 0) = x + g.normal(0.0, p.moon_noise_sd);
        out.X.at(i, 1) = y + g.normal(0.0, p.moon_noise_sd);
        out.y[i] = inner ? 1 : -1;
      }
      out.schema = {{"x1", column_kind::continuous, "x1"},
                    {"x2", column_kind::continuous, "x2"}};
      prov << " noise_sd=" << p.moon_noise_sd << " radius=" << R
           << " offset=" << p.moon_offset << " (no sensitive attribute; z=0)";
      break;
    }
    case synth_kind::gaussian_1d_groups: {
      out.X = matrix(n, 1);
      out.y.resize(n);
      out.z.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        bool hi = g.uniform01() < 0.5;  // z in {-1,+1} -> sensitive {0,1}
        double zval = hi ? 1.0 : -1.0;
        double x = g.normal(zval, 1.0);
        out.X.at(i, 0) = x;
        out.z[i] = hi ? 1 : 0;
        int label = x > p.g1d_label_threshold ? 1 : -1;
        if (p.g1d_label_noise > 0.0 && g.uniform01() < p.g1d_label_noise) label = -label;
        out.y[i] = label;
      }
      out.schema = {{"x", column_kind::continuous, "x"}};
      prov << " label_threshold=" << p.g1d_label_threshold
           << " label_noise=" << p.g1d_label_noise;
      break;
    }
    case synth_kind::convergence_sim: {
      out.X = matrix(n, 1);
      out.y.resize(n);
      out.z.resize(n);
      std::vector<double> priors(p.sim_priors.begin(), p.sim_priors.end());
      double psum = priors[0] + priors[1] + priors[2] + priors[3];
      if (std::abs(psum - 1.0) > 1e-12)
        throw std::invalid_argument("convergence_sim: cell priors must sum to 1");
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t cell = g.categorical(priors);  // (s,y) = (0,0),(0,1),(1,0),(1,1)
        out.z[i] = cell >= 2 ? 1 : 0;
        out.y[i] = (cell % 2 == 1) ? 1 : -1;
        out.X.at(i, 0) = g.normal(p.sim_means[cell], std::sqrt(p.sim_vars[cell]));
      }
      out.schema = {{"x", column_kind::continuous, "x"}};
      prov << " priors=[" << priors[0] << "," << priors[1] << "," << priors[2] << ","
           << priors[3] << "] second-moment-parameter=variance";
      break;
    }
  }
  out.provenance = prov.str();
  out.validate();
  return out;
}

// ---- Dumps ------------------------------------------------------------------

void dump_csv(const dataset& data, const std::string& path) {
  std::ofstream outf(path, std::ios::binary);
  if (!outf) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t j = 0; j < data.d(); ++j) outf << data.schema[j].name << ",";
  outf << "y,z\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.d(); ++j) outf << format_double(data.X.at(i, j)) << ",";
    outf << data.y[i] << "," << data.z[i] << "\n";
  }
}

dataset load_dumped_csv(const std::string& path) {
  auto cells = parse_csv(read_file(path));
  if (cells.size() < 2) throw std::runtime_error("dumped CSV has no data rows: " + path);
  const auto& header = cells.front();
  if (header.size() < 3 || header[header.size() - 2] != "y" || header.back() != "z")
    throw std::runtime_error("dumped CSV must end with y,z columns: " + path);
  std::size_t d = header.size() - 2;
  dataset out;
  out.X = matrix(cells.size() - 1, d);
  out.y.resize(cells.size() - 1);
  out.z.resize(cells.size() - 1);
  for (std::size_t j = 0; j < d; ++j)
    out.schema.push_back({header[j], column_kind::continuous, header[j]});
  for (std::size_t r = 1; r < cells.size(); ++r) {
    if (cells[r].size() != header.size())
      throw std::runtime_error("dumped CSV row width mismatch at row " + std::to_string(r));
    for (std::size_t j = 0; j < d; ++j)
      out.X.at(r - 1, j) = parse_double(cells[r][j], "dumped column " + header[j]);
    out.y[r - 1] = static_cast<int>(parse_double(cells[r][d], "y"));
    out.z[r - 1] = static_cast<int>(parse_double(cells[r][d + 1], "z"));
  }
  out.provenance = "csv-dump:" + path;
  out.validate();
  return out;
}

std::string data_dir() {
  const char* env = std::getenv("SLIDE_DATA_DIR");
  return env && *env ? std::string(env) : std::string("data");
}

std::optional<std::string> find_data_file(const std::string& filename) {
  std::filesystem::path p = std::filesystem::path(data_dir()) / filename;
  if (std::filesystem::exists(p)) return p.string();
  return std::nullopt;
}

}  // namespace slide
