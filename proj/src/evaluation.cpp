#include "slide/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "slide/format.hpp"

namespace slide {

double accuracy_fraction(const model& m, const dataset& data) {
  if (data.n() == 0) throw std::invalid_argument("accuracy: empty dataset");
  const std::vector<double> f = m.forward(data.X);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int pred = f[i] > 0.0 ? 1 : -1;
    if (pred == data.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

namespace {

// One flip unit: the columns to overwrite for each of the two states.
struct flip_unit {
  std::vector<std::pair<std::size_t, double>> state0;
  std::vector<std::pair<std::size_t, double>> state1;
};

std::vector<flip_unit> build_flip_plan(const dataset& data,
                                       const std::vector<std::string>& flip_columns) {
  if (flip_columns.empty()) throw std::invalid_argument("consistency: no columns to flip");
  std::vector<flip_unit> plan;
  std::map<std::string, std::string> used_sources;  // source -> requesting column
  for (const std::string& name : flip_columns) {
    std::size_t idx = data.schema.size();
    for (std::size_t j = 0; j < data.schema.size(); ++j)
      if (data.schema[j].name == name) {
        idx = j;
        break;
      }
    if (idx == data.schema.size())
      throw std::invalid_argument("consistency: unknown column \"" + name + "\"");

    const column_desc& col = data.schema[idx];
    auto [it, fresh] = used_sources.emplace(col.source, name);
    if (!fresh)
      throw std::invalid_argument("consistency: columns \"" + it->second + "\" and \"" + name +
                                  "\" flip the same underlying variable; list one of them");

    flip_unit unit;
    if (col.kind == column_kind::onehot_group) {
      std::vector<std::size_t> group;
      for (std::size_t j = 0; j < data.schema.size(); ++j)
        if (data.schema[j].kind == column_kind::onehot_group &&
            data.schema[j].source == col.source)
          group.push_back(j);
      if (group.size() != 2)
        throw std::invalid_argument("consistency: one-hot variable \"" + col.source + "\" has " +
                                    std::to_string(group.size()) +
                                    " categories; flipping needs exactly 2");
      unit.state0 = {{group[0], 1.0}, {group[1], 0.0}};
      unit.state1 = {{group[0], 0.0}, {group[1], 1.0}};
    } else {
      for (std::size_t i = 0; i < data.n(); ++i) {
        const double v = data.X.at(i, idx);
        if (v != 0.0 && v != 1.0)
          throw std::invalid_argument("consistency: column \"" + name +
                                      "\" is not binary (found value " + format_double(v) + ")");
      }
      unit.state0 = {{idx, 0.0}};
      unit.state1 = {{idx, 1.0}};
    }
    plan.push_back(std::move(unit));
  }
  return plan;
}

}  // namespace

double consistency(const model& m, const dataset& data,
                   const std::vector<std::string>& flip_columns) {
  if (data.n() == 0) throw std::invalid_argument("consistency: empty dataset");
  const std::vector<flip_unit> plan = build_flip_plan(data, flip_columns);

  std::vector<double> xa(data.d()), xb(data.d());
  std::size_t same = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double* row = data.X.row(i);
    std::copy(row, row + data.d(), xa.begin());
    std::copy(row, row + data.d(), xb.begin());
    for (const auto& unit : plan) {
      for (const auto& [j, v] : unit.state0) xa[j] = v;
      for (const auto& [j, v] : unit.state1) xb[j] = v;
    }
    const bool pa = m.forward_one(xa.data()) > 0.0;
    const bool pb = m.forward_one(xb.data()) > 0.0;
    if (pa == pb) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(data.n());
}

fairness_report evaluate(const model& m, const dataset& test, const constraint_spec& spec,
                         double tau, const std::vector<std::string>& flip_columns,
                         const adversary_config* adversary, double mnf_threshold) {
  if (test.n() == 0) throw std::invalid_argument("evaluate: empty dataset");
  spec.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("evaluate: tau must be > 0");

  scored_batch b;
  b.y = test.y;
  b.z = test.z;
  b.f = m.forward(test.X);
  if (spec.crit == criterion::uif) {
    if (!adversary)
      throw std::invalid_argument(
          "evaluate: the individual constraint needs an adversary configuration");
    adversary_config ac = *adversary;
    ac.epsilon = spec.epsilon;
    b.f_adv = m.forward(adversarial_batch(m, test, ac));
  }

  fairness_report out;
  std::size_t correct = 0, pos_total = 0, neg_total = 0, pos_ok = 0, neg_ok = 0;
  for (std::size_t i = 0; i < test.n(); ++i) {
    const int pred = b.f[i] > 0.0 ? 1 : -1;
    const bool ok = pred == test.y[i];
    correct += ok;
    if (test.y[i] == 1) {
      ++pos_total;
      pos_ok += ok;
    } else {
      ++neg_total;
      neg_ok += ok;
    }
  }
  out.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(test.n());
  if (pos_total > 0 && neg_total > 0) {
    out.balanced_accuracy_pct =
        50.0 * (static_cast<double>(pos_ok) / static_cast<double>(pos_total) +
                static_cast<double>(neg_ok) / static_cast<double>(neg_total));
  }

  out.constraint_indicator =
      empirical_constraint(b, spec, {surrogate_kind::indicator, tau});
  if (spec.crit == criterion::di || spec.crit == criterion::uif) {
    const mnf_report d = mnf_diagnostic(b, spec, tau, mnf_threshold);
    out.m_nf = d.m_nf;
    out.m_ratio = d.m_ratio;
    out.verdict = d.verdict;
  }
  if (!flip_columns.empty()) out.consistency_value = consistency(m, test, flip_columns);

  std::ostringstream meta;
  meta << "criterion=" << to_string(spec.crit) << " tau=" << tau << " n=" << test.n();
  if (!test.provenance.empty()) meta << " data=[" << test.provenance << "]";
  out.metadata = meta.str();
  return out;
}

std::string fairness_report_to_json(const fairness_report& r) {
  nlohmann::json j;
  j["accuracy_pct"] = r.accuracy_pct;
  j["balanced_accuracy_pct"] =
      r.balanced_accuracy_pct ? nlohmann::json(*r.balanced_accuracy_pct) : nlohmann::json();
  j["constraint_indicator"] = r.constraint_indicator;
  j["consistency"] = r.consistency_value ? nlohmann::json(*r.consistency_value) : nlohmann::json();
  j["m_nf"] = r.m_nf ? nlohmann::json(*r.m_nf) : nlohmann::json();
  if (r.m_ratio)
    j["m_ratio"] = std::isinf(*r.m_ratio) ? nlohmann::json("infinity") : nlohmann::json(*r.m_ratio);
  else
    j["m_ratio"] = nlohmann::json();
  j["diagnostic_verdict"] =
      r.verdict ? nlohmann::json(*r.verdict == mnf_verdict::keep ? "keep" : "abort")
                : nlohmann::json();
  j["metadata"] = r.metadata;
  return j.dump(2);
}

std::vector<pareto_point> pareto_sweep(const split_result& splits, const train_config& base,
                                       const std::vector<double>& lambda_grid) {
  if (lambda_grid.empty()) throw std::invalid_argument("pareto_sweep: empty lambda grid");
  std::vector<double> lambdas = lambda_grid;
  std::sort(lambdas.begin(), lambdas.end());

  std::vector<pareto_point> out;
  for (double lam : lambdas) {
    pareto_point pt;
    pt.lambda = lam;
    try {
      train_config cfg = base;
      cfg.lambda = lam;
      const std::vector<train_result> runs = train_restarts(splits.train, cfg);

      std::vector<double> accs, fairs;
      for (const auto& r : runs) {
        accs.push_back(accuracy_fraction(r.m, splits.test));
        scored_batch b;
        b.y = splits.test.y;
        b.z = splits.test.z;
        b.f = r.m.forward(splits.test.X);
        if (cfg.constraint.crit == criterion::uif) {
          adversary_config ac = cfg.adversary;
          ac.epsilon = cfg.constraint.epsilon;
          ac.seed = rng(cfg.seed).substream("pareto-eval").seed();
          b.f_adv = r.m.forward(adversarial_batch(r.m, splits.test, ac));
        }
        fairs.push_back(
            empirical_constraint(b, cfg.constraint, {surrogate_kind::indicator, cfg.surrogate.tau}));
      }
      auto mean_se = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double se = v.size() > 1
                              ? std::sqrt(var / static_cast<double>(v.size() - 1) /
                                          static_cast<double>(v.size()))
                              : 0.0;
        return std::pair<double, double>(mean, se);
      };
      std::tie(pt.acc_mean, pt.acc_se) = mean_se(accs);
      std::tie(pt.fairness_mean, pt.fairness_se) = mean_se(fairs);
    } catch (const std::exception& e) {
      pt.missing = true;
      pt.error = e.what();
    }
    out.push_back(std::move(pt));
  }
  mark_dominated(out);
  return out;
}

void mark_dominated(std::vector<pareto_point>& points) {
  for (auto& p : points) p.dominated = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].missing) continue;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (i == j || points[j].missing) continue;
      const bool no_worse = points[j].acc_mean >= points[i].acc_mean &&
                            points[j].fairness_mean <= points[i].fairness_mean;
      const bool strictly = points[j].acc_mean > points[i].acc_mean ||
                            points[j].fairness_mean < points[i].fairness_mean;
      if (no_worse && strictly) {
        points[i].dominated = true;
        break;
      }
    }
  }
}

void write_pareto_csv(const std::string& path, const std::vector<pareto_point>& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open pareto file for writing: " + path);
  out << "lambda,acc_mean,acc_se,fairness_mean,fairness_se,dominated\n";
  for (const auto& p : points) {
    out << format_double(p.lambda) << ',';
    if (p.missing) {
      out << ",,,,\n";
      continue;
    }
    out << format_double(p.acc_mean) << ',' << format_double(p.acc_se) << ','
        << format_double(p.fairness_mean) << ',' << format_double(p.fairness_se) << ','
        << (p.dominated ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing pareto file: " + path);
}

}  // namespace slide
