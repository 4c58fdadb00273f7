#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slide/matrix.hpp"
#include "slide/rng.hpp"

namespace slide {

// Column roles in the design matrix. Columns belonging to the same one-hot
// group share a group name and sum to 1 within each row.
enum class column_kind { continuous, onehot_group };

struct column_desc {
  std::string name;          // expanded column name, e.g. "workclass=Private"
  column_kind kind = column_kind::continuous;
  std::string source;        // raw CSV column (or generator field) this came from
};

struct dataset {
  matrix X;
  std::vector<int> y;  // labels in {-1, +1}
  std::vector<int> z;  // sensitive group in {0, 1}
  std::vector<column_desc> schema;
  std::string provenance;

  std::size_t n() const { return X.rows; }
  std::size_t d() const { return X.cols; }
  void validate() const;  // finiteness, label/group ranges, one-hot sums
};

// ---- CSV schema-driven loading ----------------------------------------------

// Declarative description of a raw CSV: which column is the label, which is
// the sensitive attribute, and how each feature column is encoded.
struct schema_column {
  std::string name;
  std::string kind;  // "continuous" | "categorical"
  std::vector<std::string> categories;  // optional; sorted-unique from data if empty
};

struct schema_config {
  std::vector<schema_column> features;
  std::string label_column;
  std::string label_positive;            // raw value mapped to +1; others -> -1
  std::vector<std::string> label_negatives;  // optional strict list for validation
  std::string sensitive_column;
  std::string sensitive_rule;  // "equals:<value>" -> z=1, or "ge_median" (numeric)
  std::string name;            // dataset tag for provenance
};

schema_config schema_from_json_file(const std::string& path);
schema_config schema_from_json(const std::string& text);

// Parses an RFC-4180 CSV (header row required, quoted fields, embedded commas,
// doubled quotes). Rows with missing values in used columns are dropped and
// counted. The result is unstandardized; standardization is fit on the train
// split only (see standardizer).
dataset load_csv(const std::string& path, const schema_config& schema);

// Raw CSV cell table, exposed for tests and for the data subcommand.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// ---- Splitting --------------------------------------------------------------

struct split_spec {
  std::array<double, 3> ratios{0.6, 0.2, 0.2};  // train/val/test, must sum to 1
  std::uint64_t seed = 0;
};

struct split_result {
  dataset train, val, test;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
};

// Seed-reproducible disjoint exhaustive split; val/test get floor(ratio*n)
// rows each and the remainder goes to train.
split_result split(const dataset& data, const split_spec& spec);

// ---- Standardization (leakage-controlled) -----------------------------------

struct standardizer {
  std::vector<double> mean, sd;
  std::string provenance;  // must be "train" when applied to val/test
  std::vector<bool> constant_column;
};

// Fit on continuous columns only; sd gets a 1e-8 floor and the column is
// flagged when (numerically) constant. One-hot columns pass through unscaled.
standardizer standardize_fit(const dataset& train);
void standardize_apply(const standardizer& s, dataset& data);

// ---- Synthetic generators ---------------------------------------------------

struct synth_params {
  // gaussian_mixture_2d: class-conditional means and shared isotropic variance
  std::array<double, 2> gm_mean0{0.5, 4.5};
  std::array<double, 2> gm_mean1{2.0, 0.5};
  double gm_var = 2.0;

  // two_moon
  double moon_noise_sd = 0.1;
  double moon_radius = 1.0;
  double moon_offset = 0.5;

  // gaussian_1d_groups: X | Z=z ~ N(z, 1) with z in {-1, +1} -> sensitive {0,1};
  // labels y = sign(x - label_threshold) flipped with label_noise probability
  double g1d_label_threshold = 0.0;
  double g1d_label_noise = 0.0;

  // convergence_sim: four (s, y) cells with Gaussian X | S=s, Y=y.
  // Second moment parameter is a variance. Cell order: (0,0), (0,1), (1,0), (1,1).
  std::array<double, 4> sim_means{-1.0, 1.5, -0.5, 2.5};
  std::array<double, 4> sim_vars{1.5, 0.5, 1.0, 1.5};
  std::array<double, 4> sim_priors{0.25, 0.25, 0.25, 0.25};
};

enum class synth_kind { gaussian_mixture_2d, two_moon, gaussian_1d_groups, convergence_sim };

synth_kind synth_kind_from_string(const std::string& s);
const char* to_string(synth_kind k);

dataset synth(synth_kind kind, std::size_t n, std::uint64_t seed,
              const synth_params& params = {});

// ---- Dumps ------------------------------------------------------------------

// CSV round-trip with shortest-round-trip doubles: dump then load is bit-exact.
void dump_csv(const dataset& data, const std::string& path);
dataset load_dumped_csv(const std::string& path);

// Resolves a data file against SLIDE_DATA_DIR (unset -> "data" under cwd).
std::string data_dir();
std::optional<std::string> find_data_file(const std::string& filename);

}  // namespace slide
