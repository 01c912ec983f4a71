#include "malpipe/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "malpipe/text.hpp"

namespace malpipe::dataio {

std::optional<std::size_t> CategoryTable::code(const std::string& v) const {
  auto it = std::lower_bound(values.begin(), values.end(), v);
  if (it == values.end() || *it != v) return std::nullopt;
  return static_cast<std::size_t>(it - values.begin());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

Cell parse_cell(const std::string& raw, const std::set<std::string>& missing_markers) {
  if (missing_markers.count(raw)) return Cell::none();
  if (auto v = parse_double(raw); v && std::isfinite(*v)) return Cell::num(*v);
  return Cell::str(raw);
}

std::string cell_as_string(const Cell& c) {
  return c.kind == Cell::Kind::Number ? format_double(c.number) : c.text;
}

}  // namespace

RawTable load_table(const std::filesystem::path& path,
                    const std::optional<std::string>& label_column,
                    const std::set<std::string>& missing_markers) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open table file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("table file has no header row: " + path.string());

  RawTable t;
  t.column_names = split_csv_line(line);
  t.columns.resize(t.column_names.size());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    auto cells = split_csv_line(line);
    if (cells.size() != t.column_names.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells under a " + std::to_string(t.column_names.size()) +
                      "-column header");
    for (std::size_t c = 0; c < cells.size(); ++c)
      t.columns[c].push_back(parse_cell(cells[c], missing_markers));
  }

  if (label_column) {
    auto it = std::find(t.column_names.begin(), t.column_names.end(), *label_column);
    if (it == t.column_names.end())
      throw DataError("label column '" + *label_column + "' absent from " + path.string());
    t.label_column = static_cast<std::size_t>(it - t.column_names.begin());
  }
  return t;
}

void write_table_csv(const RawTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write table file: " + path.string());
  for (std::size_t c = 0; c < table.column_names.size(); ++c) {
    if (c) out << ',';
    out << table.column_names[c];
  }
  out << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.cols(); ++c) {
      if (c) out << ',';
      const Cell& cell = table.columns[c][r];
      if (!cell.is_missing()) out << cell_as_string(cell);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::pair<RawTable, Encodings> encode_labels_and_categoricals(const RawTable& t) {
  RawTable out = t;
  Encodings enc;
  enc.tables.resize(t.cols());
  for (std::size_t c = 0; c < t.cols(); ++c) {
    const auto& col = t.columns[c];
    const bool is_label = t.label_column && *t.label_column == c;
    bool has_text = false;
    for (const Cell& cell : col) {
      if (cell.kind == Cell::Kind::Text) {
        has_text = true;
        break;
      }
      if (is_label && cell.is_missing())
        throw DataError("label column '" + t.column_names[c] + "' has a missing value");
    }
    if (!has_text && !is_label) continue;  // numeric feature column: unchanged
    // Labels are always encoded so the class-name table exists even for
    // numeric labels.
    CategoryTable table;
    {
      std::set<std::string> uniq;
      for (const Cell& cell : col) {
        if (cell.is_missing()) {
          if (is_label)
            throw DataError("label column '" + t.column_names[c] + "' has a missing value");
          continue;
        }
        uniq.insert(cell_as_string(cell));
      }
      table.values.assign(uniq.begin(), uniq.end());
    }
    for (std::size_t r = 0; r < col.size(); ++r) {
      const Cell& cell = col[r];
      if (cell.is_missing()) continue;
      auto code = table.code(cell_as_string(cell));
      out.columns[c][r] = Cell::num(static_cast<double>(*code));
    }
    enc.tables[c] = std::move(table);
  }
  return {std::move(out), std::move(enc)};
}

std::pair<RawTable, std::size_t> apply_encodings(const RawTable& t, const Encodings& enc) {
  if (enc.tables.size() != t.cols())
    throw ShapeError("apply_encodings: table has " + std::to_string(t.cols()) +
                     " columns, encodings cover " + std::to_string(enc.tables.size()));
  RawTable out = t;
  std::size_t unseen = 0;
  for (std::size_t c = 0; c < t.cols(); ++c) {
    if (!enc.tables[c]) continue;
    const CategoryTable& table = *enc.tables[c];
    for (std::size_t r = 0; r < t.columns[c].size(); ++r) {
      const Cell& cell = t.columns[c][r];
      if (cell.is_missing()) continue;
      if (auto code = table.code(cell_as_string(cell))) {
        out.columns[c][r] = Cell::num(static_cast<double>(*code));
      } else {
        out.columns[c][r] = Cell::num(static_cast<double>(table.values.size()));
        ++unseen;
      }
    }
  }
  return {std::move(out), unseen};
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::pair<RawTable, std::vector<double>> impute_median(const RawTable& t) {
  RawTable out = t;
  std::vector<double> medians(t.cols(), 0.0);
  for (std::size_t c = 0; c < t.cols(); ++c) {
    if (t.label_column && *t.label_column == c) continue;
    std::vector<double> present;
    for (const Cell& cell : t.columns[c])
      if (!cell.is_missing()) present.push_back(cell.number);
    if (present.empty())
      throw DataError("column '" + t.column_names[c] + "' is entirely missing");
    medians[c] = median_of(std::move(present));
    for (auto& cell : out.columns[c])
      if (cell.is_missing()) cell = Cell::num(medians[c]);
  }
  return {std::move(out), std::move(medians)};
}

RawTable impute_with(const RawTable& t, const std::vector<double>& medians) {
  if (medians.size() != t.cols())
    throw ShapeError("impute_with: " + std::to_string(medians.size()) + " medians for " +
                     std::to_string(t.cols()) + " columns");
  RawTable out = t;
  for (std::size_t c = 0; c < t.cols(); ++c) {
    if (t.label_column && *t.label_column == c) continue;
    for (auto& cell : out.columns[c])
      if (cell.is_missing()) cell = Cell::num(medians[c]);
  }
  return out;
}

std::vector<double> chi2_scores(const Matrix& x, const std::vector<std::uint32_t>& y,
                                std::size_t n_classes) {
  if (x.rows != y.size())
    throw ShapeError("chi2_scores: " + std::to_string(x.rows) + " rows vs " +
                     std::to_string(y.size()) + " labels");
  const std::size_t n = x.rows;
  std::vector<double> class_count(n_classes, 0.0);
  for (std::uint32_t c : y) class_count.at(c) += 1.0;

  std::vector<double> scores(x.cols, 0.0);
  std::vector<double> observed(n_classes);
  for (std::size_t j = 0; j < x.cols; ++j) {
    std::fill(observed.begin(), observed.end(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x(i, j);
      if (v < 0.0)
        throw DataError("chi2_scores: negative value at feature " + std::to_string(j) +
                        ", row " + std::to_string(i));
      observed[y[i]] += v;
      total += v;
    }
    if (total == 0.0) continue;
    double score = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double expected = total * class_count[c] / static_cast<double>(n);
      if (expected == 0.0) continue;
      const double d = observed[c] - expected;
      score += d * d / expected;
    }
    scores[j] = score;
  }
  return scores;
}

std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k) {
  if (k > scores.size())
    throw ConfigError("select_top_k: k=" + std::to_string(k) + " exceeds feature count " +
                      std::to_string(scores.size()));
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Matrix standardize(const Matrix& x, bool fit, StandardizeStats& stats) {
  if (fit) {
    stats.mean.assign(x.cols, 0.0);
    stats.stdev.assign(x.cols, 1.0);
    for (std::size_t j = 0; j < x.cols; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) m += x(i, j);
      m /= static_cast<double>(x.rows);
      double var = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double d = x(i, j) - m;
        var += d * d;
      }
      var /= static_cast<double>(x.rows);
      stats.mean[j] = m;
      const double sd = std::sqrt(var);
      stats.stdev[j] = sd > 0.0 ? sd : 1.0;
    }
  }
  if (stats.mean.size() != x.cols)
    throw ShapeError("standardize: stats cover " + std::to_string(stats.mean.size()) +
                     " features, input has " + std::to_string(x.cols));
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      out(i, j) = (x(i, j) - stats.mean[j]) / stats.stdev[j];
  return out;
}

std::vector<double> class_weights(const std::vector<std::uint32_t>& y, std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::uint32_t c : y) counts.at(c)++;
  std::vector<double> w(n_classes);
  const double n = static_cast<double>(y.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0)
      throw DataError("class_weights: class " + std::to_string(c) + " has no samples");
    w[c] = n / (static_cast<double>(n_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

FoldPlan stratified_folds(const std::vector<std::uint32_t>& y, std::uint32_t folds,
                          std::uint64_t seed) {
  if (folds < 2) throw ConfigError("stratified_folds: fold count must be at least 2");
  const std::uint32_t n_classes =
      y.empty() ? 0 : 1 + *std::max_element(y.begin(), y.end());

  FoldPlan plan;
  plan.fold_of.assign(y.size(), 0);
  plan.folds = folds;
  plan.seed = seed;

  Rng rng(seed);
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) members.push_back(i);
    rng.shuffle(members);
    for (std::size_t k = 0; k < members.size(); ++k)
      plan.fold_of[members[k]] = static_cast<std::uint32_t>(k % folds);
  }
  return plan;
}

FitResult fit_preprocess(const RawTable& t, std::size_t k) {
  if (!t.label_column) throw DataError("fit_preprocess: table has no designated label column");
  if (t.rows() == 0) throw DataError("fit_preprocess: table has no rows");

  auto [encoded, enc] = encode_labels_and_categoricals(t);
  auto [imputed, medians] = impute_median(encoded);

  const std::size_t label = *t.label_column;
  PreprocessModel m;
  m.label_column = t.column_names[label];
  if (!enc.tables[label])
    throw DataError("fit_preprocess: label column was not encoded");
  m.label_table = *enc.tables[label];

  // Feature-column views in original order, label excluded.
  std::vector<std::size_t> feat_cols;
  for (std::size_t c = 0; c < t.cols(); ++c)
    if (c != label) feat_cols.push_back(c);

  const std::size_t n = t.rows();
  Matrix x_full(n, feat_cols.size());
  std::vector<std::uint32_t> y(n);
  for (std::size_t j = 0; j < feat_cols.size(); ++j) {
    const std::size_t c = feat_cols[j];
    m.feature_columns.push_back(t.column_names[c]);
    m.encodings.push_back(enc.tables[c]);
    m.medians.push_back(medians[c]);
    for (std::size_t i = 0; i < n; ++i) x_full(i, j) = imputed.columns[c][i].number;
  }
  for (std::size_t i = 0; i < n; ++i)
    y[i] = static_cast<std::uint32_t>(imputed.columns[label][i].number);

  // Min-max copy to [0,1] feeds the chi2 scores; selection indices refer to
  // the raw (pre-scaling) columns.
  m.feature_min.assign(x_full.cols, 0.0);
  m.feature_max.assign(x_full.cols, 0.0);
  Matrix scaled(n, x_full.cols);
  for (std::size_t j = 0; j < x_full.cols; ++j) {
    double lo = x_full(0, j), hi = x_full(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, x_full(i, j));
      hi = std::max(hi, x_full(i, j));
    }
    m.feature_min[j] = lo;
    m.feature_max[j] = hi;
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i)
      scaled(i, j) = span > 0.0 ? (x_full(i, j) - lo) / span : 0.0;
  }

  const auto scores = chi2_scores(scaled, y, m.label_table.values.size());
  m.selected = select_top_k(scores, k);
  m.k = k;

  Matrix x_sel(n, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i) x_sel(i, j) = x_full(i, m.selected[j]);
  standardize(x_sel, true, m.stats);

  FitResult r;
  r.model = std::move(m);
  auto applied = apply_preprocess(r.model, t);
  r.train = std::move(applied.data);
  r.unseen_categories = applied.unseen_categories;
  return r;
}

ApplyResult apply_preprocess(const PreprocessModel& m, const RawTable& t) {
  // Match columns by name against the training schema.
  std::map<std::string, std::size_t> by_name;
  for (std::size_t c = 0; c < t.cols(); ++c) by_name[t.column_names[c]] = c;

  std::vector<std::string> missing_cols, extra_cols;
  std::vector<std::size_t> src(m.feature_columns.size());
  for (std::size_t j = 0; j < m.feature_columns.size(); ++j) {
    auto it = by_name.find(m.feature_columns[j]);
    if (it == by_name.end()) {
      missing_cols.push_back(m.feature_columns[j]);
    } else {
      src[j] = it->second;
      by_name.erase(it);
    }
  }
  auto label_it = by_name.find(m.label_column);
  const bool has_labels = label_it != by_name.end();
  std::size_t label_src = 0;
  if (has_labels) {
    label_src = label_it->second;
    by_name.erase(label_it);
  }
  for (const auto& [name, idx] : by_name) extra_cols.push_back(name);
  if (!missing_cols.empty() || !extra_cols.empty()) {
    std::string msg = "input schema mismatch;";
    if (!missing_cols.empty()) {
      msg += " missing columns:";
      for (const auto& s : missing_cols) msg += " " + s;
      msg += ";";
    }
    if (!extra_cols.empty()) {
      msg += " extra columns:";
      for (const auto& s : extra_cols) msg += " " + s;
    }
    throw DataError(msg);
  }

  const std::size_t n = t.rows();
  ApplyResult out;
  out.has_labels = has_labels;

  Matrix x_sel(n, m.k);
  for (std::size_t jj = 0; jj < m.selected.size(); ++jj) {
    const std::size_t j = m.selected[jj];
    const auto& col = t.columns[src[j]];
    const auto& enc = m.encodings[j];
    for (std::size_t i = 0; i < n; ++i) {
      const Cell& cell = col[i];
      double v;
      if (cell.is_missing()) {
        v = m.medians[j];
      } else if (enc) {
        if (auto code = enc->code(cell.kind == Cell::Kind::Number ? format_double(cell.number)
                                                                  : cell.text)) {
          v = static_cast<double>(*code);
        } else {
          v = static_cast<double>(enc->values.size());
          ++out.unseen_categories;
        }
      } else if (cell.kind == Cell::Kind::Number) {
        v = cell.number;
      } else {
        // Text in a numeric training column counts as an unseen category of
        // an empty table.
        v = 0.0;
        ++out.unseen_categories;
      }
      x_sel(i, jj) = v;
    }
  }
  // Unselected categorical columns still contribute to the unseen tally so
  // the warning footer reflects the whole row.
  for (std::size_t j = 0; j < m.feature_columns.size(); ++j) {
    if (std::binary_search(m.selected.begin(), m.selected.end(), j)) continue;
    const auto& enc = m.encodings[j];
    if (!enc) continue;
    const auto& col = t.columns[src[j]];
    for (std::size_t i = 0; i < n; ++i) {
      const Cell& cell = col[i];
      if (cell.is_missing()) continue;
      if (!enc->code(cell.kind == Cell::Kind::Number ? format_double(cell.number) : cell.text))
        ++out.unseen_categories;
    }
  }

  StandardizeStats stats = m.stats;
  out.data.x = standardize(x_sel, false, stats);
  for (std::size_t jj = 0; jj < m.selected.size(); ++jj)
    out.data.feature_names.push_back(m.feature_columns[m.selected[jj]]);
  out.data.class_names = m.label_table.values;

  if (has_labels) {
    out.data.y.resize(n);
    const auto& col = t.columns[label_src];
    for (std::size_t i = 0; i < n; ++i) {
      const Cell& cell = col[i];
      if (cell.is_missing())
        throw DataError("label column '" + m.label_column + "' has a missing value at row " +
                        std::to_string(i));
      auto code = m.label_table.code(cell.kind == Cell::Kind::Number
                                         ? format_double(cell.number)
                                         : cell.text);
      if (!code)
        throw DataError("unknown class label '" + cell_as_string(cell) + "' at row " +
                        std::to_string(i));
      out.data.y[i] = static_cast<std::uint32_t>(*code);
    }
  }
  return out;
}

Matrix simplex_codes(std::uint32_t classes, std::uint32_t dims) {
  if (classes < 1) throw ConfigError("simplex_codes: need at least one class");
  const std::uint32_t full = classes - 1;  // natural embedding dimension
  // Vertex c of the unit-circumradius regular simplex: normalize
  // e_c - (1/C) * ones inside the hyperplane orthogonal to ones, with
  // coordinates read off against the Helmert basis.
  Matrix codes(classes, dims);
  if (classes == 1) return codes;
  const double inv_c = 1.0 / static_cast<double>(classes);
  const double norm = std::sqrt(1.0 - inv_c);  // length of e_c - ones/C
  for (std::uint32_t c = 0; c < classes; ++c) {
    for (std::uint32_t j = 0; j < std::min(dims, full); ++j) {
      // Helmert row j (0-based): entries 1/sqrt((j+1)(j+2)) for i <= j,
      // -(j+1)/sqrt((j+1)(j+2)) at i = j+1, zero beyond.
      const double denom = std::sqrt(static_cast<double>(j + 1) * static_cast<double>(j + 2));
      double dot = 0.0;
      // h . (e_c - ones/C) = h[c] because Helmert rows are orthogonal to ones.
      if (c <= j)
        dot = 1.0 / denom;
      else if (c == j + 1)
        dot = -static_cast<double>(j + 1) / denom;
      codes(c, j) = dot / norm;
    }
  }
  if (dims < full) {
    // Truncation loses orthogonality; renormalize rows to keep unit scale.
    for (std::uint32_t c = 0; c < classes; ++c) {
      double s = 0.0;
      for (std::uint32_t j = 0; j < dims; ++j) s += codes(c, j) * codes(c, j);
      if (s > 0.0) {
        const double inv = 1.0 / std::sqrt(s);
        for (std::uint32_t j = 0; j < dims; ++j) codes(c, j) *= inv;
      }
    }
  }
  return codes;
}

RawTable make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("make_synthetic: need at least two classes");
  if (spec.counts.size() != spec.classes)
    throw ConfigError("make_synthetic: counts size " + std::to_string(spec.counts.size()) +
                      " does not match class count " + std::to_string(spec.classes));
  for (std::uint32_t c : spec.counts)
    if (c == 0) throw ConfigError("make_synthetic: every class needs at least one sample");
  if (spec.missing_rate < 0.0 || spec.missing_rate >= 1.0)
    throw ConfigError("make_synthetic: missing rate must be in [0, 1)");

  const std::size_t n =
      std::accumulate(spec.counts.begin(), spec.counts.end(), std::size_t{0});
  const std::size_t numeric = spec.informative + spec.noise;
  const Matrix codes = simplex_codes(spec.classes, spec.informative);

  // Zero-padded class names keep lexicographic encoding order equal to
  // generation order.
  std::size_t width = 1;
  for (std::size_t v = spec.classes - 1; v >= 10; v /= 10) ++width;
  std::vector<std::string> class_names(spec.classes);
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    std::string digits = std::to_string(c);
    class_names[c] = "class_" + std::string(width - digits.size(), '0') + digits;
  }

  static const char* kAlphabet[] = {"alpha", "beta", "gamma", "delta"};

  RawTable t;
  for (std::uint32_t j = 0; j < numeric; ++j) t.column_names.push_back("f" + std::to_string(j));
  for (std::uint32_t j = 0; j < spec.categorical; ++j)
    t.column_names.push_back("cat" + std::to_string(j));
  t.column_names.push_back("Class");
  t.columns.assign(t.column_names.size(), {});
  for (auto& col : t.columns) col.reserve(n);
  t.label_column = t.column_names.size() - 1;

  Rng rng(spec.seed);
  // Draw order is fixed: per class, per row, informative then noise dims;
  // then categorical columns; then the missing mask; then the row shuffle.
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (std::uint32_t k = 0; k < spec.counts[c]; ++k) {
      for (std::uint32_t j = 0; j < spec.informative; ++j)
        t.columns[j].push_back(Cell::num(spec.separation * codes(c, j) + rng.normal()));
      for (std::uint32_t j = spec.informative; j < numeric; ++j)
        t.columns[j].push_back(Cell::num(rng.normal()));
      for (std::uint32_t j = 0; j < spec.categorical; ++j)
        t.columns[numeric + j].push_back(Cell::str(kAlphabet[rng.below(4)]));
      t.columns.back().push_back(Cell::str(class_names[c]));
    }
  }
  if (spec.missing_rate > 0.0) {
    for (std::size_t j = 0; j + 1 < t.columns.size(); ++j)
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < spec.missing_rate) t.columns[j][i] = Cell::none();
  }
  const auto perm = rng.permutation(n);
  for (auto& col : t.columns) {
    std::vector<Cell> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = std::move(col[perm[i]]);
    col = std::move(shuffled);
  }
  return t;
}

}  // namespace malpipe::dataio
