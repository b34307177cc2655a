#pragma once

// Data pipeline: schema-driven parsing of delimited text files, vocabulary
// construction with a frequency threshold, z-score normalization, label
// encoding, train/validation splitting and mini-batching.
//
// All statistics (vocabulary counts, mean, std) come from training rows only.
// Unknown or rare categorical values share index 0 per field.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "non/rng.hpp"
#include "json.hpp"

namespace non {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

enum class FieldKind { Categorical, Numerical };

struct FieldSpec {
  std::string name;
  FieldKind kind;
};

struct DatasetSchema {
  char delimiter = ',';
  std::string label;
  std::vector<FieldSpec> fields;  // non-label fields, file order

  std::size_t num_fields() const { return fields.size(); }

  std::vector<std::string> field_names(FieldKind kind) const {
    std::vector<std::string> out;
    for (const auto& f : fields)
      if (f.kind == kind) out.push_back(f.name);
    return out;
  }

  std::size_t count(FieldKind kind) const {
    std::size_t n = 0;
    for (const auto& f : fields)
      if (f.kind == kind) ++n;
    return n;
  }

  // Canonical single-line rendering, the basis of the schema hash.
  std::string canonical() const {
    std::ostringstream os;
    os << "delimiter=" << delimiter << ";label=" << label;
    for (const auto& f : fields) {
      os << ";" << f.name << ":"
         << (f.kind == FieldKind::Categorical ? "categorical" : "numerical");
    }
    return os.str();
  }
};

// Schema file: one directive per line, '#' comments allowed.
//   delimiter <char>|comma|tab
//   label <column name>
//   field <column name> categorical|numerical
inline DatasetSchema parse_schema(std::istream& in, const std::string& origin) {
  DatasetSchema schema;
  bool saw_delim = false, saw_label = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == '#') continue;
    auto fail = [&](const std::string& msg) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (tok == "delimiter") {
      std::string d;
      if (!(ls >> d)) fail("delimiter directive needs a value");
      if (d == "comma")
        schema.delimiter = ',';
      else if (d == "tab")
        schema.delimiter = '\t';
      else if (d.size() == 1)
        schema.delimiter = d[0];
      else
        fail("delimiter must be a single character, 'comma' or 'tab'");
      saw_delim = true;
    } else if (tok == "label") {
      if (!(ls >> schema.label)) fail("label directive needs a column name");
      saw_label = true;
    } else if (tok == "field") {
      FieldSpec f;
      std::string kind;
      if (!(ls >> f.name >> kind)) fail("field directive needs <name> <kind>");
      if (kind == "categorical")
        f.kind = FieldKind::Categorical;
      else if (kind == "numerical")
        f.kind = FieldKind::Numerical;
      else
        fail("unknown field kind '" + kind + "'");
      schema.fields.push_back(std::move(f));
    } else {
      fail("unknown directive '" + tok + "'");
    }
  }
  if (!saw_delim) throw ConfigError(origin + ": missing delimiter directive");
  if (!saw_label) throw ConfigError(origin + ": missing label directive");
  if (schema.fields.empty()) throw ConfigError(origin + ": no fields declared");
  std::vector<std::string> names{schema.label};
  for (const auto& f : schema.fields) names.push_back(f.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw ConfigError(origin + ": duplicate column names in schema");
  }
  return schema;
}

inline DatasetSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file: " + path);
  return parse_schema(in, path);
}

// Raw delimited table: header row plus string cells; empty cell = missing.
struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // file line of each row, 1-based
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

}  // namespace detail

inline RawTable read_delimited(std::istream& in, char delim, const std::string& origin) {
  RawTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    auto cells = detail::split_line(line, delim);
    if (lineno == 1) {
      table.columns = std::move(cells);
      continue;
    }
    if (cells.size() != table.columns.size()) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(table.columns.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(lineno);
  }
  if (table.columns.empty()) throw DataError(origin + ": missing header row");
  return table;
}

inline RawTable read_delimited_file(const std::string& path, char delim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path);
  return read_delimited(in, delim, path);
}

// Maps each schema field (and the label) to its column position in the file.
struct ColumnMap {
  std::size_t label = 0;
  std::vector<std::size_t> field;  // aligned with schema.fields
};

inline ColumnMap map_columns(const DatasetSchema& schema, const RawTable& table) {
  ColumnMap cm;
  auto find = [&](const std::string& name) {
    auto it = std::find(table.columns.begin(), table.columns.end(), name);
    if (it == table.columns.end()) {
      throw DataError("column '" + name + "' declared in schema not found in data header");
    }
    return static_cast<std::size_t>(it - table.columns.begin());
  };
  cm.label = find(schema.label);
  for (const auto& f : schema.fields) cm.field.push_back(find(f.name));
  return cm;
}

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocabulary {
  static constexpr const char* kUnknown = "<unknown>";

  std::int64_t min_frequency = 1;
  std::vector<std::string> field_names;                       // categorical, schema order
  std::vector<std::vector<std::string>> values;               // values[f][0] = unknown
  std::vector<std::unordered_map<std::string, std::int32_t>> index;

  std::size_t num_fields() const { return field_names.size(); }
  std::size_t size(std::size_t f) const { return values[f].size(); }

  std::int32_t lookup(std::size_t f, const std::string& raw) const {
    auto it = index[f].find(raw);
    return it == index[f].end() ? 0 : it->second;
  }
};

// Retains values seen at least T times in the training rows; everything else
// (including the empty cell) shares index 0. Retained values are indexed in
// sorted order so the artifact does not depend on row order.
inline Vocabulary build_vocabulary(const RawTable& table, const DatasetSchema& schema,
                                   std::int64_t min_frequency) {
  if (min_frequency < 1) throw ConfigError("min_frequency must be >= 1");
  if (table.rows.empty()) throw DataError("cannot build vocabulary from empty training set");
  ColumnMap cm = map_columns(schema, table);
  Vocabulary vocab;
  vocab.min_frequency = min_frequency;
  for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
    if (schema.fields[fi].kind != FieldKind::Categorical) continue;
    vocab.field_names.push_back(schema.fields[fi].name);
    std::map<std::string, std::int64_t> counts;
    for (const auto& row : table.rows) {
      const std::string& cell = row[cm.field[fi]];
      if (!cell.empty()) ++counts[cell];
    }
    std::vector<std::string> vals{Vocabulary::kUnknown};
    for (const auto& [value, count] : counts) {
      if (count >= min_frequency) vals.push_back(value);
    }
    std::unordered_map<std::string, std::int32_t> idx;
    for (std::size_t i = 0; i < vals.size(); ++i)
      idx[vals[i]] = static_cast<std::int32_t>(i);
    vocab.values.push_back(std::move(vals));
    vocab.index.push_back(std::move(idx));
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizationStats {
  std::vector<std::string> field_names;  // numerical, schema order
  std::vector<double> mean;
  std::vector<double> std_dev;  // population std; 0 for constant columns

  std::size_t num_fields() const { return field_names.size(); }

  double encode(std::size_t f, double raw) const {
    return std_dev[f] == 0.0 ? 0.0 : (raw - mean[f]) / std_dev[f];
  }
};

// Mean and population standard deviation per numerical field, training rows
// only; missing cells are excluded from the statistics.
inline NormalizationStats compute_normalization(const RawTable& table,
                                                const DatasetSchema& schema) {
  if (table.rows.empty()) throw DataError("cannot compute statistics from empty training set");
  ColumnMap cm = map_columns(schema, table);
  NormalizationStats stats;
  for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
    if (schema.fields[fi].kind != FieldKind::Numerical) continue;
    stats.field_names.push_back(schema.fields[fi].name);
    double sum = 0.0, sum_sq = 0.0;
    std::int64_t n = 0;
    for (std::size_t ri = 0; ri < table.rows.size(); ++ri) {
      const std::string& cell = table.rows[ri][cm.field[fi]];
      if (cell.empty()) continue;
      double v;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw DataError("line " + std::to_string(table.line_numbers[ri]) +
                        ": cannot parse numerical value '" + cell + "' in field '" +
                        schema.fields[fi].name + "'");
      }
      sum += v;
      sum_sq += v * v;
      ++n;
    }
    if (n == 0) {
      stats.mean.push_back(0.0);
      stats.std_dev.push_back(0.0);
      continue;
    }
    const double mean = sum / double(n);
    const double var = std::max(0.0, sum_sq / double(n) - mean * mean);
    stats.mean.push_back(mean);
    stats.std_dev.push_back(std::sqrt(var));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Encoding

struct EncodedTable {
  std::vector<std::vector<std::int32_t>> cat;  // [rows][#categorical]
  std::vector<std::vector<double>> num;        // [rows][#numerical]
  std::vector<std::int8_t> labels;             // 0/1

  std::size_t rows() const { return labels.size(); }
};

inline EncodedTable encode_dataset(const RawTable& table, const DatasetSchema& schema,
                                   const Vocabulary& vocab,
                                   const NormalizationStats& stats) {
  ColumnMap cm = map_columns(schema, table);
  EncodedTable out;
  out.cat.reserve(table.rows.size());
  out.num.reserve(table.rows.size());
  out.labels.reserve(table.rows.size());
  for (std::size_t ri = 0; ri < table.rows.size(); ++ri) {
    const auto& row = table.rows[ri];
    const std::string& label_cell = row[cm.label];
    if (label_cell != "0" && label_cell != "1") {
      throw DataError("line " + std::to_string(table.line_numbers[ri]) +
                      ": label must be '0' or '1', got '" + label_cell + "'");
    }
    std::vector<std::int32_t> cat_row;
    std::vector<double> num_row;
    std::size_t ci = 0, ni = 0;
    for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
      const std::string& cell = row[cm.field[fi]];
      if (schema.fields[fi].kind == FieldKind::Categorical) {
        cat_row.push_back(vocab.lookup(ci, cell));
        ++ci;
      } else {
        if (cell.empty()) {
          num_row.push_back(0.0);  // missing numerical value
        } else {
          double v;
          try {
            v = std::stod(cell);
          } catch (const std::exception&) {
            throw DataError("line " + std::to_string(table.line_numbers[ri]) +
                            ": cannot parse numerical value '" + cell + "' in field '" +
                            schema.fields[fi].name + "'");
          }
          num_row.push_back(stats.encode(ni, v));
        }
        ++ni;
      }
    }
    out.cat.push_back(std::move(cat_row));
    out.num.push_back(std::move(num_row));
    out.labels.push_back(label_cell == "1" ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and batching

inline EncodedTable take_rows(const EncodedTable& table, const std::vector<std::size_t>& idx) {
  EncodedTable out;
  out.cat.reserve(idx.size());
  out.num.reserve(idx.size());
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) {
    out.cat.push_back(table.cat[i]);
    out.num.push_back(table.num[i]);
    out.labels.push_back(table.labels[i]);
  }
  return out;
}

// Deterministic shuffled split; validation receives round(fraction * N) rows.
inline std::pair<EncodedTable, EncodedTable> split_train_valid(const EncodedTable& table,
                                                               double fraction,
                                                               std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = table.rows();
  if (n < 2) throw DataError("need at least 2 rows to split");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n_valid = static_cast<std::size_t>(std::llround(fraction * double(n)));
  n_valid = std::min(std::max<std::size_t>(n_valid, 1), n - 1);
  std::vector<std::size_t> valid_idx(order.begin(), order.begin() + n_valid);
  std::vector<std::size_t> train_idx(order.begin() + n_valid, order.end());
  return {take_rows(table, train_idx), take_rows(table, valid_idx)};
}

// One mini-batch, stored per field so each field feeds its embedding directly.
struct Batch {
  std::size_t size = 0;
  std::vector<std::vector<std::int32_t>> cat;  // [#categorical][size]
  std::vector<std::vector<double>> num;        // [#numerical][size]
  std::vector<double> labels;                  // [size]
};

inline std::vector<Batch> make_batches(const EncodedTable& table, std::size_t batch_size,
                                       bool shuffle, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const std::size_t n = table.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  const std::size_t n_cat = n ? table.cat[0].size() : 0;
  const std::size_t n_num = n ? table.num[0].size() : 0;
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t b = std::min(batch_size, n - start);
    Batch batch;
    batch.size = b;
    batch.cat.assign(n_cat, std::vector<std::int32_t>(b));
    batch.num.assign(n_num, std::vector<double>(b));
    batch.labels.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t r = order[start + i];
      for (std::size_t f = 0; f < n_cat; ++f) batch.cat[f][i] = table.cat[r][f];
      for (std::size_t f = 0; f < n_num; ++f) batch.num[f][i] = table.num[r][f];
      batch.labels[i] = double(table.labels[r]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Artifact round-trips (JSON keeps doubles exact through shortest round-trip
// formatting, so load(save(x)) == x bitwise)

inline nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  nlohmann::json j;
  j["min_frequency"] = vocab.min_frequency;
  j["fields"] = nlohmann::json::array();
  for (std::size_t f = 0; f < vocab.num_fields(); ++f) {
    j["fields"].push_back({{"name", vocab.field_names[f]}, {"values", vocab.values[f]}});
  }
  return j;
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  Vocabulary vocab;
  vocab.min_frequency = j.at("min_frequency").get<std::int64_t>();
  for (const auto& fj : j.at("fields")) {
    vocab.field_names.push_back(fj.at("name").get<std::string>());
    auto vals = fj.at("values").get<std::vector<std::string>>();
    if (vals.empty() || vals[0] != Vocabulary::kUnknown) {
      throw DataError("vocabulary artifact corrupt: index 0 must be " +
                      std::string(Vocabulary::kUnknown));
    }
    std::unordered_map<std::string, std::int32_t> idx;
    for (std::size_t i = 0; i < vals.size(); ++i)
      idx[vals[i]] = static_cast<std::int32_t>(i);
    vocab.values.push_back(std::move(vals));
    vocab.index.push_back(std::move(idx));
  }
  return vocab;
}

inline nlohmann::json stats_to_json(const NormalizationStats& stats) {
  nlohmann::json j;
  j["fields"] = nlohmann::json::array();
  for (std::size_t f = 0; f < stats.num_fields(); ++f) {
    j["fields"].push_back({{"name", stats.field_names[f]},
                           {"mean", stats.mean[f]},
                           {"std", stats.std_dev[f]}});
  }
  return j;
}

inline NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats stats;
  for (const auto& fj : j.at("fields")) {
    stats.field_names.push_back(fj.at("name").get<std::string>());
    stats.mean.push_back(fj.at("mean").get<double>());
    stats.std_dev.push_back(fj.at("std").get<double>());
  }
  return stats;
}

// FNV-1a, used to fingerprint configs and schema+vocabulary so artifacts can
// refuse to load against mismatched inputs.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t schema_hash(const DatasetSchema& schema, const Vocabulary& vocab) {
  std::ostringstream os;
  os << schema.canonical();
  for (std::size_t f = 0; f < vocab.num_fields(); ++f)
    os << ";" << vocab.field_names[f] << "=" << vocab.size(f);
  return fnv1a(os.str());
}

}  // namespace non
