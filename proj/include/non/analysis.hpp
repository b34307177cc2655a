#pragma once

// Embedding-space analysis: the mean pairwise cosine statistic of each
// categorical field's feature vectors, measured before the field-wise
// network (raw embedding columns) and after it (refined outputs), plus a
// tab-separated export of both stages for external plotting.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "non/data.hpp"
#include "non/model.hpp"
#include "non/rng.hpp"

namespace non {

class AnalysisError : public std::runtime_error {
 public:
  explicit AnalysisError(const std::string& what) : std::runtime_error(what) {}
};

struct FieldSimilarity {
  std::string field;
  std::size_t sampled = 0;  // feature vectors used
  std::size_t pairs = 0;
  double before = 0.0;  // mean pairwise cosine of raw embedding columns
  double after = 0.0;   // same statistic on field-wise outputs
};

struct FieldSimilarityReport {
  std::vector<FieldSimilarity> fields;
  std::vector<std::string> skipped;  // fields with fewer than two values
  double micro_before = 0.0;         // pair-weighted average across fields
  double micro_after = 0.0;
};

namespace detail {

inline double cosine(const double* a, const double* b, std::size_t d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::min(1.0, std::max(-1.0, c));
}

// Sum of cosines over all i<j pairs of row vectors in a [s, d] buffer.
inline double pair_cosine_sum(const std::vector<double>& rows, std::size_t s,
                              std::size_t d) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = i + 1; j < s; ++j)
      sum += cosine(rows.data() + i * d, rows.data() + j * d, d);
  return sum;
}

// Up to `cap` distinct value indices of a field, ascending when everything
// fits, otherwise a seeded sample without replacement.
inline std::vector<std::int32_t> sample_indices(std::size_t n, std::size_t cap,
                                                std::uint64_t seed) {
  std::vector<std::int32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = std::int32_t(i);
  if (n <= cap) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Field-wise outputs for chosen values of one categorical field. Every other
// field's input is inert (index 0 / value 0); per-field networks make the
// result independent of those fillers.
inline Tensor refined_rows_for(const NONModel& model, std::size_t field_pos,
                               const std::vector<std::int32_t>& idx) {
  Batch batch;
  batch.size = idx.size();
  const auto& fields = model.fields();
  for (std::size_t fp = 0; fp < fields.size(); ++fp) {
    if (fields[fp].kind == FieldKind::Categorical) {
      batch.cat.push_back(fp == field_pos ? idx
                                          : std::vector<std::int32_t>(idx.size(), 0));
    } else {
      batch.num.push_back(std::vector<double>(idx.size(), 0.0));
    }
  }
  batch.labels.assign(idx.size(), 0.0);
  auto refined = model.field_wise(model.embed_batch(batch));
  return refined[field_pos];
}

}  // namespace detail

// Mean pairwise cosine per categorical field, before and after the
// field-wise network; micro average weights every pair equally.
inline FieldSimilarityReport field_similarity(const NONModel& model,
                                              std::size_t sample_cap = 200,
                                              std::uint64_t seed = 0) {
  if (sample_cap < 2) throw AnalysisError("sample cap must be at least 2");
  FieldSimilarityReport report;
  double before_sum = 0.0, after_sum = 0.0;
  std::size_t pair_total = 0;
  const auto& fields = model.fields();
  for (std::size_t fp = 0; fp < fields.size(); ++fp) {
    const auto& f = fields[fp];
    if (f.kind != FieldKind::Categorical) continue;
    if (f.vocab_size < 2) {
      report.skipped.push_back(f.name);
      continue;
    }
    auto idx = detail::sample_indices(f.vocab_size, sample_cap,
                                      derive_seed(seed, fp));
    const std::size_t s = idx.size();
    const std::size_t pairs = s * (s - 1) / 2;

    // before: columns of the embedding table, gathered into rows
    const Tensor& table = model.param("embed.cat." + f.name);
    const std::size_t d = table.shape()[0];
    std::vector<double> before_rows(s * d);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < d; ++r)
        before_rows[i * d + r] = table.at(r, std::size_t(idx[i]));

    Tensor after = detail::refined_rows_for(model, fp, idx);
    const std::size_t dhat = after.shape()[1];

    FieldSimilarity fs;
    fs.field = f.name;
    fs.sampled = s;
    fs.pairs = pairs;
    const double b_sum = detail::pair_cosine_sum(before_rows, s, d);
    const double a_sum = detail::pair_cosine_sum(after.values(), s, dhat);
    fs.before = b_sum / double(pairs);
    fs.after = a_sum / double(pairs);
    report.fields.push_back(fs);
    before_sum += b_sum;
    after_sum += a_sum;
    pair_total += pairs;
  }
  if (pair_total == 0) {
    throw AnalysisError("no categorical field has two or more values to compare");
  }
  report.micro_before = before_sum / double(pair_total);
  report.micro_after = after_sum / double(pair_total);
  return report;
}

namespace detail {

inline std::string escape_cell(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

inline std::string unescape_cell(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      ++i;
      out.push_back(s[i] == 't' ? '\t' : s[i] == 'n' ? '\n' : s[i]);
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

struct EmbeddingRow {
  std::string field;
  std::string value;
  std::string stage;  // "before" or "after"
  std::vector<double> components;
};

// Tab-separated export of every sampled feature vector in both stages.
// Rows are ordered field by field, all before rows then all after rows,
// ascending value index. Vectors shorter than the widest stage leave the
// trailing cells empty.
inline void export_embeddings(const NONModel& model, const Vocabulary& vocab,
                              const std::vector<std::string>& field_names,
                              std::ostream& out, std::size_t sample_cap = 200,
                              std::uint64_t seed = 0) {
  const auto& fields = model.fields();
  std::vector<std::size_t> positions;
  for (const std::string& name : field_names) {
    bool found = false;
    for (std::size_t fp = 0; fp < fields.size(); ++fp) {
      if (fields[fp].name == name && fields[fp].kind == FieldKind::Categorical) {
        positions.push_back(fp);
        found = true;
        break;
      }
    }
    if (!found) throw AnalysisError("unknown categorical field '" + name + "'");
  }

  const std::size_t d = model.config().embedding_dim;
  const std::size_t width = std::max(d, model.refined_dim());
  out << "field\tvalue\tstage";
  for (std::size_t i = 0; i < width; ++i) out << "\te" << i;
  out << "\n";

  auto write_row = [&](const std::string& field, const std::string& value,
                       const char* stage, const double* vec, std::size_t len) {
    out << detail::escape_cell(field) << "\t" << detail::escape_cell(value) << "\t"
        << stage;
    for (std::size_t i = 0; i < width; ++i) {
      out << "\t";
      if (i < len) out << detail::format_double(vec[i]);
    }
    out << "\n";
  };

  for (std::size_t fp : positions) {
    const auto& f = fields[fp];
    auto idx = detail::sample_indices(f.vocab_size, sample_cap, derive_seed(seed, fp));
    const Tensor& table = model.param("embed.cat." + f.name);
    std::vector<double> col(d);
    for (std::int32_t v : idx) {
      for (std::size_t r = 0; r < d; ++r) col[r] = table.at(r, std::size_t(v));
      write_row(f.name, vocab.values[f.slot][std::size_t(v)], "before", col.data(), d);
    }
    Tensor after = detail::refined_rows_for(model, fp, idx);
    const std::size_t dhat = after.shape()[1];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      write_row(f.name, vocab.values[f.slot][std::size_t(idx[i])], "after",
                after.values().data() + i * dhat, dhat);
    }
  }
}

inline std::vector<EmbeddingRow> read_embedding_export(std::istream& in) {
  std::vector<EmbeddingRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto cells = detail::split_line(line, '\t');
    if (cells.size() < 4) throw AnalysisError("malformed embedding export row");
    EmbeddingRow row;
    row.field = detail::unescape_cell(cells[0]);
    row.value = detail::unescape_cell(cells[1]);
    row.stage = cells[2];
    for (std::size_t i = 3; i < cells.size(); ++i) {
      if (cells[i].empty()) break;  // padded tail
      double v = 0.0;
      auto res = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
      if (res.ec != std::errc()) {
        throw AnalysisError("bad float '" + cells[i] + "' in embedding export");
      }
      row.components.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json similarity_report_to_json(const FieldSimilarityReport& r) {
  nlohmann::json j;
  j["fields"] = nlohmann::json::array();
  for (const auto& f : r.fields) {
    j["fields"].push_back({{"field", f.field},
                           {"sampled", f.sampled},
                           {"pairs", f.pairs},
                           {"before", f.before},
                           {"after", f.after}});
  }
  j["skipped"] = r.skipped;
  j["micro_before"] = r.micro_before;
  j["micro_after"] = r.micro_after;
  return j;
}

}  // namespace non
