#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "fedalv/errors.hpp"
#include "fedalv/numcore.hpp"
#include "fedalv/rng.hpp"

namespace fedalv {

// One synthetic domain: x = scale · R(rotation) · (class_mean + noise) + shift,
// where R rotates the first two coordinates.
struct DomainSpec {
  double rotation = 0.0;
  double scale = 1.0;
  std::vector<double> shift;  // empty = zero shift
  double noise_std = 0.3;

  void validate(std::size_t input_dim) const {
    if (!(scale > 0.0)) throw ConfigError("DomainSpec: scale must be > 0");
    if (!(noise_std >= 0.0)) throw ConfigError("DomainSpec: noise_std must be >= 0");
    if (!shift.empty() && shift.size() != input_dim) {
      throw ConfigError("DomainSpec: shift has " + std::to_string(shift.size()) +
                        " entries, expected " + std::to_string(input_dim));
    }
  }
};

struct DatasetConfig {
  std::size_t num_domains = 4;
  std::size_t num_classes = 2;
  std::size_t samples_per_domain = 500;
  std::size_t input_dim = 2;
  double class_radius = 3.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_domains < 2) throw ConfigError("DatasetConfig: num_domains must be >= 2");
    if (num_classes < 2) throw ConfigError("DatasetConfig: num_classes must be >= 2");
    if (input_dim < 2) throw ConfigError("DatasetConfig: input_dim must be >= 2");
    if (samples_per_domain < 1) throw ConfigError("DatasetConfig: samples_per_domain must be >= 1");
    if (!(class_radius > 0.0)) throw ConfigError("DatasetConfig: class_radius must be > 0");
  }
};

struct ClientDataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::vector<bool> labeled_mask;
  std::size_t domain = 0;

  std::size_t size() const noexcept { return labels.size(); }

  std::vector<std::size_t> labeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labeled_mask.size(); ++i) {
      if (labeled_mask[i]) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> unlabeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labeled_mask.size(); ++i) {
      if (!labeled_mask[i]) out.push_back(i);
    }
    return out;
  }

  std::size_t labeled_count() const {
    std::size_t n = 0;
    for (bool b : labeled_mask) n += b ? 1 : 0;
    return n;
  }

  ClientDataset subset(std::span<const std::size_t> idx) const {
    ClientDataset out;
    out.domain = domain;
    out.features = Matrix(idx.size(), features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto src = features.row(idx[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels.push_back(labels[idx[i]]);
      out.labeled_mask.push_back(labeled_mask[idx[i]]);
    }
    return out;
  }
};

struct FederationSplit {
  std::vector<ClientDataset> sources;
  ClientDataset target;
  std::size_t held_out_domain = 0;
};

inline std::vector<double> class_mean(std::size_t c, const DatasetConfig& cfg) {
  std::vector<double> m(cfg.input_dim, 0.0);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                       static_cast<double>(cfg.num_classes);
  m[0] = cfg.class_radius * std::cos(angle);
  m[1] = cfg.class_radius * std::sin(angle);
  return m;
}

// Sample i has class i mod C, so class counts differ by at most one.
inline ClientDataset generate_domain(const DomainSpec& spec, const DatasetConfig& cfg, Rng& rng) {
  cfg.validate();
  spec.validate(cfg.input_dim);
  const std::size_t n = cfg.samples_per_domain;
  ClientDataset ds;
  ds.features = Matrix(n, cfg.input_dim);
  ds.labels.resize(n);
  ds.labeled_mask.assign(n, true);
  const double cr = std::cos(spec.rotation);
  const double sr = std::sin(spec.rotation);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % cfg.num_classes;
    ds.labels[i] = c;
    auto x = ds.features.row(i);
    const auto m = class_mean(c, cfg);
    for (std::size_t j = 0; j < cfg.input_dim; ++j) {
      x[j] = m[j] + (spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0);
    }
    const double a = x[0];
    const double b = x[1];
    x[0] = cr * a - sr * b;
    x[1] = sr * a + cr * b;
    for (std::size_t j = 0; j < cfg.input_dim; ++j) {
      x[j] = spec.scale * x[j] + (spec.shift.empty() ? 0.0 : spec.shift[j]);
    }
  }
  return ds;
}

// Leave-one-domain-out split of already materialised domains.
inline FederationSplit split_domains(std::vector<ClientDataset> domains, std::size_t target_index) {
  if (target_index >= domains.size()) {
    throw ArgumentError("split_domains: target index " + std::to_string(target_index) +
                        " out of range");
  }
  FederationSplit split;
  split.held_out_domain = target_index;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    domains[d].domain = d;
    if (d == target_index) {
      domains[d].labeled_mask.assign(domains[d].size(), false);
      split.target = std::move(domains[d]);
    } else {
      split.sources.push_back(std::move(domains[d]));
    }
  }
  return split;
}

// Domain d draws from stream split(d) of the seed.
inline std::vector<ClientDataset> generate_domains(const DatasetConfig& cfg,
                                                   const std::vector<DomainSpec>& specs) {
  cfg.validate();
  if (specs.size() != cfg.num_domains) {
    throw ArgumentError("generate_domains: " + std::to_string(specs.size()) +
                        " domain specs for " + std::to_string(cfg.num_domains) + " domains");
  }
  const Rng root(cfg.seed);
  std::vector<ClientDataset> out;
  for (std::size_t d = 0; d < cfg.num_domains; ++d) {
    Rng stream = root.split(d);
    out.push_back(generate_domain(specs[d], cfg, stream));
    out.back().domain = d;
  }
  return out;
}

inline FederationSplit make_federation(const DatasetConfig& cfg,
                                       const std::vector<DomainSpec>& specs,
                                       std::size_t target_index) {
  if (target_index >= cfg.num_domains) {
    throw ArgumentError("make_federation: target index " + std::to_string(target_index) +
                        " out of range");
  }
  return split_domains(generate_domains(cfg, specs), target_index);
}

// Marks exactly round(fraction · n) uniformly chosen samples as labeled.
inline void init_labeled_pool(ClientDataset& ds, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ArgumentError("init_labeled_pool: fraction must be in [0, 1]");
  }
  const auto n = ds.size();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  ds.labeled_mask.assign(n, false);
  for (auto i : rng.sample(std::move(all), k)) ds.labeled_mask[i] = true;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError(line, "non-numeric field '" + std::string(field) + "'");
  }
  if (!std::isfinite(v)) throw ParseError(line, "non-finite field '" + std::string(field) + "'");
  return v;
}

inline std::size_t parse_label(std::string_view field, std::size_t line) {
  field = trim(field);
  std::size_t v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError(line, "label '" + std::string(field) + "' is not a non-negative integer");
  }
  return v;
}

}  // namespace detail

// Rows of `label,f1,...,fd`; LF or CRLF line endings. A leading row whose first
// field is `label` is taken as a header and skipped.
inline ClientDataset parse_csv_embeddings(std::istream& in) {
  ClientDataset ds;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = detail::trim(line);
    if (row.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = row.find(',', start);
      fields.push_back(row.substr(start, comma == std::string_view::npos ? comma : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 2) throw ParseError(line_no, "expected label and at least one feature");
    if (ds.labels.empty() && dim == 0 && detail::trim(fields[0]) == "label") {
      dim = fields.size() - 1;
      continue;
    }
    if (dim == 0) {
      dim = fields.size() - 1;
    } else if (fields.size() - 1 != dim) {
      throw ParseError(line_no, "ragged row: " + std::to_string(fields.size() - 1) +
                                    " features, expected " + std::to_string(dim));
    }
    ds.labels.push_back(detail::parse_label(fields[0], line_no));
    for (std::size_t j = 1; j < fields.size(); ++j) {
      values.push_back(detail::parse_double(fields[j], line_no));
    }
  }
  if (ds.labels.empty()) throw ParseError(line_no, "no data rows");
  ds.features = Matrix(ds.labels.size(), dim, std::move(values));
  ds.labeled_mask.assign(ds.labels.size(), true);
  return ds;
}

inline ClientDataset load_csv_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_csv_embeddings(in);
}

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_csv_embeddings(std::ostream& out, const ClientDataset& ds, bool header = false) {
  if (header) {
    out << "label";
    for (std::size_t j = 0; j < ds.features.cols(); ++j) out << ",f" << j + 1;
    out << '\n';
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

inline void write_csv_embeddings(const std::string& path, const ClientDataset& ds,
                                 bool header = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_csv_embeddings(out, ds, header);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace fedalv
