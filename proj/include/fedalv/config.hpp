#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "fedalv/al.hpp"
#include "fedalv/datagen.hpp"
#include "fedalv/fal.hpp"
#include "fedalv/fed.hpp"

namespace fedalv {

enum class Baseline { Feda, FedAvg };

inline Baseline parse_baseline(std::string_view s) {
  if (s == "feda") return Baseline::Feda;
  if (s == "fedavg") return Baseline::FedAvg;
  throw ConfigError("unknown baseline '" + std::string(s) + "' (expected feda or fedavg)");
}

inline std::string_view baseline_name(Baseline b) { return b == Baseline::Feda ? "feda" : "fedavg"; }

struct DataSection {
  std::size_t num_domains = 4;
  std::size_t num_classes = 2;
  std::size_t samples_per_domain = 500;
  std::size_t input_dim = 2;
  double class_radius = 3.0;
  double noise_std = 0.3;
  double rotation_step = std::numbers::pi / 4.0;
  std::vector<double> scales;               // per domain; empty = all 1
  std::vector<std::vector<double>> shifts;  // per domain; empty = no shift
  std::size_t target_domain = 0;
  std::vector<std::string> embeddings;  // CSV files, one per domain; replaces the generator
};

struct AlSection {
  std::size_t cycles = 5;
  double initial_fraction = 0.02;
  std::optional<std::size_t> budget;
  double budget_fraction = 0.02;
  SelectorKind selector = SelectorKind::Fedalv;
  std::size_t rounds = 50;  // training rounds per cycle
};

// One JSON document per experiment; every field defaults except the seed.
struct ExperimentConfig {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out = "out";
  DataSection data;
  ModelConfig model;  // input_dim and num_classes follow the data
  FedConfig fed;
  Baseline baseline = Baseline::Feda;
  AlSection al;

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("a seed is required (config \"seed\" or --seed)");
    return *seed;
  }

  std::vector<DomainSpec> domain_specs() const {
    std::vector<DomainSpec> specs(data.num_domains);
    for (std::size_t d = 0; d < specs.size(); ++d) {
      specs[d].rotation = data.rotation_step * static_cast<double>(d);
      specs[d].noise_std = data.noise_std;
      if (!data.scales.empty()) specs[d].scale = data.scales[d];
      if (!data.shifts.empty()) specs[d].shift = data.shifts[d];
    }
    return specs;
  }

  DatasetConfig dataset() const {
    DatasetConfig d;
    d.num_domains = data.num_domains;
    d.num_classes = data.num_classes;
    d.samples_per_domain = data.samples_per_domain;
    d.input_dim = data.input_dim;
    d.class_radius = data.class_radius;
    d.seed = require_seed();
    return d;
  }

  // Training schedule for FDG runs, with the baseline applied.
  FedConfig fdg_config() const {
    FedConfig f = fed;
    f.model = model;
    f.seed = require_seed();
    f.threads = threads;
    return baseline == Baseline::FedAvg ? f.as_fedavg() : f;
  }

  FalConfig fal_config() const {
    FalConfig c;
    c.fed = fdg_config();
    c.fed.rounds = al.rounds;
    c.cycles = al.cycles;
    c.initial_fraction = al.initial_fraction;
    c.budget = al.budget;
    c.budget_fraction = al.budget_fraction;
    c.selector = al.selector;
    return c;
  }

  void validate() const {
    require_seed();
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (data.embeddings.empty()) {
      DatasetConfig d;
      d.num_domains = data.num_domains;
      d.num_classes = data.num_classes;
      d.samples_per_domain = data.samples_per_domain;
      d.input_dim = data.input_dim;
      d.class_radius = data.class_radius;
      d.validate();
      if (!data.scales.empty() && data.scales.size() != data.num_domains) {
        throw ConfigError("data.scales needs one entry per domain");
      }
      if (!data.shifts.empty() && data.shifts.size() != data.num_domains) {
        throw ConfigError("data.shifts needs one entry per domain");
      }
      for (const auto& s : domain_specs()) s.validate(data.input_dim);
    } else if (data.embeddings.size() != data.num_domains || data.num_domains < 2) {
      throw ConfigError("data.embeddings lists " + std::to_string(data.embeddings.size()) +
                        " files for " + std::to_string(data.num_domains) + " domains");
    }
    if (data.target_domain >= data.num_domains) {
      throw ConfigError("data.target_domain " + std::to_string(data.target_domain) +
                        " out of range for " + std::to_string(data.num_domains) + " domains");
    }
    model.validate();
    fal_config().validate();
  }

  // Domains of the experiment: generated, or read from the embedding files.
  std::vector<ClientDataset> load_domains() const {
    if (data.embeddings.empty()) return generate_domains(dataset(), domain_specs());
    std::vector<ClientDataset> out;
    for (const auto& path : data.embeddings) {
      out.push_back(load_csv_embeddings(path));
      auto& ds = out.back();
      ds.domain = out.size() - 1;
      if (ds.features.cols() != data.input_dim) {
        throw ConfigError("'" + path + "' has " + std::to_string(ds.features.cols()) +
                          " features, data.input_dim is " + std::to_string(data.input_dim));
      }
      for (auto y : ds.labels) {
        if (y >= data.num_classes) {
          throw ConfigError("'" + path + "' has label " + std::to_string(y) +
                            " but data.num_classes is " + std::to_string(data.num_classes));
        }
      }
    }
    return out;
  }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, std::initializer_list<std::string_view> known,
                           const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + where + key + "'");
  }
}

template <typename T>
void read_value(const json& v, T& dst, const std::string& name) {
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError("'" + name + "' must be a non-negative integer, got " + v.dump());
    }
  }
  try {
    dst = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + name + "': " + v.dump());
  }
}

template <typename T>
void read(const json& obj, const char* key, T& dst, const std::string& where) {
  if (obj.contains(key)) read_value(obj.at(key), dst, where + key);
}

}  // namespace detail

// Missing keys keep their defaults; unknown keys and mistyped values are errors.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::reject_unknown(j, {"seed", "threads", "out", "data", "model", "fed", "al"}, "");
  if (j.contains("seed") && !j.at("seed").is_null()) {
    std::uint64_t s = 0;
    read(j, "seed", s, "");
    c.seed = s;
  }
  read(j, "threads", c.threads, "");
  read(j, "out", c.out, "");

  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d,
                           {"num_domains", "num_classes", "samples_per_domain", "input_dim",
                            "class_radius", "noise_std", "rotation_step", "scales", "shifts",
                            "target_domain", "embeddings"},
                           "data.");
    read(d, "num_domains", c.data.num_domains, "data.");
    read(d, "num_classes", c.data.num_classes, "data.");
    read(d, "samples_per_domain", c.data.samples_per_domain, "data.");
    read(d, "input_dim", c.data.input_dim, "data.");
    read(d, "class_radius", c.data.class_radius, "data.");
    read(d, "noise_std", c.data.noise_std, "data.");
    read(d, "rotation_step", c.data.rotation_step, "data.");
    read(d, "scales", c.data.scales, "data.");
    read(d, "shifts", c.data.shifts, "data.");
    read(d, "target_domain", c.data.target_domain, "data.");
    read(d, "embeddings", c.data.embeddings, "data.");
  }
  if (!c.data.embeddings.empty()) c.data.num_domains = c.data.embeddings.size();

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, {"hidden_dims", "latent_dim"}, "model.");
    if (m.contains("hidden_dims")) {
      const auto& h = m.at("hidden_dims");
      if (!h.is_array()) throw ConfigError("'model.hidden_dims' must be an array");
      c.model.hidden_dims.clear();
      for (std::size_t i = 0; i < h.size(); ++i) {
        std::size_t width = 0;
        detail::read_value(h[i], width, "model.hidden_dims[" + std::to_string(i) + "]");
        c.model.hidden_dims.push_back(width);
      }
    }
    read(m, "latent_dim", c.model.latent_dim, "model.");
  }
  c.model.input_dim = c.data.input_dim;
  c.model.num_classes = c.data.num_classes;

  if (j.contains("fed")) {
    const auto& f = j.at("fed");
    detail::reject_unknown(f,
                           {"rounds", "comm_every", "local_batch", "lambda_l2", "lambda_cmi",
                            "lambda_fea", "target_batch", "lr", "momentum", "weight_decay",
                            "ema_alpha", "validation_fraction", "baseline"},
                           "fed.");
    read(f, "rounds", c.fed.rounds, "fed.");
    read(f, "comm_every", c.fed.comm_every, "fed.");
    read(f, "local_batch", c.fed.local_batch, "fed.");
    read(f, "lambda_l2", c.fed.lambdas.l2, "fed.");
    read(f, "lambda_cmi", c.fed.lambdas.cmi, "fed.");
    read(f, "lambda_fea", c.fed.lambda_fea, "fed.");
    read(f, "target_batch", c.fed.target_batch, "fed.");
    read(f, "lr", c.fed.optimizer.learning_rate, "fed.");
    read(f, "momentum", c.fed.optimizer.momentum, "fed.");
    read(f, "weight_decay", c.fed.optimizer.weight_decay, "fed.");
    read(f, "ema_alpha", c.fed.ema_alpha, "fed.");
    read(f, "validation_fraction", c.fed.validation_fraction, "fed.");
    std::string b(baseline_name(c.baseline));
    read(f, "baseline", b, "fed.");
    c.baseline = parse_baseline(b);
  }

  if (j.contains("al")) {
    const auto& a = j.at("al");
    detail::reject_unknown(
        a, {"cycles", "initial_fraction", "budget", "budget_fraction", "selector", "rounds"}, "al.");
    read(a, "cycles", c.al.cycles, "al.");
    read(a, "initial_fraction", c.al.initial_fraction, "al.");
    if (a.contains("budget") && !a.at("budget").is_null()) {
      std::size_t b = 0;
      read(a, "budget", b, "al.");
      c.al.budget = b;
    }
    read(a, "budget_fraction", c.al.budget_fraction, "al.");
    read(a, "rounds", c.al.rounds, "al.");
    std::string s(selector_name(c.al.selector));
    read(a, "selector", s, "al.");
    c.al.selector = parse_selector(s);
  }
  return c;
}

inline ExperimentConfig parse_config_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Full snapshot with every default made explicit.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
  j["threads"] = c.threads;
  j["out"] = c.out;
  j["data"] = {{"num_domains", c.data.num_domains},
               {"num_classes", c.data.num_classes},
               {"samples_per_domain", c.data.samples_per_domain},
               {"input_dim", c.data.input_dim},
               {"class_radius", c.data.class_radius},
               {"noise_std", c.data.noise_std},
               {"rotation_step", c.data.rotation_step},
               {"scales", c.data.scales},
               {"shifts", c.data.shifts},
               {"target_domain", c.data.target_domain},
               {"embeddings", c.data.embeddings}};
  j["model"] = {{"hidden_dims", c.model.hidden_dims}, {"latent_dim", c.model.latent_dim}};
  j["fed"] = {{"rounds", c.fed.rounds},
              {"comm_every", c.fed.comm_every},
              {"local_batch", c.fed.local_batch},
              {"lambda_l2", c.fed.lambdas.l2},
              {"lambda_cmi", c.fed.lambdas.cmi},
              {"lambda_fea", c.fed.lambda_fea},
              {"target_batch", c.fed.target_batch},
              {"lr", c.fed.optimizer.learning_rate},
              {"momentum", c.fed.optimizer.momentum},
              {"weight_decay", c.fed.optimizer.weight_decay},
              {"ema_alpha", c.fed.ema_alpha},
              {"validation_fraction", c.fed.validation_fraction},
              {"baseline", std::string(baseline_name(c.baseline))}};
  j["al"] = {{"cycles", c.al.cycles},
             {"initial_fraction", c.al.initial_fraction},
             {"budget", c.al.budget ? nlohmann::json(*c.al.budget) : nlohmann::json(nullptr)},
             {"budget_fraction", c.al.budget_fraction},
             {"selector", std::string(selector_name(c.al.selector))},
             {"rounds", c.al.rounds}};
  return j;
}

}  // namespace fedalv
