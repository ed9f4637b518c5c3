// fedalv: experiment runner for federated domain generalisation and federated
// active learning on synthetic or precomputed-embedding domains.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedalv/config.hpp"
#include "fedalv/fal.hpp"
#include "fedalv/fdg.hpp"
#include "fedalv/manifest.hpp"
#include "fedalv/projection.hpp"
#include "fedalv/verify.hpp"

namespace {

using namespace fedalv;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
  std::optional<std::string> selector;
  std::optional<std::string> baseline;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.out) cfg.out = *o.out;
  if (o.selector) cfg.al.selector = parse_selector(*o.selector);
  if (o.baseline) cfg.baseline = parse_baseline(*o.baseline);
  cfg.validate();
  return cfg;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string params_csv(const ModelParams& p) {
  std::string out = "index,value\n";
  const auto flat = flatten(p);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    out += std::to_string(i) + "," + format_double(flat[i]) + "\n";
  }
  return out;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  Stopwatch sw;
  RunWriter w(cfg.out, "gen-data", to_json(cfg));
  const auto domains = cfg.load_domains();
  w.time("generate", sw.lap());
  for (const auto& d : domains) {
    std::ostringstream ss;
    write_csv_embeddings(ss, d, true);
    w.write("domain_" + std::to_string(d.domain) + ".csv", ss.str());
    std::printf("domain %zu: %zu samples\n", d.domain, d.size());
  }
  w.time("write", sw.lap());
  w.finish();
  return kExitOk;
}

int cmd_train_fdg(const ExperimentConfig& cfg, bool all_targets) {
  Stopwatch sw;
  RunWriter w(cfg.out, "train-fdg", to_json(cfg));
  const auto domains = cfg.load_domains();
  std::vector<std::size_t> targets;
  if (all_targets) {
    for (std::size_t t = 0; t < domains.size(); ++t) targets.push_back(t);
  } else {
    targets.push_back(cfg.data.target_domain);
  }
  const FedConfig fc = cfg.fdg_config();
  for (auto t : targets) {
    const auto res = run_fdg(fc, split_domains(domains, t));
    w.time("train_target_" + std::to_string(t), sw.lap());
    if (const auto bad = res.ledger.first_violation()) {
      std::fprintf(stderr, "privacy violation: %s from client %zu\n",
                   std::string(kind_name(bad->kind)).c_str(), bad->client);
      return kExitCheckFailed;
    }
    const std::string suffix = "_target" + std::to_string(t) + ".csv";
    w.write("history" + suffix, history_csv(res.history));
    w.write("params" + suffix, params_csv(res.server.global_params));
    w.write("ledger" + suffix, res.ledger.to_csv());
    std::printf("target %zu (%s): target accuracy %.6f, source validation accuracy %.6f\n", t,
                std::string(baseline_name(cfg.baseline)).c_str(), res.final_target_accuracy(),
                res.final_source_accuracy_mean());
  }
  w.finish();
  return kExitOk;
}

std::string selections_csv(const FalResult& r, std::span<const ClientDataset> sources) {
  std::string out = "cycle,client,domain,index\n";
  for (const auto& c : r.cycles) {
    for (std::size_t k = 0; k < c.selection.per_client.size(); ++k) {
      for (auto i : c.selection.per_client[k]) {
        out += std::to_string(c.cycle) + "," + std::to_string(k) + "," +
               std::to_string(sources[k].domain) + "," + std::to_string(i) + "\n";
      }
    }
  }
  return out;
}

// Latents of every source pool sample and every target sample under the
// cycle's global model, projected on two principal components.
std::string projection_csv(const CycleRecord& c, const ClientDataset& target) {
  const auto& theta = c.global_params;
  std::vector<const ClientDataset*> parts;
  for (const auto& p : c.pools_before) parts.push_back(&p);
  parts.push_back(&target);

  std::size_t rows = 0;
  for (const auto* p : parts) rows += p->size();
  Matrix z(rows, theta.config.latent_dim);
  std::vector<double> energy;
  std::size_t r = 0;
  for (const auto* p : parts) {
    const Matrix zp = latents(theta, p->features);
    for (std::size_t i = 0; i < zp.rows(); ++i, ++r) {
      std::copy(zp.row(i).begin(), zp.row(i).end(), z.row(r).begin());
    }
    const auto e = free_energies(theta, p->features).energies;
    energy.insert(energy.end(), e.begin(), e.end());
  }
  const Matrix pcs = pca_project(z, 2);

  std::string out = "domain,label,is_selected,free_energy,pc1,pc2\n";
  r = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::vector<bool> selected(parts[k]->size(), false);
    if (k < c.selection.per_client.size()) {
      for (auto i : c.selection.per_client[k]) selected[i] = true;
    }
    for (std::size_t i = 0; i < parts[k]->size(); ++i, ++r) {
      out += std::to_string(parts[k]->domain) + "," + std::to_string(parts[k]->labels[i]) + "," +
             (selected[i] ? "1" : "0") + "," + format_double(energy[r]) + "," +
             format_double(pcs(r, 0)) + "," + format_double(pcs(r, 1)) + "\n";
    }
  }
  return out;
}

int cmd_run_fal(const ExperimentConfig& cfg) {
  Stopwatch sw;
  RunWriter w(cfg.out, "run-fal", to_json(cfg));
  const auto fed = split_domains(cfg.load_domains(), cfg.data.target_domain);
  const auto res = run_fal(cfg.fal_config(), fed);
  w.time("campaign", sw.lap());
  if (const auto bad = res.ledger.first_violation()) {
    std::fprintf(stderr, "privacy violation: %s from client %zu\n",
                 std::string(kind_name(bad->kind)).c_str(), bad->client);
    return kExitCheckFailed;
  }
  w.write("fal_metrics.csv", fal_metrics_csv(res, cfg.al.selector));
  w.write("selections.csv", selections_csv(res, fed.sources));
  w.write("ledger.csv", res.ledger.to_csv());
  w.write("projection.csv", projection_csv(res.cycles.front(), res.target));
  w.time("write", sw.lap());
  for (const auto& c : res.cycles) {
    std::printf("cycle %zu (%s): labeled %zu, target accuracy %.6f\n", c.cycle,
                std::string(selector_name(cfg.al.selector)).c_str(), c.labeled_total,
                c.target_accuracy);
  }
  w.finish();
  return kExitOk;
}

int cmd_verify(const std::optional<std::string>& fault, const std::optional<std::string>& out) {
  VerifyOptions opt;
  opt.fault = fault;
  const auto results = run_verify(opt);
  bool ok = true;
  std::string csv = "check,passed,max_rel_error,detail\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    if (std::isnan(r.max_rel_error)) {
      std::printf("%s %-22s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    } else {
      std::printf("%s %-22s max_rel_error=%.3e  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                  r.max_rel_error, r.detail.c_str());
    }
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    csv += r.name + "," + (r.passed ? "1" : "0") + "," +
           (std::isnan(r.max_rel_error) ? std::string("nan") : format_double(r.max_rel_error)) +
           "," + detail + "\n";
  }
  if (out) {
    RunWriter w(*out, "verify", nlohmann::json::object());
    w.write("verify.csv", csv);
    w.finish();
  }
  std::printf("%s\n", ok ? "all checks passed" : "some checks FAILED");
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_emd_eval(const ExperimentConfig& cfg, const std::vector<std::string>& selectors,
                 const std::string& points_a, const std::string& points_b) {
  if (!points_a.empty() || !points_b.empty()) {
    if (points_a.empty() || points_b.empty()) throw ConfigError("--points-a and --points-b go together");
    const double d = emd(load_csv_embeddings(points_a).features, load_csv_embeddings(points_b).features);
    std::printf("emd %.9g\n", d);
    return kExitOk;
  }
  Stopwatch sw;
  RunWriter w(cfg.out, "emd-eval", to_json(cfg));
  const auto fed = split_domains(cfg.load_domains(), cfg.data.target_domain);
  std::string csv = "selector,cycle,emd\n";
  for (const auto& name : selectors) {
    FalConfig fc = cfg.fal_config();
    fc.selector = parse_selector(name);
    const auto res = run_fal(fc, fed);
    w.time("campaign_" + name, sw.lap());
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : res.cycles) {
      csv += name + "," + std::to_string(c.cycle) + "," +
             (std::isnan(c.emd) ? std::string("nan") : format_double(c.emd)) + "\n";
      if (!std::isnan(c.emd)) {
        sum += c.emd;
        ++n;
      }
    }
    if (n == 0) {
      std::printf("%s: no selections\n", name.c_str());
    } else {
      std::printf("%s: mean emd %.6f over %zu cycles\n", name.c_str(), sum / static_cast<double>(n), n);
    }
  }
  w.write("emd.csv", csv);
  w.finish();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated domain generalisation and active learning simulator"};
  app.require_subcommand(1);

  Overrides o;
  const auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "run seed (overrides the config)");
    sub->add_option("--threads", o.threads, "worker threads for client training")->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "write one CSV per domain");
  add_common(gen);

  bool all_targets = false;
  auto* fdg = app.add_subcommand("train-fdg", "federated training, leave-one-domain-out");
  add_common(fdg);
  fdg->add_option("--baseline", o.baseline, "feda or fedavg");
  fdg->add_flag("--all-targets", all_targets, "hold out each domain in turn");

  auto* fal = app.add_subcommand("run-fal", "federated active-learning campaign");
  add_common(fal);
  fal->add_option("--selector", o.selector, "random, entropy, coreset, energy, fedal, fedalv");
  fal->add_option("--baseline", o.baseline, "feda or fedavg");

  std::optional<std::string> fault;
  std::optional<std::string> verify_out;
  auto* ver = app.add_subcommand("verify", "gradient checks and exactness laws");
  ver->add_option("--out", verify_out, "write verify.csv and a manifest here");
  ver->add_option("--inject-fault", fault, "corrupt one analytic gradient")->group("");

  std::vector<std::string> emd_selectors{"fedalv", "coreset"};
  std::string points_a;
  std::string points_b;
  auto* emdc = app.add_subcommand("emd-eval", "EMD between selections and high-energy targets");
  add_common(emdc);
  emdc->add_option("--selector", emd_selectors, "selectors to compare")->delimiter(',');
  emdc->add_option("--points-a", points_a, "CSV point set (label,f1,...)");
  emdc->add_option("--points-b", points_b, "CSV point set (label,f1,...)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ver) return cmd_verify(fault, verify_out);
    if (*emdc && (!points_a.empty() || !points_b.empty())) {
      return cmd_emd_eval(ExperimentConfig{}, emd_selectors, points_a, points_b);
    }
    const ExperimentConfig cfg = resolve(o);
    if (*gen) return cmd_gen_data(cfg);
    if (*fdg) return cmd_train_fdg(cfg, all_targets);
    if (*fal) return cmd_run_fal(cfg);
    if (*emdc) {
      for (const auto& s : emd_selectors) parse_selector(s);
      return cmd_emd_eval(cfg, emd_selectors, points_a, points_b);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitOk;
}
