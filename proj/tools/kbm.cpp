// Command-line runner for the named experiments.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kbm/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Kinetic Brownian motion experiments"};
  app.require_subcommand(1, 1);

  kbm::ExperimentConfig cfg;
  std::string config_file;
  std::string sigma, alpha, coords;

  for (const auto& name : kbm::experiment_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_file, "flat key=value file applied before the flags");
    sub->add_option("--seed", cfg.seed, "root seed");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--replicas", cfg.replicas, "ensemble size");
    sub->add_option("--dt", cfg.dt, "time step");
    sub->add_option("--T", cfg.T, "horizon");
    sub->add_option("--sigma", sigma, "speed parameter(s), comma separated");
    sub->add_option("--cutoff", cfg.cutoff, "Fourier cutoff K");
    sub->add_option("--sobolev-s", cfg.s, "Sobolev exponent s of the velocity sphere");
    sub->add_option("--sobolev-a", cfg.a, "roughness exponent a of the noise");
    sub->add_option("--grid", cfg.grid, "particle grid size M");
    sub->add_option("--isotropic", cfg.isotropic, "use the identity covariance on R^d");
    sub->add_option("--alpha", alpha, "explicit standard deviations, comma separated");
    sub->add_option("--coords", coords, "coordinates tested by invariant-check");
    sub->add_flag("--zero-omega", cfg.zero_omega, "geodesic from omega = 0");
    sub->add_option("--threads", cfg.threads, "worker threads for replica fan-out");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    kbm::ExperimentConfig merged;
    if (!config_file.empty()) kbm::load_config_file(merged, config_file);
    // explicit flags override the file
    auto given = [&](const char* flag) { return sub->count(flag) > 0; };
    if (given("--seed")) merged.seed = cfg.seed;
    if (given("--out")) merged.out = cfg.out;
    if (given("--replicas")) merged.replicas = cfg.replicas;
    if (given("--dt")) merged.dt = cfg.dt;
    if (given("--T")) merged.T = cfg.T;
    if (given("--sigma")) merged.set("sigma", sigma);
    if (given("--cutoff")) merged.cutoff = cfg.cutoff;
    if (given("--sobolev-s")) merged.s = cfg.s;
    if (given("--sobolev-a")) merged.a = cfg.a;
    if (given("--grid")) merged.grid = cfg.grid;
    if (given("--isotropic")) merged.isotropic = cfg.isotropic;
    if (given("--alpha")) merged.set("alpha", alpha);
    if (given("--coords")) merged.set("coords", coords);
    if (given("--zero-omega")) merged.zero_omega = cfg.zero_omega;
    if (given("--threads")) merged.threads = cfg.threads;
    merged.experiment = sub->get_name();

    std::vector<kbm::Assertion> report;
    const int status = kbm::run_experiment(merged, &report);
    for (const auto& a : report)
      std::printf("%-44s %s value=%s bound=%s\n", a.name.c_str(), a.pass ? "PASS" : "FAIL",
                  kbm::csv::num(a.value).c_str(), kbm::csv::num(a.bound).c_str());
    return status;
  } catch (const kbm::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
