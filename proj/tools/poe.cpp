// poe: run scenarios, inject attacks, verify ledgers and review accidents.
//
// Exit codes: 0 success, 1 internal failure or invalid chain, 2 bad input.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "poe/poe.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kBadInput = 2;

bool is_input_error(poe::ErrorKind k) {
  using poe::ErrorKind;
  return k == ErrorKind::InvalidConfig || k == ErrorKind::InvalidAttack || k == ErrorKind::Io ||
         k == ErrorKind::Decode || k == ErrorKind::NotFound;
}

poe::Ledger load_ledger(const std::string& path) {
  const auto bytes = poe::read_file(path);
  auto parsed = poe::parse_ledger_file(bytes);
  if (parsed.bad_record) throw poe::Error(poe::ErrorKind::Decode, path + ": " + parsed.error);
  std::vector<poe::UnconfirmedEventRecord> unconfirmed;
  const auto sidecar = fs::path(path).replace_extension(".poeu");
  if (fs::exists(sidecar)) unconfirmed = poe::parse_unconfirmed_file(poe::read_file(sidecar.string()));
  return poe::Ledger::from_parts(std::move(parsed.blocks), std::move(unconfirmed));
}

void print_summary(const poe::SimOutcome& o, const fs::path& out_dir) {
  std::printf("classification: %s, blocks: %zu\n", poe::to_string(o.classification), o.metrics.blocks_produced);
  std::printf("accident: %s\n", poe::to_hex(o.accident_id).c_str());
  std::printf("events accepted: %zu, rejected: %zu, unconfirmed records: %zu\n", o.metrics.events_accepted,
              o.metrics.events_rejected.size(), o.metrics.unconfirmed_records);
  for (const auto& r : o.metrics.events_rejected) {
    std::string reasons;
    for (const auto& s : r.reasons) reasons += (reasons.empty() ? "" : ", ") + s;
    std::printf("  rejected %s event from %u: %s\n", poe::to_string(r.role), r.reporter.value, reasons.c_str());
  }
  std::printf("ledger height: %zu\n", o.ledger.blocks().size());
  std::printf("output: %s\n", out_dir.string().c_str());
}

int simulate(poe::ScenarioConfig cfg, const std::optional<std::uint64_t>& seed, const std::string& ledger_path,
             const fs::path& out_dir, const char* command) {
  if (seed) cfg.seed = *seed;
  poe::Ledger base;
  if (!ledger_path.empty()) base = load_ledger(ledger_path);
  std::printf("poe %s: scenario %s, seed %llu\n", command, cfg.name.c_str(), static_cast<unsigned long long>(cfg.seed));
  const auto outcome = poe::run_scenario(cfg, std::move(base));
  poe::write_outputs(outcome, out_dir, poe::parse_log_level(std::getenv("POE_LOG")));
  print_summary(outcome, out_dir);
  for (const auto& a : outcome.metrics.attack_outcomes) std::printf("attack %s: %s\n", a.attack.c_str(), a.summary().c_str());
  return kOk;
}

int cmd_verify(const std::string& ledger_path, const std::string& scenario_path) {
  const auto bytes = poe::read_file(ledger_path);
  const auto parsed = poe::parse_ledger_file(bytes);
  if (parsed.bad_header) {
    std::fprintf(stderr, "error: %s: %s\n", ledger_path.c_str(), parsed.error.c_str());
    return kBadInput;
  }
  poe::DmvRegistry registry;
  if (!scenario_path.empty()) {
    registry = poe::load_scenario(scenario_path).registry();
  } else {
    const auto path = fs::path(ledger_path).parent_path() / poe::OutputFiles::kRegistry;
    registry = poe::parse_registry(poe::read_json_file(path.string()));
  }
  const auto report = poe::verify_ledger_bytes(bytes, registry);
  if (report.framing_error) {
    std::fprintf(stderr, "error: %s\n", report.framing_error->c_str());
    std::printf("invalid, first_bad_height: %llu\n", static_cast<unsigned long long>(*report.first_bad_height));
    return kBadInput;
  }
  for (std::size_t h = 0; h < report.statuses.size(); ++h)
    std::printf("  block %zu: %s\n", h, poe::to_string(report.statuses[h]));
  if (report.valid) {
    std::printf("valid, %zu blocks\n", parsed.blocks.size());
    return kOk;
  }
  std::printf("invalid, first_bad_height: %llu\n", static_cast<unsigned long long>(*report.first_bad_height));
  return kFailure;
}

int cmd_forensics(const std::string& ledger_path, const std::string& accident_hex, double tolerance) {
  const auto id_bytes = poe::from_hex(accident_hex);
  poe::AccidentId id{};
  if (id_bytes.size() != id.size()) throw poe::Error(poe::ErrorKind::InvalidConfig, "--accident must be 32 hex digits");
  std::copy(id_bytes.begin(), id_bytes.end(), id.begin());
  const auto report = poe::forensic_review(load_ledger(ledger_path), id, tolerance);
  std::printf("accident %s, block %llu, tolerance %.2f m/s\n", accident_hex.c_str(),
              static_cast<unsigned long long>(report.block_height), tolerance);
  std::printf("%-8s %10s %10s %10s %10s  %s\n", "vehicle", "self", "median", "spread", "witnesses", "flag");
  std::size_t flags = 0;
  for (const auto& c : report.comparisons) {
    auto num = [](const std::optional<double>& v) { return v ? std::to_string(*v).substr(0, 6) : std::string("-"); };
    std::printf("%-8u %10s %10s %10s %10zu  %s\n", c.subject.value, num(c.self_reported).c_str(), num(c.median).c_str(),
                num(c.spread).c_str(), c.witness_estimates.size(), c.flagged ? "FLAGGED" : "");
    flags += c.flagged ? 1 : 0;
  }
  std::printf("flags: %zu\n", flags);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proof-of-event accident recording simulator"};
  app.require_subcommand(1);

  std::string scenario, out_dir = "out", ledger, accident, attack;
  std::optional<std::uint64_t> seed;
  double tolerance = poe::kDefaultSpeedTolerance;

  auto* run = app.add_subcommand("run", "Run a scenario and write the ledger, transcript and metrics");
  run->add_option("--scenario", scenario, "Scenario JSON file")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--ledger", ledger, "Existing ledger to extend");

  auto* verify = app.add_subcommand("verify", "Verify a ledger file");
  verify->add_option("--ledger", ledger, "Ledger file")->required();
  verify->add_option("--scenario", scenario, "Scenario providing the registry (default: registry.json beside the ledger)");

  auto* forensics = app.add_subcommand("forensics", "Cross-check recorded speeds for one accident");
  forensics->add_option("--ledger", ledger, "Ledger file")->required();
  forensics->add_option("--accident", accident, "Accident id (hex)")->required();
  forensics->add_option("--tolerance", tolerance, "Speed tolerance in m/s")->check(CLI::NonNegativeNumber);

  auto* attack_cmd = app.add_subcommand("attack", "Run a scenario with an attack injected");
  attack_cmd->add_option("--scenario", scenario, "Scenario JSON file")->required();
  attack_cmd->add_option("--attack", attack, "Attack spec JSON file")->required();
  attack_cmd->add_option("--out", out_dir, "Output directory");
  attack_cmd->add_option("--seed", seed, "Override the scenario seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (*run) return simulate(poe::load_scenario(scenario), seed, ledger, out_dir, "run");
    if (*verify) return cmd_verify(ledger, scenario);
    if (*forensics) return cmd_forensics(ledger, accident, tolerance);
    if (*attack_cmd) {
      auto cfg = poe::load_scenario(scenario);
      for (const auto& spec : poe::parse_attacks(poe::read_json_file(attack))) cfg = poe::inject_attack(cfg, spec);
      return simulate(std::move(cfg), seed, "", out_dir, "attack");
    }
  } catch (const poe::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return is_input_error(e.kind()) ? kBadInput : kFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
