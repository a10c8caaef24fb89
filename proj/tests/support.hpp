#pragma once

// Shared fixtures for the test suites.

#include <openssl/sha.h>

#include <filesystem>
#include <random>
#include <string>

#include "poe/poe.hpp"

namespace poe::test {

inline std::string scenario_path(const std::string& name) {
  return std::string(POE_SCENARIO_DIR) + "/" + name + ".json";
}

inline ScenarioConfig load(const std::string& name) { return load_scenario(scenario_path(name)); }

/// Independent SHA-256 for cross-checking the library's digest.
inline Digest256 openssl_sha256(std::span<const std::uint8_t> data) {
  Digest256 out{};
  SHA256(data.data(), data.size(), out.data());
  return out;
}

inline Digest256 openssl_sha256(std::string_view s) {
  return openssl_sha256(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline KeyPair key_of(VehicleId id) { return keygen(default_key_seed(id)); }

inline RegistryEntry entry_for(VehicleId id, double reputation) {
  return RegistryEntry{"P" + to_string(id), "VIN" + to_string(id), key_of(id).public_key, ReputationScore(reputation)};
}

/// Registry of ids [1, n] with the given reputation.
inline DmvRegistry registry_of(std::uint32_t n, double reputation = 50.0) {
  DmvRegistry r;
  for (std::uint32_t i = 1; i <= n; ++i) r.add(VehicleId{i}, entry_for(VehicleId{i}, reputation));
  return r;
}

/// A steady EDR: one sample every 100 ms in [0, end].
inline EdrLog steady_log(Millis end, double speed = 12.0, std::size_t capacity = kDefaultEdrCapacity) {
  EdrLog log(capacity);
  for (Millis t = 0; t <= end; t += 100) {
    EdrSample s;
    s.t = t;
    s.position = Position{static_cast<double>(t) / 100.0, 0.0};
    s.speed = speed;
    s.heading = 90.0;
    log.record(s);
  }
  return log;
}

inline EventData honest_event(VehicleId id, EventRole role, const AccidentId& accident, Position where, Millis now,
                              const DmvRegistry& registry, Millis half_width = 500) {
  const auto keys = key_of(id);
  const auto log = steady_log(now);
  return make_event_data(Reporter{id, keys, where, log}, role, accident, now, WindowParams{now, half_width}, registry);
}

inline AccidentId accident_n(std::uint32_t n) {
  return derive_accident_id(CellId{1}, 1000 + n, {VehicleId{1}, VehicleId{2}});
}

/// A correctly signed block for `accident`: every federation member in
/// `signers` signs the candidate digest.
inline Block signed_block(const AccidentId& accident, std::vector<EventData> events, const std::vector<VehicleId>& members,
                          std::uint32_t threshold, const std::vector<VehicleId>& signers, std::uint64_t height,
                          const Digest256& prev) {
  sort_events(events);
  Block b;
  b.height = height;
  b.prev_hash = prev;
  b.accident_id = accident;
  b.events = std::move(events);
  b.multisig.federation = members;
  b.multisig.threshold_n = threshold;
  b.leader = members.front();
  b.created_at = 2000 + static_cast<Millis>(height);
  const auto d = block_signing_digest(b);
  for (auto s : signers) b.multisig.signatures.emplace(s, sign(key_of(s).secret_key, d));
  b.block_hash = compute_block_hash(b);
  return b;
}

/// A valid chain of `n` blocks over a registry of ids [1, 10].
inline Ledger honest_chain(std::size_t n, const DmvRegistry& registry) {
  Ledger ledger;
  const std::vector<VehicleId> members{VehicleId{6}, VehicleId{7}, VehicleId{8}, VehicleId{9}};
  for (std::size_t h = 0; h < n; ++h) {
    const auto acc = accident_n(static_cast<std::uint32_t>(h));
    std::vector<EventData> events{honest_event(VehicleId{1}, EventRole::Accident, acc, {0, 0}, 1000, registry),
                                  honest_event(VehicleId{3}, EventRole::Witness, acc, {50, 0}, 1010, registry)};
    auto b = signed_block(acc, events, members, 3, {members[0], members[1], members[2]}, h, ledger.tip_hash());
    if (ledger.append_block(b, registry) != BlockStatus::Ok) throw std::runtime_error("fixture chain rejected");
  }
  return ledger;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("poe_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace poe::test
