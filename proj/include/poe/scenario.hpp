#pragma once

// Declarative scenario description and its JSON schema.
//
// {
//   "name": "fig2_normal", "seed": 42,
//   "world": {"dsrc_range": 300,
//             "base_stations": [{"id": 1, "x": 0, "y": 0}],
//             "vehicles": [{"id": 1, "plate": "A", "vin": "...", "x": 0, "y": 0,
//                           "vx": 13.4, "vy": 0, "reputation": 60,
//                           "key_seed": "<64 hex>",          (optional)
//                           "speed_sensor_override": 8.9,    (optional)
//                           "observation_bias": 0.0}]},      (optional)
//   "accident": {"colliding": [1, 2], "time_ms": 60000},
//   "protocol": {"m": 5, "threshold_n": 3, "min_reputation": 30,
//                "reply_window_ms": 500, "validation_deadline_ms": 2000,
//                "edr_capacity": 600, "edr_period_ms": 100, "edr_half_width_ms": 5000,
//                "reward_witness": 1, "reward_verifier": 1, "penalty": 5},
//   "latency": {"dsrc_ms": 10, "cellular_ms": 50, "loss_rate": 0},
//   "attacks": [{"type": "tamper_event", "attacker": 3, "field": "speed", "delta": 5}, ...]
// }

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "poe/crypto.hpp"
#include "poe/event.hpp"
#include "poe/net.hpp"
#include "poe/protocol.hpp"

namespace poe {

enum class TamperField { Speed, Heading, LocationX, LocationY, Timestamp };

struct TamperEvent {
  VehicleId attacker;
  TamperField field = TamperField::Speed;
  double delta = 0.0;
};

struct Impersonate {
  VehicleId attacker;
  VehicleId claimed_id;
};

struct FakeWitnessRelay {
  VehicleId relayer;
  std::vector<VehicleId> fake_witnesses;
  Millis relay_delay = 0;
};

struct ColludingVerifiers {
  std::vector<VehicleId> members;
  std::string behavior = "approve_tampered";
};

using AttackSpec = std::variant<TamperEvent, Impersonate, FakeWitnessRelay, ColludingVerifiers>;

inline const char* attack_name(const AttackSpec& a) {
  static constexpr const char* kNames[] = {"tamper_event", "impersonate", "fake_witness_relay", "colluding_verifiers"};
  return kNames[a.index()];
}

struct VehicleSpec {
  VehicleId id;
  std::string plate;
  std::string vin;
  VehicleState state;
  double reputation = 50.0;
  std::optional<KeySeed> key_seed;
  std::optional<double> speed_sensor_override;
  double observation_bias = 0.0;
};

struct EdrConfig {
  std::size_t capacity = kDefaultEdrCapacity;
  Millis period = kDefaultEdrPeriod;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  double dsrc_range = kDefaultDsrcRange;
  std::vector<BaseStation> base_stations;
  std::vector<VehicleSpec> vehicles;
  std::set<VehicleId> colliding;
  Millis accident_time = 60000;
  ProtocolParams params;
  EdrConfig edr;
  double loss_rate = 0.0;
  std::vector<AttackSpec> attacks;

  WorldState world() const {
    WorldState w;
    w.dsrc_range = dsrc_range;
    w.base_stations = base_stations;
    for (const auto& v : vehicles) w.vehicles.emplace(v.id, v.state);
    return w;
  }

  DmvRegistry registry() const {
    DmvRegistry r;
    for (const auto& v : vehicles) {
      const auto kp = keygen(v.key_seed.value_or(default_key_seed(v.id)));
      r.add(v.id, RegistryEntry{v.plate, v.vin, kp.public_key, ReputationScore(v.reputation)});
    }
    return r;
  }

  const VehicleSpec* find(VehicleId id) const {
    for (const auto& v : vehicles)
      if (v.id == id) return &v;
    return nullptr;
  }
};

namespace detail {

inline void check_vehicle(const ScenarioConfig& cfg, VehicleId id, const std::string& path, ErrorKind kind) {
  if (!cfg.find(id)) throw Error(kind, path + ": vehicle " + to_string(id) + " does not exist");
}

inline void validate_attack(const ScenarioConfig& cfg, const AttackSpec& spec, const std::string& path) {
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        const auto kind = ErrorKind::InvalidAttack;
        if constexpr (std::is_same_v<T, TamperEvent>) {
          check_vehicle(cfg, a.attacker, path + ".attacker", kind);
          if (!std::isfinite(a.delta) || a.delta == 0.0) throw Error(kind, path + ".delta: must be finite and non-zero");
        } else if constexpr (std::is_same_v<T, Impersonate>) {
          check_vehicle(cfg, a.attacker, path + ".attacker", kind);
          if (a.claimed_id == a.attacker) throw Error(kind, path + ".claimed_id: must differ from the attacker");
          if (a.claimed_id == kDmvId) throw Error(kind, path + ".claimed_id: 0 is reserved for the DMV");
        } else if constexpr (std::is_same_v<T, FakeWitnessRelay>) {
          check_vehicle(cfg, a.relayer, path + ".relayer", kind);
          if (a.fake_witnesses.empty()) throw Error(kind, path + ".fake_witnesses: must not be empty");
          for (std::size_t i = 0; i < a.fake_witnesses.size(); ++i)
            check_vehicle(cfg, a.fake_witnesses[i], path + ".fake_witnesses[" + std::to_string(i) + "]", kind);
          if (a.relay_delay < 0) throw Error(kind, path + ".relay_delay_ms: must be non-negative");
        } else {
          if (a.behavior != "approve_tampered")
            throw Error(kind, path + ".behavior: only approve_tampered is supported");
          for (std::size_t i = 0; i < a.members.size(); ++i)
            check_vehicle(cfg, a.members[i], path + ".members[" + std::to_string(i) + "]", kind);
        }
      },
      spec);
}

}  // namespace detail

/// Throws InvalidConfig (or InvalidAttack) naming the offending field path.
inline void validate(const ScenarioConfig& cfg) {
  auto fail = [](const std::string& path, const std::string& why) { throw Error(ErrorKind::InvalidConfig, path + ": " + why); };
  if (!(cfg.dsrc_range > 0.0) || !std::isfinite(cfg.dsrc_range)) fail("world.dsrc_range", "must be positive");
  if (cfg.base_stations.empty()) fail("world.base_stations", "at least one base station is required");
  std::set<std::uint32_t> cells;
  for (std::size_t i = 0; i < cfg.base_stations.size(); ++i) {
    const auto& s = cfg.base_stations[i];
    if (!cells.insert(s.id.value).second) fail("world.base_stations[" + std::to_string(i) + "].id", "duplicate cell id");
    if (!std::isfinite(s.position.x) || !std::isfinite(s.position.y))
      fail("world.base_stations[" + std::to_string(i) + "]", "position must be finite");
  }
  std::set<VehicleId> ids;
  for (std::size_t i = 0; i < cfg.vehicles.size(); ++i) {
    const auto& v = cfg.vehicles[i];
    const auto path = "world.vehicles[" + std::to_string(i) + "]";
    if (v.id == kDmvId) fail(path + ".id", "0 is reserved for the DMV");
    if (!ids.insert(v.id).second) fail(path + ".id", "duplicate vehicle id");
    if (!std::isfinite(v.state.position.x) || !std::isfinite(v.state.position.y) || !std::isfinite(v.state.velocity.vx) ||
        !std::isfinite(v.state.velocity.vy))
      fail(path, "position and velocity must be finite");
    if (v.reputation < 0.0 || v.reputation > 100.0) fail(path + ".reputation", "must be in [0, 100]");
    if (v.speed_sensor_override && *v.speed_sensor_override < 0.0)
      fail(path + ".speed_sensor_override", "must be non-negative");
  }
  if (cfg.colliding.empty()) fail("accident.colliding", "at least one colliding vehicle is required");
  for (auto id : cfg.colliding)
    if (!ids.contains(id)) fail("accident.colliding", "vehicle " + to_string(id) + " does not exist");
  if (cfg.accident_time < 0) fail("accident.time_ms", "must be non-negative");
  if (cfg.params.federation_size < 1) fail("protocol.m", "must be at least 1");
  if (cfg.params.threshold_n && *cfg.params.threshold_n < 1) fail("protocol.threshold_n", "must be at least 1");
  if (cfg.params.reply_window < 0) fail("protocol.reply_window_ms", "must be non-negative");
  if (cfg.params.validation_deadline < 0) fail("protocol.validation_deadline_ms", "must be non-negative");
  if (cfg.params.edr_half_width < 0) fail("protocol.edr_half_width_ms", "must be non-negative");
  if (cfg.edr.period <= 0) fail("protocol.edr_period_ms", "must be positive");
  if (cfg.params.dsrc_latency < 0) fail("latency.dsrc_ms", "must be non-negative");
  if (cfg.params.cellular_latency < 0) fail("latency.cellular_ms", "must be non-negative");
  if (!(cfg.loss_rate >= 0.0 && cfg.loss_rate <= 1.0)) fail("latency.loss_rate", "must be in [0, 1]");
  for (std::size_t i = 0; i < cfg.attacks.size(); ++i)
    detail::validate_attack(cfg, cfg.attacks[i], "attacks[" + std::to_string(i) + "]");
}

/// Returns cfg with the attack attached; everything else is unchanged.
inline ScenarioConfig inject_attack(ScenarioConfig cfg, const AttackSpec& spec) {
  detail::validate_attack(cfg, spec, "attack");
  cfg.attacks.push_back(spec);
  return cfg;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using nlohmann::json;

template <typename T>
T get(const json& j, const std::string& key, const std::string& path, ErrorKind kind = ErrorKind::InvalidConfig) {
  if (!j.is_object() || !j.contains(key)) throw Error(kind, path + "." + key + ": missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(kind, path + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& path,
         ErrorKind kind = ErrorKind::InvalidConfig) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return get<T>(j, key, path, kind);
}

inline VehicleId get_id(const json& j, const std::string& key, const std::string& path,
                        ErrorKind kind = ErrorKind::InvalidConfig) {
  return VehicleId{get<std::uint32_t>(j, key, path, kind)};
}

inline std::vector<VehicleId> get_ids(const json& j, const std::string& key, const std::string& path,
                                      ErrorKind kind = ErrorKind::InvalidConfig) {
  std::vector<VehicleId> out;
  for (auto v : get<std::vector<std::uint32_t>>(j, key, path, kind)) out.push_back(VehicleId{v});
  return out;
}

inline TamperField parse_tamper_field(const std::string& s, const std::string& path) {
  if (s == "speed") return TamperField::Speed;
  if (s == "heading") return TamperField::Heading;
  if (s == "location_x") return TamperField::LocationX;
  if (s == "location_y") return TamperField::LocationY;
  if (s == "timestamp") return TamperField::Timestamp;
  throw Error(ErrorKind::InvalidAttack, path + ".field: unknown field '" + s + "'");
}

}  // namespace detail

inline const char* to_string(TamperField f) {
  switch (f) {
    case TamperField::Speed: return "speed";
    case TamperField::Heading: return "heading";
    case TamperField::LocationX: return "location_x";
    case TamperField::LocationY: return "location_y";
    case TamperField::Timestamp: return "timestamp";
  }
  return "?";
}

inline AttackSpec parse_attack(const nlohmann::json& j, const std::string& path = "attack") {
  using detail::get;
  const auto kind = ErrorKind::InvalidAttack;
  const auto type = get<std::string>(j, "type", path, kind);
  if (type == "tamper_event") {
    return TamperEvent{detail::get_id(j, "attacker", path, kind),
                       detail::parse_tamper_field(get<std::string>(j, "field", path, kind), path),
                       get<double>(j, "delta", path, kind)};
  }
  if (type == "impersonate") {
    return Impersonate{detail::get_id(j, "attacker", path, kind), detail::get_id(j, "claimed_id", path, kind)};
  }
  if (type == "fake_witness_relay") {
    return FakeWitnessRelay{detail::get_id(j, "relayer", path, kind), detail::get_ids(j, "fake_witnesses", path, kind),
                            get<Millis>(j, "relay_delay_ms", path, kind)};
  }
  if (type == "colluding_verifiers") {
    return ColludingVerifiers{detail::get_ids(j, "members", path, kind),
                              detail::get_or<std::string>(j, "behavior", "approve_tampered", path, kind)};
  }
  throw Error(kind, path + ".type: unknown attack type '" + type + "'");
}

/// Accepts a single attack object, an array of them, or {"attacks": [...]}.
inline std::vector<AttackSpec> parse_attacks(const nlohmann::json& j) {
  std::vector<AttackSpec> out;
  const auto& list = j.is_object() && j.contains("attacks") ? j.at("attacks") : j;
  if (list.is_array()) {
    for (std::size_t i = 0; i < list.size(); ++i) out.push_back(parse_attack(list[i], "attacks[" + std::to_string(i) + "]"));
  } else {
    out.push_back(parse_attack(list));
  }
  return out;
}

inline ScenarioConfig parse_scenario(const nlohmann::json& j) {
  using detail::get;
  using detail::get_or;
  ScenarioConfig cfg;
  cfg.name = get_or<std::string>(j, "name", "scenario", "");
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "");

  const auto& world = j.contains("world") ? j.at("world") : throw Error(ErrorKind::InvalidConfig, "world: missing");
  cfg.dsrc_range = get_or<double>(world, "dsrc_range", kDefaultDsrcRange, "world");
  const auto stations = get<nlohmann::json>(world, "base_stations", "world");
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const auto path = "world.base_stations[" + std::to_string(i) + "]";
    cfg.base_stations.push_back(BaseStation{CellId{get<std::uint32_t>(stations[i], "id", path)},
                                            Position{get<double>(stations[i], "x", path), get<double>(stations[i], "y", path)}});
  }
  const auto vehicles = get<nlohmann::json>(world, "vehicles", "world");
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    const auto path = "world.vehicles[" + std::to_string(i) + "]";
    VehicleSpec spec;
    spec.id = detail::get_id(v, "id", path);
    spec.plate = get_or<std::string>(v, "plate", "V" + std::to_string(spec.id.value), path);
    spec.vin = get_or<std::string>(v, "vin", "VIN" + std::to_string(spec.id.value), path);
    spec.state.position = Position{get<double>(v, "x", path), get<double>(v, "y", path)};
    spec.state.velocity = Velocity{get_or<double>(v, "vx", 0.0, path), get_or<double>(v, "vy", 0.0, path)};
    spec.reputation = get_or<double>(v, "reputation", 50.0, path);
    if (v.contains("key_seed") && !v.at("key_seed").is_null()) {
      Bytes seed;
      try {
        seed = from_hex(get<std::string>(v, "key_seed", path));
      } catch (const Error& e) {
        throw Error(ErrorKind::InvalidConfig, path + ".key_seed: " + e.what());
      }
      if (seed.size() != 32) throw Error(ErrorKind::InvalidConfig, path + ".key_seed: must be 32 bytes of hex");
      KeySeed ks{};
      std::copy(seed.begin(), seed.end(), ks.begin());
      spec.key_seed = ks;
    }
    if (v.contains("speed_sensor_override") && !v.at("speed_sensor_override").is_null())
      spec.speed_sensor_override = get<double>(v, "speed_sensor_override", path);
    spec.observation_bias = get_or<double>(v, "observation_bias", 0.0, path);
    cfg.vehicles.push_back(std::move(spec));
  }

  const auto& accident = j.contains("accident") ? j.at("accident") : throw Error(ErrorKind::InvalidConfig, "accident: missing");
  for (auto id : detail::get_ids(accident, "colliding", "accident")) cfg.colliding.insert(id);
  cfg.accident_time = get_or<Millis>(accident, "time_ms", 60000, "accident");

  const auto proto = j.contains("protocol") ? j.at("protocol") : nlohmann::json::object();
  auto& p = cfg.params;
  p.federation_size = get_or<std::uint32_t>(proto, "m", p.federation_size, "protocol");
  if (proto.contains("threshold_n") && !proto.at("threshold_n").is_null())
    p.threshold_n = get<std::uint32_t>(proto, "threshold_n", "protocol");
  p.min_reputation = get_or<double>(proto, "min_reputation", p.min_reputation, "protocol");
  p.reply_window = get_or<Millis>(proto, "reply_window_ms", p.reply_window, "protocol");
  p.validation_deadline = get_or<Millis>(proto, "validation_deadline_ms", p.validation_deadline, "protocol");
  p.edr_half_width = get_or<Millis>(proto, "edr_half_width_ms", p.edr_half_width, "protocol");
  cfg.edr.capacity = get_or<std::size_t>(proto, "edr_capacity", cfg.edr.capacity, "protocol");
  cfg.edr.period = get_or<Millis>(proto, "edr_period_ms", cfg.edr.period, "protocol");
  p.incentives.reward_witness = get_or<double>(proto, "reward_witness", p.incentives.reward_witness, "protocol");
  p.incentives.reward_verifier = get_or<double>(proto, "reward_verifier", p.incentives.reward_verifier, "protocol");
  p.incentives.penalty = get_or<double>(proto, "penalty", p.incentives.penalty, "protocol");

  const auto latency = j.contains("latency") ? j.at("latency") : nlohmann::json::object();
  p.dsrc_latency = get_or<Millis>(latency, "dsrc_ms", p.dsrc_latency, "latency");
  p.cellular_latency = get_or<Millis>(latency, "cellular_ms", p.cellular_latency, "latency");
  cfg.loss_rate = get_or<double>(latency, "loss_rate", 0.0, "latency");

  if (j.contains("attacks")) {
    const auto& attacks = j.at("attacks");
    if (!attacks.is_array()) throw Error(ErrorKind::InvalidConfig, "attacks: must be an array");
    for (std::size_t i = 0; i < attacks.size(); ++i)
      cfg.attacks.push_back(parse_attack(attacks[i], "attacks[" + std::to_string(i) + "]"));
  }
  validate(cfg);
  return cfg;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path + ": " + e.what());
  }
}

inline ScenarioConfig load_scenario(const std::string& path) { return parse_scenario(read_json_file(path)); }

}  // namespace poe
