#pragma once

// Per-vehicle protocol: accident detection, witness confirmation and event
// broadcast, federation formation, validation, and leader-driven n-of-m
// block creation. protocol_step is a pure transition over NodeState.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "poe/canonical.hpp"
#include "poe/crypto.hpp"
#include "poe/event.hpp"
#include "poe/ledger.hpp"
#include "poe/net.hpp"

namespace poe {

/// Receiver id reserved for the DMV. Vehicle ids start at 1.
inline constexpr VehicleId kDmvId{0};

enum class Role : std::uint8_t { Accident, Witness, Community, Verifier, LeadVerifier };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::Accident: return "Accident";
    case Role::Witness: return "Witness";
    case Role::Community: return "Community";
    case Role::Verifier: return "Verifier";
    case Role::LeadVerifier: return "LeadVerifier";
  }
  return "?";
}

struct IncentiveParams {
  double reward_witness = 1.0;
  double reward_verifier = 1.0;
  double penalty = 5.0;
};

struct ProtocolParams {
  std::uint32_t federation_size = 5;               // m
  std::optional<std::uint32_t> threshold_n;        // default floor(2m/3) + 1
  double min_reputation = 30.0;
  Millis reply_window = 500;
  Millis validation_deadline = 2000;
  Millis dsrc_latency = 10;
  Millis cellular_latency = 50;
  Millis edr_half_width = kDefaultEdrHalfWidth;
  IncentiveParams incentives;
};

inline std::uint32_t default_threshold(std::size_t m) { return static_cast<std::uint32_t>((2 * m) / 3 + 1); }

/// Read-only knowledge shared by every node during one protocol run.
struct ProtocolContext {
  const WorldState& world;
  const DmvRegistry& registry;
  ProtocolParams params;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Messages

struct EventGenerationRequest {
  AccidentId accident_id{};
  VehicleId origin;
  Millis sent_at = 0;
  Position scene;
  friend bool operator==(const EventGenerationRequest&, const EventGenerationRequest&) = default;
};

struct WitnessConfirm {
  AccidentId accident_id{};
  VehicleId witness;
  friend bool operator==(const WitnessConfirm&, const WitnessConfirm&) = default;
};

struct EventDataBroadcast {
  EventData event;
  friend bool operator==(const EventDataBroadcast&, const EventDataBroadcast&) = default;
};

struct FederationFormationRequest {
  AccidentId accident_id{};
  VehicleId origin;
  Millis sent_at = 0;
  Position scene;
  std::vector<VehicleId> colliding;
  friend bool operator==(const FederationFormationRequest&, const FederationFormationRequest&) = default;
};

struct VerifierValidation {
  AccidentId accident_id{};
  VehicleId verifier;
  std::map<Digest256, bool> verdicts;  // keyed by event digest
  Signature signature{};               // over the verifier's candidate block digest
  friend bool operator==(const VerifierValidation&, const VerifierValidation&) = default;
};

struct NewBlockAnnouncement {
  Block block;
  friend bool operator==(const NewBlockAnnouncement&, const NewBlockAnnouncement&) = default;
};

struct UnconfirmedSubmission {
  UnconfirmedEventRecord record;
  friend bool operator==(const UnconfirmedSubmission&, const UnconfirmedSubmission&) = default;
};

using Message = std::variant<EventGenerationRequest, WitnessConfirm, EventDataBroadcast, FederationFormationRequest,
                             VerifierValidation, NewBlockAnnouncement, UnconfirmedSubmission>;

inline const char* message_name(const Message& m) {
  static constexpr const char* kNames[] = {"EventGenerationRequest", "WitnessConfirm",      "EventDataBroadcast",
                                           "FederationFormationRequest", "VerifierValidation", "NewBlockAnnouncement",
                                           "UnconfirmedEventRecord"};
  return kNames[m.index()];
}

inline const AccidentId& accident_of(const Message& m) {
  return std::visit(
      [](const auto& msg) -> const AccidentId& {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, EventDataBroadcast>) return msg.event.accident_id;
        else if constexpr (std::is_same_v<T, NewBlockAnnouncement>) return msg.block.accident_id;
        else if constexpr (std::is_same_v<T, UnconfirmedSubmission>) return msg.record.accident_id;
        else return msg.accident_id;
      },
      m);
}

/// Wire format: 1-byte type tag (variant index + 1) followed by the canonical body.
inline Bytes encode_message(const Message& m) {
  Writer w;
  w.u8(static_cast<std::uint8_t>(m.index() + 1));
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, EventGenerationRequest>) {
          w.raw(msg.accident_id);
          w.u32(msg.origin.value);
          w.i64(msg.sent_at);
          encode(w, msg.scene);
        } else if constexpr (std::is_same_v<T, WitnessConfirm>) {
          w.raw(msg.accident_id);
          w.u32(msg.witness.value);
        } else if constexpr (std::is_same_v<T, EventDataBroadcast>) {
          encode(w, msg.event);
        } else if constexpr (std::is_same_v<T, FederationFormationRequest>) {
          w.raw(msg.accident_id);
          w.u32(msg.origin.value);
          w.i64(msg.sent_at);
          encode(w, msg.scene);
          w.count(msg.colliding.size());
          for (auto id : msg.colliding) w.u32(id.value);
        } else if constexpr (std::is_same_v<T, VerifierValidation>) {
          w.raw(msg.accident_id);
          w.u32(msg.verifier.value);
          w.count(msg.verdicts.size());
          for (const auto& [d, ok] : msg.verdicts) {
            w.raw(d);
            w.boolean(ok);
          }
          w.raw(msg.signature);
        } else if constexpr (std::is_same_v<T, NewBlockAnnouncement>) {
          w.raw(serialize(msg.block));
        } else {
          encode(w, msg.record);
        }
      },
      m);
  return std::move(w).bytes();
}

inline Message decode_message(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto tag = r.u8();
  Message out;
  switch (tag) {
    case 1: {
      EventGenerationRequest m;
      m.accident_id = r.fixed<16>();
      m.origin = VehicleId{r.u32()};
      m.sent_at = r.i64();
      m.scene = decode_position(r);
      out = m;
      break;
    }
    case 2: {
      WitnessConfirm m;
      m.accident_id = r.fixed<16>();
      m.witness = VehicleId{r.u32()};
      out = m;
      break;
    }
    case 3: out = EventDataBroadcast{decode_event(r)}; break;
    case 4: {
      FederationFormationRequest m;
      m.accident_id = r.fixed<16>();
      m.origin = VehicleId{r.u32()};
      m.sent_at = r.i64();
      m.scene = decode_position(r);
      const auto n = r.count(4);
      for (std::size_t i = 0; i < n; ++i) m.colliding.push_back(VehicleId{r.u32()});
      out = m;
      break;
    }
    case 5: {
      VerifierValidation m;
      m.accident_id = r.fixed<16>();
      m.verifier = VehicleId{r.u32()};
      const auto n = r.count(33);
      for (std::size_t i = 0; i < n; ++i) {
        auto d = r.fixed<32>();
        m.verdicts[d] = r.boolean();
      }
      m.signature = r.fixed<crypto_sign_BYTES>();
      out = m;
      break;
    }
    case 6: out = NewBlockAnnouncement{decode_block(r)}; break;
    case 7: out = UnconfirmedSubmission{decode_unconfirmed(r)}; break;
    default: throw Error(ErrorKind::Decode, "unknown message tag " + std::to_string(tag));
  }
  r.expect_done();
  return out;
}

/// A message plus its sender's signature over the wire bytes.
struct SignedMessage {
  VehicleId sender;
  Message body;
  Signature signature{};
};

inline Digest256 envelope_digest(VehicleId sender, const Message& body) {
  Writer w;
  w.str("poe/envelope");
  w.u32(sender.value);
  w.blob(encode_message(body));
  return digest(w.bytes());
}

inline std::shared_ptr<const SignedMessage> seal(VehicleId sender, Message body, const SecretKey& key) {
  auto sm = std::make_shared<SignedMessage>();
  sm->sender = sender;
  sm->signature = sign(key, envelope_digest(sender, body));
  sm->body = std::move(body);
  return sm;
}

/// True iff the sender is registered and signed this envelope.
inline bool envelope_authentic(const SignedMessage& m, const DmvRegistry& registry) {
  const auto* entry = registry.find(m.sender);
  return entry && verify(entry->public_key, envelope_digest(m.sender, m.body), m.signature);
}

// ---------------------------------------------------------------------------
// Accident detection

enum class Channel : std::uint8_t { Dsrc, Cellular };

/// One send. An empty `to` with `network_broadcast` set means every member of
/// the accident's vehicular network except the sender.
struct Dispatch {
  VehicleId sender;
  Channel channel = Channel::Cellular;
  std::vector<VehicleId> to;
  bool network_broadcast = false;
  Message message;
};

struct AccidentDetection {
  AccidentId accident_id{};
  Position scene;
  std::vector<Dispatch> dispatches;
};

/// The accident scene is the centroid of the colliding vehicles.
inline Position accident_scene(const WorldState& world, const std::set<VehicleId>& colliding) {
  Position p;
  for (auto id : colliding) {
    const auto& v = world.at(id);
    p.x += v.position.x;
    p.y += v.position.y;
  }
  p.x /= static_cast<double>(colliding.size());
  p.y /= static_cast<double>(colliding.size());
  return p;
}

/// Derives the accident id and the detection-time traffic: an event
/// generation request from every colliding vehicle to every other vehicle in
/// DSRC range of the scene, and one federation formation request broadcast
/// by the lowest-id colliding vehicle over the cellular network.
inline AccidentDetection detect_accident(const WorldState& world, const std::set<VehicleId>& colliding, Millis now) {
  if (colliding.empty()) throw Error(ErrorKind::InvalidConfig, "an accident needs at least one colliding vehicle");
  for (auto id : colliding) world.at(id);

  AccidentDetection out;
  const VehicleId coordinator = *colliding.begin();
  const auto first_cell = assign_cell(world.at(coordinator).position, world.base_stations);
  out.accident_id = derive_accident_id(first_cell, now, colliding);
  out.scene = accident_scene(world, colliding);

  std::vector<VehicleId> witnesses;
  for (auto id : dsrc_reachable(out.scene, world))
    if (!colliding.contains(id)) witnesses.push_back(id);

  for (auto origin : colliding) {
    if (witnesses.empty()) break;
    out.dispatches.push_back(
        Dispatch{origin, Channel::Dsrc, witnesses, false, EventGenerationRequest{out.accident_id, origin, now, out.scene}});
  }
  out.dispatches.push_back(Dispatch{coordinator, Channel::Cellular, {}, true,
                                    FederationFormationRequest{out.accident_id, coordinator, now, out.scene,
                                                               std::vector<VehicleId>(colliding.begin(), colliding.end())}});
  return out;
}

// ---------------------------------------------------------------------------
// Federation

struct Federation {
  AccidentId accident_id{};
  std::vector<VehicleId> members;  // ascending id
  VehicleId leader;
  std::uint32_t threshold_n = 1;
  friend bool operator==(const Federation&, const Federation&) = default;
};

struct FederationConfig {
  std::uint32_t m = 5;
  double min_reputation = 30.0;
  std::optional<std::uint32_t> threshold_n;
};

/// Highest reputation wins; ties go to the smallest id.
inline VehicleId elect_leader(const std::vector<VehicleId>& members, const DmvRegistry& registry) {
  if (members.empty()) throw Error(ErrorKind::EmptyFederation, "cannot elect a leader from an empty federation");
  return *std::min_element(members.begin(), members.end(),
                           [&](VehicleId a, VehicleId b) { return higher_reputation(registry, a, b); });
}

/// Uniform double in [0, 1) from the top 53 bits of one 64-bit draw; used
/// instead of std::uniform_real_distribution so draws match across platforms.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Successive weighted draws without replacement, weights proportional to
/// reputation. Candidates are scanned in ascending id order.
inline std::vector<VehicleId> weighted_sample(std::vector<std::pair<VehicleId, double>> pool, std::size_t k,
                                              std::mt19937_64& rng) {
  std::vector<VehicleId> picked;
  k = std::min(k, pool.size());
  while (picked.size() < k) {
    double total = 0.0;
    for (const auto& [id, w] : pool) total += w;
    std::size_t chosen = pool.size() - 1;
    if (total <= 0.0) {
      chosen = std::min(pool.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size())));
    } else {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += pool[i].second;
        if (target < acc) {
          chosen = i;
          break;
        }
      }
      // Rounding can leave the target past the last partial sum; fall back to
      // the last candidate with positive weight.
      while (pool[chosen].second <= 0.0 && chosen > 0) --chosen;
    }
    picked.push_back(pool[chosen].first);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
  }
  return picked;
}

inline Federation select_verifiers(const std::set<VehicleId>& community, const DmvRegistry& registry,
                                   const FederationConfig& cfg, std::uint64_t rng_seed) {
  std::vector<std::pair<VehicleId, double>> eligible;
  for (auto id : community) {
    const auto rep = registry.reputation(id).value();
    if (rep >= cfg.min_reputation) eligible.emplace_back(id, rep);
  }
  if (eligible.empty()) throw Error(ErrorKind::EmptyFederation, "no eligible community vehicle");

  std::mt19937_64 rng(rng_seed);
  Federation f;
  f.members = weighted_sample(std::move(eligible), cfg.m, rng);
  std::sort(f.members.begin(), f.members.end());
  const auto m = static_cast<std::uint32_t>(f.members.size());
  f.threshold_n = std::clamp<std::uint32_t>(cfg.threshold_n.value_or(default_threshold(m)), 1, m);
  f.leader = elect_leader(f.members, registry);
  return f;
}

/// Seed shared by every node for one accident's federation draw.
inline std::uint64_t federation_seed(std::uint64_t scenario_seed, const AccidentId& accident_id) {
  Writer w;
  w.str("poe/federation");
  w.u64(scenario_seed);
  w.raw(accident_id);
  const auto d = digest(w.bytes());
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s = (s << 8) | d[static_cast<std::size_t>(i)];
  return s;
}

/// Community vehicles of an accident: the vehicular network minus everything
/// in DSRC range of the scene and minus the colliding vehicles.
inline std::set<VehicleId> community_of(const WorldState& world, const std::set<VehicleId>& colliding,
                                        const Position& scene) {
  auto network = vehicular_network(colliding, world);
  for (auto id : dsrc_reachable(scene, world)) network.erase(id);
  for (auto id : colliding) network.erase(id);
  return network;
}

/// The federation every node derives independently from shared knowledge.
inline Federation derive_federation(const ProtocolContext& ctx, const AccidentId& accident_id,
                                    const std::set<VehicleId>& colliding, const Position& scene) {
  FederationConfig cfg{ctx.params.federation_size, ctx.params.min_reputation, ctx.params.threshold_n};
  auto f = select_verifiers(community_of(ctx.world, colliding, scene), ctx.registry, cfg,
                            federation_seed(ctx.seed, accident_id));
  f.accident_id = accident_id;
  return f;
}

// ---------------------------------------------------------------------------
// Validation

enum class VerdictReason : std::uint8_t {
  DigestMismatch,
  BadSignature,
  UnregisteredReporter,
  OutsideReplyWindow,
  OutOfDsrcRange,
  WrongAccident,
};

inline const char* to_string(VerdictReason r) {
  switch (r) {
    case VerdictReason::DigestMismatch: return "digest mismatch";
    case VerdictReason::BadSignature: return "bad signature";
    case VerdictReason::UnregisteredReporter: return "unregistered reporter";
    case VerdictReason::OutsideReplyWindow: return "reply window";
    case VerdictReason::OutOfDsrcRange: return "out of DSRC range";
    case VerdictReason::WrongAccident: return "wrong accident";
  }
  return "?";
}

struct Verdict {
  bool ok = true;
  std::vector<VerdictReason> reasons;
};

struct AccidentContext {
  AccidentId accident_id{};
  Position scene;
  Millis accident_time = 0;
  double dsrc_range = kDefaultDsrcRange;
  Millis reply_window = 500;
};

inline Verdict validate_event(const EventData& e, const DmvRegistry& registry, const AccidentContext& ctx) {
  Verdict v;
  auto fail = [&](VerdictReason r) {
    v.ok = false;
    v.reasons.push_back(r);
  };
  if (e.accident_id != ctx.accident_id) fail(VerdictReason::WrongAccident);
  if (!event_digest_matches(e)) fail(VerdictReason::DigestMismatch);
  const auto* entry = registry.find(e.reporter);
  if (!entry) {
    fail(VerdictReason::UnregisteredReporter);
  } else if (!verify(entry->public_key, e.digest, e.signature)) {
    fail(VerdictReason::BadSignature);
  }
  if (e.timestamp < ctx.accident_time || e.timestamp > ctx.accident_time + ctx.reply_window)
    fail(VerdictReason::OutsideReplyWindow);
  if (e.role == EventRole::Witness && distance(e.location, ctx.scene) > ctx.dsrc_range)
    fail(VerdictReason::OutOfDsrcRange);
  return v;
}

/// Canonical event order inside blocks: reporter id, then digest.
inline void sort_events(std::vector<EventData>& events) {
  std::sort(events.begin(), events.end(), [](const EventData& a, const EventData& b) {
    if (a.reporter != b.reporter) return a.reporter < b.reporter;
    return a.digest < b.digest;
  });
}

/// Builds the block from events that a strict majority of the federation
/// marked ok, attaching every member signature that verifies over the result.
inline Block assemble_block(const AccidentId& accident_id, const std::vector<EventData>& events,
                            const std::vector<VerifierValidation>& validations, const Federation& federation,
                            const Digest256& prev_hash, std::uint64_t height, Millis now,
                            const DmvRegistry& registry) {
  const auto m = federation.members.size();
  auto is_member = [&](VehicleId id) {
    return std::find(federation.members.begin(), federation.members.end(), id) != federation.members.end();
  };

  std::map<VehicleId, const VerifierValidation*> by_member;
  for (const auto& v : validations) {
    if (v.accident_id == accident_id && is_member(v.verifier)) by_member.emplace(v.verifier, &v);
  }

  std::vector<EventData> included;
  std::set<Digest256> seen;
  for (const auto& e : events) {
    if (!seen.insert(e.digest).second) continue;
    std::size_t votes = 0;
    for (const auto& [member, v] : by_member) {
      auto it = v->verdicts.find(e.digest);
      if (it != v->verdicts.end() && it->second) ++votes;
    }
    if (2 * votes > m) included.push_back(e);
  }
  if (included.empty()) throw Error(ErrorKind::EmptyEventSet, "no event data survived validation");
  sort_events(included);

  Block b;
  b.height = height;
  b.prev_hash = prev_hash;
  b.accident_id = accident_id;
  b.events = std::move(included);
  b.leader = federation.leader;
  b.created_at = now;
  b.multisig.federation = federation.members;
  b.multisig.threshold_n = federation.threshold_n;

  const auto signing = block_signing_digest(b);
  for (const auto& [member, v] : by_member) {
    if (verify(registry.at(member).public_key, signing, v->signature)) b.multisig.signatures.emplace(member, v->signature);
  }
  if (b.multisig.signatures.size() < federation.threshold_n)
    throw Error(ErrorKind::ThresholdNotMet, std::to_string(b.multisig.signatures.size()) + " of " +
                                                std::to_string(federation.threshold_n) + " required signatures");
  b.block_hash = compute_block_hash(b);
  return b;
}

// ---------------------------------------------------------------------------
// Node state machine

enum class TimerKind : std::uint8_t {
  ValidationCutoff,  // verifier: stop collecting event data, emit validation
  LeaderDeadline,    // lead verifier: finalise with whatever has arrived
  CoordinatorCutoff, // accident coordinator with no federation: submit evidence
  Relay,             // attack wrappers
};

struct TimerExpiry {
  TimerKind kind = TimerKind::ValidationCutoff;
  AccidentId accident_id{};
};

struct AccidentTrigger {
  std::set<VehicleId> colliding;
};

using Input = std::variant<std::shared_ptr<const SignedMessage>, TimerExpiry, AccidentTrigger>;

struct TimerRequest {
  Millis at = 0;
  TimerExpiry timer;
};

struct Outbound {
  Channel channel = Channel::Cellular;
  std::vector<VehicleId> to;
  bool network_broadcast = false;
  std::shared_ptr<const SignedMessage> message;
};

/// Per-accident view held by one node.
struct AccidentView {
  bool has_role = false;
  Role role = Role::Community;
  Millis accident_time = 0;
  Position scene;
  std::set<VehicleId> colliding;
  bool responded = false;                            // witness
  std::set<VehicleId> confirmed_witnesses;           // accident vehicle
  bool coordinator_without_federation = false;       // accident coordinator
  bool submitted = false;
  std::optional<Federation> federation;              // verifiers
  Millis collection_cutoff = 0;
  std::map<Digest256, std::shared_ptr<const EventData>> events;  // received event data
  bool validation_sent = false;
  std::map<VehicleId, VerifierValidation> validations;           // leader
  bool finalized = false;
  std::vector<std::pair<std::uint64_t, Digest256>> block_headers;  // community: (height, hash)
};

struct NodeState {
  VehicleId id;
  KeyPair keys;
  std::shared_ptr<const EdrLog> edr;
  std::map<AccidentId, AccidentView> accidents;
  std::vector<TimerRequest> armed;  // timers set and not yet fired
};

struct StepResult {
  NodeState state;
  std::vector<Outbound> out;
  std::vector<TimerRequest> timers;
  std::optional<std::string> unexpected;  // out-of-role input; state unchanged
};

namespace detail {

inline AccidentContext accident_context(const ProtocolContext& ctx, const AccidentId& id, const AccidentView& view) {
  return AccidentContext{id, view.scene, view.accident_time, ctx.world.dsrc_range, ctx.params.reply_window};
}

inline std::vector<EventData> held_events(const AccidentView& view) {
  std::vector<EventData> out;
  out.reserve(view.events.size());
  for (const auto& [d, e] : view.events) out.push_back(*e);
  sort_events(out);
  return out;
}

inline StepResult unexpected(NodeState original, std::string why) {
  StepResult r{std::move(original), {}, {}, std::move(why)};
  return r;
}

inline void arm(StepResult& r, Millis at, TimerKind kind, const AccidentId& id) {
  TimerRequest t{at, TimerExpiry{kind, id}};
  r.timers.push_back(t);
  r.state.armed.push_back(t);
}

inline void disarm(NodeState& s, const TimerExpiry& t) {
  auto it = std::find_if(s.armed.begin(), s.armed.end(), [&](const TimerRequest& a) {
    return a.timer.kind == t.kind && a.timer.accident_id == t.accident_id;
  });
  if (it != s.armed.end()) s.armed.erase(it);
}

inline void send(StepResult& r, Channel ch, std::vector<VehicleId> to, bool broadcast, Message m) {
  r.out.push_back(Outbound{ch, std::move(to), broadcast, seal(r.state.id, std::move(m), r.state.keys.secret_key)});
}

/// The honest validation a verifier emits at its collection cutoff.
inline VerifierValidation honest_validation(const NodeState& s, const ProtocolContext& ctx, const AccidentId& id,
                                            const AccidentView& view) {
  VerifierValidation v;
  v.accident_id = id;
  v.verifier = s.id;
  std::vector<EventData> approved;
  const auto actx = accident_context(ctx, id, view);
  for (const auto& [d, e] : view.events) {
    const bool ok = validate_event(*e, ctx.registry, actx).ok;
    v.verdicts[d] = ok;
    if (ok) approved.push_back(*e);
  }
  sort_events(approved);
  const auto& f = *view.federation;
  v.signature = sign(s.keys.secret_key, block_signing_digest(id, approved, f.members, f.threshold_n, f.leader));
  return v;
}

inline void leader_finalize(StepResult& r, const ProtocolContext& ctx, const AccidentId& id, Millis now) {
  auto& view = r.state.accidents[id];
  if (view.finalized) return;
  view.finalized = true;
  std::vector<VerifierValidation> validations;
  for (const auto& [member, v] : view.validations) validations.push_back(v);
  const auto events = held_events(view);
  try {
    auto block = assemble_block(id, events, validations, *view.federation, kGenesisPrevHash, 0, now, ctx.registry);
    NewBlockAnnouncement ann{std::move(block)};
    send(r, Channel::Cellular, {kDmvId}, false, ann);
    send(r, Channel::Cellular, {}, true, std::move(ann));
  } catch (const Error& e) {
    const auto reason =
        e.kind() == ErrorKind::EmptyEventSet ? UnconfirmedReason::EmptyEventSet : UnconfirmedReason::ThresholdNotMet;
    send(r, Channel::Cellular, {kDmvId}, false,
         UnconfirmedSubmission{UnconfirmedEventRecord{id, reason, r.state.id, now, events}});
  }
}

inline StepResult on_trigger(NodeState s, const AccidentTrigger& trig, Millis now, const ProtocolContext& ctx) {
  if (!trig.colliding.contains(s.id)) return unexpected(std::move(s), "accident trigger for a non-colliding vehicle");
  const auto detection = detect_accident(ctx.world, trig.colliding, now);
  StepResult r{std::move(s), {}, {}, {}};
  auto& view = r.state.accidents[detection.accident_id];
  view.has_role = true;
  view.role = Role::Accident;
  view.accident_time = now;
  view.scene = detection.scene;
  view.colliding = trig.colliding;

  for (const auto& d : detection.dispatches)
    if (d.sender == r.state.id) send(r, d.channel, d.to, d.network_broadcast, d.message);

  const Reporter me{r.state.id, r.state.keys, ctx.world.at(r.state.id).position, *r.state.edr};
  auto own = make_event_data(me, EventRole::Accident, detection.accident_id, now,
                             WindowParams{now, ctx.params.edr_half_width}, ctx.registry);
  view.events.emplace(own.digest, std::make_shared<const EventData>(own));
  send(r, Channel::Cellular, {}, true, EventDataBroadcast{std::move(own)});

  if (r.state.id == *trig.colliding.begin()) {
    try {
      derive_federation(ctx, detection.accident_id, trig.colliding, detection.scene);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::EmptyFederation) throw;
      view.coordinator_without_federation = true;
      arm(r, now + ctx.params.reply_window + ctx.params.cellular_latency, TimerKind::CoordinatorCutoff,
          detection.accident_id);
    }
  }
  return r;
}

inline StepResult on_message(NodeState s, const std::shared_ptr<const SignedMessage>& msg, Millis now,
                             const ProtocolContext& ctx) {
  // Drops forged or unattributable traffic before it can affect state.
  if (!envelope_authentic(*msg, ctx.registry)) return unexpected(std::move(s), "envelope signature check failed");

  const AccidentId id = accident_of(msg->body);
  const NodeState original = s;
  StepResult r{std::move(s), {}, {}, {}};
  auto& view = r.state.accidents[id];
  const bool known = view.has_role;

  return std::visit(
      [&](const auto& m) -> StepResult {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, EventGenerationRequest>) {
          if (known && view.role != Role::Witness) return unexpected(original, "event request to a non-witness");
          view.has_role = true;
          view.role = Role::Witness;
          if (view.responded || now - m.sent_at > ctx.params.reply_window) return r;
          view.responded = true;
          view.accident_time = m.sent_at;
          view.scene = m.scene;
          send(r, Channel::Dsrc, {m.origin}, false, WitnessConfirm{id, r.state.id});
          const Reporter me{r.state.id, r.state.keys, ctx.world.at(r.state.id).position, *r.state.edr};
          auto e = make_event_data(me, EventRole::Witness, id, now, WindowParams{m.sent_at, ctx.params.edr_half_width},
                                   ctx.registry);
          send(r, Channel::Cellular, {}, true, EventDataBroadcast{std::move(e)});
          return r;
        } else if constexpr (std::is_same_v<T, WitnessConfirm>) {
          if (view.role != Role::Accident) return unexpected(original, "witness confirmation to a non-accident vehicle");
          view.confirmed_witnesses.insert(m.witness);
          return r;
        } else if constexpr (std::is_same_v<T, FederationFormationRequest>) {
          if (known) return r;  // already holds a role for this accident
          view.accident_time = m.sent_at;
          view.scene = m.scene;
          view.colliding = std::set<VehicleId>(m.colliding.begin(), m.colliding.end());
          view.has_role = true;
          view.role = Role::Community;
          Federation f;
          try {
            f = derive_federation(ctx, id, view.colliding, view.scene);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyFederation) throw;
            return r;
          }
          if (std::find(f.members.begin(), f.members.end(), r.state.id) == f.members.end()) return r;
          view.role = f.leader == r.state.id ? Role::LeadVerifier : Role::Verifier;
          view.collection_cutoff = m.sent_at + ctx.params.reply_window + ctx.params.cellular_latency;
          view.federation = f;
          arm(r, view.collection_cutoff, TimerKind::ValidationCutoff, id);
          if (view.role == Role::LeadVerifier) arm(r, m.sent_at + ctx.params.validation_deadline, TimerKind::LeaderDeadline, id);
          return r;
        } else if constexpr (std::is_same_v<T, EventDataBroadcast>) {
          const bool collecting = view.role == Role::Verifier || view.role == Role::LeadVerifier ||
                                  view.coordinator_without_federation || !known;
          if (!collecting) return r;
          if (view.federation && (view.validation_sent || now > view.collection_cutoff)) return r;  // late
          if (view.submitted) return r;
          view.events.emplace(m.event.digest, std::make_shared<const EventData>(m.event));
          return r;
        } else if constexpr (std::is_same_v<T, VerifierValidation>) {
          if (view.role != Role::LeadVerifier) return unexpected(original, "validation sent to a non-leader");
          const auto& members = view.federation->members;
          if (msg->sender != m.verifier || std::find(members.begin(), members.end(), m.verifier) == members.end())
            return unexpected(original, "validation from a non-member");
          if (view.finalized) return r;
          view.validations.emplace(m.verifier, m);
          if (view.validations.size() == members.size()) leader_finalize(r, ctx, id, now);
          return r;
        } else if constexpr (std::is_same_v<T, NewBlockAnnouncement>) {
          view.block_headers.emplace_back(m.block.height, m.block.block_hash);
          return r;
        } else {
          return unexpected(original, "unconfirmed records are addressed to the DMV");
        }
      },
      msg->body);
}

inline StepResult on_timer(NodeState s, const TimerExpiry& t, Millis now, const ProtocolContext& ctx) {
  StepResult r{std::move(s), {}, {}, {}};
  disarm(r.state, t);
  auto it = r.state.accidents.find(t.accident_id);
  if (it == r.state.accidents.end()) return unexpected(std::move(r.state), "timer for an unknown accident");
  auto& view = it->second;
  switch (t.kind) {
    case TimerKind::ValidationCutoff: {
      if (!view.federation || view.validation_sent) return r;
      view.validation_sent = true;
      auto v = honest_validation(r.state, ctx, t.accident_id, view);
      send(r, Channel::Cellular, {view.federation->leader}, false, std::move(v));
      return r;
    }
    case TimerKind::LeaderDeadline:
      if (view.role == Role::LeadVerifier) leader_finalize(r, ctx, t.accident_id, now);
      return r;
    case TimerKind::CoordinatorCutoff: {
      if (!view.coordinator_without_federation || view.submitted) return r;
      view.submitted = true;
      send(r, Channel::Cellular, {kDmvId}, false,
           UnconfirmedSubmission{UnconfirmedEventRecord{t.accident_id, UnconfirmedReason::EmptyFederation, r.state.id,
                                                        now, held_events(view)}});
      return r;
    }
    case TimerKind::Relay:
      return r;
  }
  return r;
}

}  // namespace detail

/// One pure transition. Out-of-role inputs leave the state unchanged and are
/// reported through `unexpected`.
inline StepResult protocol_step(NodeState node, const Input& input, Millis now, const ProtocolContext& ctx) {
  return std::visit(
      [&](const auto& in) -> StepResult {
        using T = std::decay_t<decltype(in)>;
        if constexpr (std::is_same_v<T, AccidentTrigger>) return detail::on_trigger(std::move(node), in, now, ctx);
        else if constexpr (std::is_same_v<T, TimerExpiry>) return detail::on_timer(std::move(node), in, now, ctx);
        else return detail::on_message(std::move(node), in, now, ctx);
      },
      input);
}

// ---------------------------------------------------------------------------
// Incentives

struct IncentiveOutcome {
  std::set<VehicleId> honest_witnesses;
  std::set<VehicleId> signing_verifiers;
  std::set<VehicleId> dishonest_reporters;
};

inline DmvRegistry apply_incentives(DmvRegistry registry, const IncentiveOutcome& outcome,
                                    const IncentiveParams& params = {}) {
  auto adjust = [&](VehicleId id, double delta) {
    registry.set_reputation(id, ReputationScore(registry.reputation(id).value() + delta));
  };
  for (auto id : outcome.honest_witnesses) adjust(id, params.reward_witness);
  for (auto id : outcome.signing_verifiers) adjust(id, params.reward_verifier);
  for (auto id : outcome.dishonest_reporters) adjust(id, -params.penalty);
  return registry;
}

}  // namespace poe
