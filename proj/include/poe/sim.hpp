#pragma once

// Deterministic discrete-event harness: builds actors from a scenario, runs
// one accident through the protocol, and reports the ledger, transcript,
// classification and metrics.

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "poe/attack.hpp"
#include "poe/ledger.hpp"
#include "poe/protocol.hpp"
#include "poe/scenario.hpp"

namespace poe {

enum class Classification { Normal, NoWitnessNoVerifier, NoWitness, NoVerifier };

inline const char* to_string(Classification c) {
  switch (c) {
    case Classification::Normal: return "Normal";
    case Classification::NoWitnessNoVerifier: return "NoWitnessNoVerifier";
    case Classification::NoWitness: return "NoWitness";
    case Classification::NoVerifier: return "NoVerifier";
  }
  return "?";
}

struct TranscriptEntry {
  Millis send_time = 0;
  Millis deliver_time = 0;
  VehicleId sender;  // as claimed by the envelope
  VehicleId receiver;
  std::shared_ptr<const SignedMessage> message;
  bool dropped = false;
};

using Transcript = std::vector<TranscriptEntry>;

/// Witnesses are the vehicles that confirmed a request; the federation is
/// missing iff an unconfirmed record cites EmptyFederation.
inline Classification classify_outcome(const Transcript& transcript, const ScenarioConfig& cfg) {
  (void)cfg;
  std::set<VehicleId> witnesses;
  bool empty_federation = false;
  for (const auto& t : transcript) {
    if (t.dropped) continue;
    if (const auto* c = std::get_if<WitnessConfirm>(&t.message->body)) witnesses.insert(c->witness);
    if (const auto* u = std::get_if<UnconfirmedSubmission>(&t.message->body))
      empty_federation |= u->record.reason == UnconfirmedReason::EmptyFederation;
  }
  if (witnesses.empty()) return empty_federation ? Classification::NoWitnessNoVerifier : Classification::NoWitness;
  return empty_federation ? Classification::NoVerifier : Classification::Normal;
}

struct RejectedEvent {
  VehicleId reporter;
  EventRole role = EventRole::Witness;
  Digest256 digest{};
  std::vector<std::string> reasons;
};

struct AttackOutcome {
  std::string attack;
  bool exercised = false;
  bool succeeded = false;
  std::string detail;

  std::string summary() const {
    if (!exercised) return "not exercised";
    return succeeded ? "succeeded" + (detail.empty() ? std::string() : ": " + detail) : "mitigated: " + detail;
  }
};

struct Metrics {
  std::size_t blocks_produced = 0;
  std::size_t events_accepted = 0;
  std::vector<RejectedEvent> events_rejected;
  std::size_t unconfirmed_records = 0;
  std::size_t messages_delivered = 0;
  std::size_t messages_dropped = 0;
  std::size_t unexpected_inputs = 0;
  std::vector<std::string> dmv_rejections;
  std::vector<AttackOutcome> attack_outcomes;
};

struct SimOutcome {
  std::string scenario;
  std::uint64_t seed = 0;
  AccidentId accident_id{};
  Position scene;
  Millis accident_time = 0;
  Ledger ledger;
  Transcript transcript;
  Classification classification = Classification::Normal;
  Metrics metrics;
  std::optional<Federation> federation;
  std::set<VehicleId> witnesses;
  DmvRegistry registry_after;
};

// ---------------------------------------------------------------------------
// EDR synthesis

inline double heading_of(const Velocity& v) {
  if (v.vx == 0.0 && v.vy == 0.0) return 0.0;
  const double deg = std::atan2(v.vx, v.vy) * 180.0 / M_PI;  // 0 = +y, clockwise
  const double h = std::fmod(deg + 360.0, 360.0);
  return h >= 360.0 ? 0.0 : h;
}

inline Position position_at(const VehicleState& v, Millis t, Millis t_now) {
  const double dt = static_cast<double>(t_now - t) / 1000.0;
  return Position{v.position.x - v.velocity.vx * dt, v.position.y - v.velocity.vy * dt};
}

/// Replays constant-velocity motion into an EDR ending at `t_end`. Samples
/// carry speed observations of `subjects` that were within sensing range.
inline EdrLog synthesize_edr(const ScenarioConfig& cfg, const VehicleSpec& self, const std::vector<const VehicleSpec*>& subjects,
                             Millis t_end) {
  EdrLog log(cfg.edr.capacity);
  const Millis span = static_cast<Millis>(cfg.edr.capacity > 0 ? cfg.edr.capacity - 1 : 0) * cfg.edr.period;
  Millis t = std::max<Millis>(0, t_end - span);
  t = t_end - ((t_end - t) / cfg.edr.period) * cfg.edr.period;
  const double true_speed = std::hypot(self.state.velocity.vx, self.state.velocity.vy);
  for (; t <= t_end; t += cfg.edr.period) {
    EdrSample s;
    s.t = t;
    s.position = position_at(self.state, t, t_end);
    s.speed = self.speed_sensor_override.value_or(true_speed);
    s.heading = heading_of(self.state.velocity);
    for (const auto* subject : subjects) {
      if (subject->id == self.id) continue;
      if (distance(s.position, position_at(subject->state, t, t_end)) > cfg.dsrc_range) continue;
      const double v = std::hypot(subject->state.velocity.vx, subject->state.velocity.vy);
      s.observations.push_back(Observation{subject->id, std::max(0.0, v + self.observation_bias)});
    }
    log.record(std::move(s));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Scheduler

namespace detail {

struct Pending {
  Millis at = 0;
  std::uint32_t order_sender = 0;  // physical sender, for tie-breaking
  std::uint64_t seq = 0;
  VehicleId receiver;
  Input input;
  Millis sent_at = 0;
  bool is_message = false;
};

struct PendingLater {
  bool operator()(const Pending& a, const Pending& b) const {
    if (a.at != b.at) return a.at > b.at;
    if (a.order_sender != b.order_sender) return a.order_sender > b.order_sender;
    return a.seq > b.seq;
  }
};

inline std::vector<Behavior> behaviors_for(const ScenarioConfig& cfg, VehicleId id) {
  std::vector<Behavior> out;
  for (const auto& a : cfg.attacks) {
    std::visit(
        [&](const auto& spec) {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, TamperEvent>) {
            if (spec.attacker == id) out.push_back(TamperBehavior{spec.field, spec.delta});
          } else if constexpr (std::is_same_v<T, Impersonate>) {
            if (spec.attacker == id) out.push_back(ImpersonateBehavior{spec.claimed_id});
          } else if constexpr (std::is_same_v<T, FakeWitnessRelay>) {
            if (spec.relayer == id) out.push_back(RelayBehavior{spec.fake_witnesses, spec.relay_delay, {}});
            if (std::find(spec.fake_witnesses.begin(), spec.fake_witnesses.end(), id) != spec.fake_witnesses.end())
              out.push_back(FakeWitnessBehavior{});
          } else {
            if (std::find(spec.members.begin(), spec.members.end(), id) != spec.members.end())
              out.push_back(ColludeBehavior{});
          }
        },
        a);
  }
  return out;
}

inline std::set<VehicleId> attack_actors(const ScenarioConfig& cfg) {
  std::set<VehicleId> out;
  for (const auto& a : cfg.attacks) {
    std::visit(
        [&](const auto& spec) {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, TamperEvent> || std::is_same_v<T, Impersonate>) out.insert(spec.attacker);
          else if constexpr (std::is_same_v<T, FakeWitnessRelay>) {
            out.insert(spec.relayer);
            out.insert(spec.fake_witnesses.begin(), spec.fake_witnesses.end());
          }
        },
        a);
  }
  return out;
}

inline bool in_blocks(const std::vector<const Block*>& blocks, const Digest256& d) {
  for (const auto* b : blocks)
    for (const auto& e : b->events)
      if (e.digest == d) return true;
  return false;
}

}  // namespace detail

/// Runs the scenario's accident to quiescence. `ledger` is the DMV chain the
/// resulting block (if any) is appended to.
inline SimOutcome run_scenario(const ScenarioConfig& cfg, Ledger ledger = {}) {
  validate(cfg);
  const auto world = cfg.world();
  const auto registry = cfg.registry();
  const ProtocolContext ctx{world, registry, cfg.params, cfg.seed};

  SimOutcome outcome;
  outcome.scenario = cfg.name;
  outcome.seed = cfg.seed;
  outcome.accident_time = cfg.accident_time;

  const auto detection = detect_accident(world, cfg.colliding, cfg.accident_time);
  outcome.accident_id = detection.accident_id;
  outcome.scene = detection.scene;
  const auto network = vehicular_network(cfg.colliding, world);

  // Only vehicles that can end up reporting need a history.
  std::set<VehicleId> reporters = dsrc_reachable(detection.scene, world);
  reporters.insert(cfg.colliding.begin(), cfg.colliding.end());
  for (auto id : detail::attack_actors(cfg)) reporters.insert(id);
  std::vector<const VehicleSpec*> subjects;
  for (auto id : cfg.colliding) subjects.push_back(cfg.find(id));

  const auto empty_log = std::make_shared<const EdrLog>(cfg.edr.capacity);
  std::map<VehicleId, Actor> actors;
  for (const auto& v : cfg.vehicles) {
    Actor a;
    a.state.id = v.id;
    a.state.keys = keygen(v.key_seed.value_or(default_key_seed(v.id)));
    a.state.edr = reporters.contains(v.id)
                      ? std::make_shared<const EdrLog>(synthesize_edr(cfg, v, subjects, cfg.accident_time))
                      : empty_log;
    a.behaviors = detail::behaviors_for(cfg, v.id);
    actors.emplace(v.id, std::move(a));
  }

  std::priority_queue<detail::Pending, std::vector<detail::Pending>, detail::PendingLater> queue;
  std::uint64_t seq = 0;
  std::mt19937_64 loss_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Metrics& metrics = outcome.metrics;
  std::set<std::pair<AccidentId, VehicleId>> unconfirmed_seen;

  for (auto id : cfg.colliding)
    queue.push(detail::Pending{cfg.accident_time, id.value, seq++, id, AccidentTrigger{cfg.colliding}, cfg.accident_time, false});

  auto dispatch = [&](VehicleId from, const ActorStep& step, Millis now) {
    for (const auto& t : step.timers)
      queue.push(detail::Pending{t.at, from.value, seq++, from, t.timer, now, false});
    for (const auto& o : step.out) {
      std::vector<VehicleId> receivers = o.to;
      if (o.network_broadcast)
        for (auto id : network)
          if (id != from) receivers.push_back(id);
      const Millis latency = o.channel == Channel::Dsrc ? cfg.params.dsrc_latency : cfg.params.cellular_latency;
      for (auto to : receivers) {
        if (cfg.loss_rate > 0.0 && uniform01(loss_rng) < cfg.loss_rate) {
          outcome.transcript.push_back(TranscriptEntry{now, now + latency, o.message->sender, to, o.message, true});
          ++metrics.messages_dropped;
          continue;
        }
        queue.push(detail::Pending{now + latency, from.value, seq++, to, o.message, now, true});
      }
    }
  };

  auto dmv_receive = [&](const std::shared_ptr<const SignedMessage>& msg) {
    if (!envelope_authentic(*msg, registry)) {
      metrics.dmv_rejections.push_back(std::string(message_name(msg->body)) + " from " + to_string(msg->sender) +
                                       ": envelope signature check failed");
      return;
    }
    if (const auto* ann = std::get_if<NewBlockAnnouncement>(&msg->body)) {
      for (const auto& b : ledger.blocks())
        if (b.accident_id == ann->block.accident_id) return;  // already recorded
      const auto status = ledger.accept(ann->block, registry);
      if (status == BlockStatus::Ok) ++metrics.blocks_produced;
      else metrics.dmv_rejections.push_back(std::string("block rejected: ") + to_string(status));
    } else if (const auto* sub = std::get_if<UnconfirmedSubmission>(&msg->body)) {
      if (!unconfirmed_seen.insert({sub->record.accident_id, msg->sender}).second) return;
      ledger.add_unconfirmed(sub->record);
      ++metrics.unconfirmed_records;
    }
  };

  constexpr std::size_t kMaxSteps = 50'000'000;
  std::size_t steps = 0;
  while (!queue.empty()) {
    if (++steps > kMaxSteps) throw std::runtime_error("simulation did not quiesce");
    auto item = queue.top();
    queue.pop();
    const Millis now = item.at;
    if (item.is_message) {
      const auto& msg = std::get<std::shared_ptr<const SignedMessage>>(item.input);
      outcome.transcript.push_back(TranscriptEntry{item.sent_at, now, msg->sender, item.receiver, msg, false});
      ++metrics.messages_delivered;
      if (item.receiver == kDmvId) {
        dmv_receive(msg);
        continue;
      }
    }
    auto it = actors.find(item.receiver);
    if (it == actors.end()) continue;
    auto step = step_actor(it->second, item.input, now, ctx);
    if (step.unexpected) ++metrics.unexpected_inputs;
    dispatch(item.receiver, step, now);
  }

  // Post-run analysis.
  outcome.classification = classify_outcome(outcome.transcript, cfg);
  try {
    outcome.federation = derive_federation(ctx, detection.accident_id, cfg.colliding, detection.scene);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::EmptyFederation) throw;
  }
  for (const auto& t : outcome.transcript)
    if (const auto* c = std::get_if<WitnessConfirm>(&t.message->body); c && !t.dropped) outcome.witnesses.insert(c->witness);

  std::vector<const Block*> blocks;
  for (const auto& b : ledger.blocks())
    if (b.accident_id == detection.accident_id) blocks.push_back(&b);
  for (const auto* b : blocks) metrics.events_accepted += b->events.size();

  const AccidentContext actx{detection.accident_id, detection.scene, cfg.accident_time, world.dsrc_range,
                             cfg.params.reply_window};
  std::map<Digest256, const EventData*> broadcast;
  for (const auto& t : outcome.transcript)
    if (const auto* b = std::get_if<EventDataBroadcast>(&t.message->body)) broadcast.emplace(b->event.digest, &b->event);

  IncentiveOutcome incentives;
  std::map<Digest256, Verdict> verdicts;
  for (const auto& [d, e] : broadcast) {
    auto verdict = validate_event(*e, registry, actx);
    const bool included = detail::in_blocks(blocks, d);
    if (!included) {
      RejectedEvent rej{e->reporter, e->role, d, {}};
      for (auto r : verdict.reasons) rej.reasons.emplace_back(to_string(r));
      if (rej.reasons.empty()) rej.reasons.emplace_back("not included");
      metrics.events_rejected.push_back(std::move(rej));
    } else if (e->role == EventRole::Witness && registry.contains(e->reporter)) {
      incentives.honest_witnesses.insert(e->reporter);
    }
    // Only penalise a reporter whose own signature binds it to the bad data.
    if (!event_digest_matches(*e) && event_signature_valid(*e, registry)) incentives.dishonest_reporters.insert(e->reporter);
    verdicts.emplace(d, std::move(verdict));
  }
  for (const auto* b : blocks)
    for (const auto& [signer, sig] : b->multisig.signatures) incentives.signing_verifiers.insert(signer);
  outcome.registry_after = apply_incentives(registry, incentives, cfg.params.incentives);

  auto first_reasons = [&](auto&& pred) -> std::string {
    for (const auto& [d, e] : broadcast) {
      if (!pred(*e)) continue;
      const auto& v = verdicts.at(d);
      if (!v.ok) {
        std::string s;
        for (auto r : v.reasons) s += (s.empty() ? "" : ", ") + std::string(to_string(r));
        return s;
      }
    }
    return "not included";
  };

  for (const auto& a : cfg.attacks) {
    AttackOutcome ao;
    ao.attack = attack_name(a);
    std::visit(
        [&](const auto& spec) {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, TamperEvent>) {
            auto tampered = [&](const EventData& e) { return e.reporter == spec.attacker && !event_digest_matches(e); };
            for (const auto& [d, e] : broadcast) {
              if (!tampered(*e)) continue;
              ao.exercised = true;
              ao.succeeded |= detail::in_blocks(blocks, d);
            }
            ao.detail = ao.succeeded ? "tampered event recorded" : first_reasons(tampered);
          } else if constexpr (std::is_same_v<T, FakeWitnessRelay>) {
            auto fake = [&](const EventData& e) {
              return std::find(spec.fake_witnesses.begin(), spec.fake_witnesses.end(), e.reporter) != spec.fake_witnesses.end();
            };
            for (const auto& [d, e] : broadcast) {
              if (!fake(*e)) continue;
              ao.exercised = true;
              ao.succeeded |= detail::in_blocks(blocks, d);
            }
            ao.detail = ao.succeeded ? "fake witness data recorded" : first_reasons(fake);
          } else if constexpr (std::is_same_v<T, Impersonate>) {
            for (const auto& t : outcome.transcript) {
              if (t.message->sender != spec.claimed_id || envelope_authentic(*t.message, registry)) continue;
              ao.exercised = true;
              if (const auto* b = std::get_if<EventDataBroadcast>(&t.message->body))
                ao.succeeded |= detail::in_blocks(blocks, b->event.digest);
            }
            ao.detail = ao.succeeded ? "forged event recorded" : "signature check";
          } else {
            for (const auto& [d, e] : broadcast) {
              if (verdicts.at(d).ok) continue;
              ao.exercised = true;
              ao.succeeded |= detail::in_blocks(blocks, d);
            }
            if (!ao.succeeded && outcome.federation) {
              const auto& f = *outcome.federation;
              std::size_t c = 0;
              for (auto id : spec.members)
                if (std::find(f.members.begin(), f.members.end(), id) != f.members.end()) ++c;
              ao.detail = 2 * c > f.members.size() ? "threshold" : "majority";
            } else if (ao.succeeded) {
              ao.detail = "invalid event recorded";
            } else {
              ao.detail = "no federation";
            }
          }
        },
        a);
    metrics.attack_outcomes.push_back(std::move(ao));
  }

  outcome.ledger = std::move(ledger);
  return outcome;
}

// ---------------------------------------------------------------------------
// Exports

enum class LogLevel { Off, Summary, Full };

inline LogLevel parse_log_level(const char* value) {
  if (!value) return LogLevel::Summary;
  const std::string v(value);
  if (v == "off") return LogLevel::Off;
  if (v == "full") return LogLevel::Full;
  return LogLevel::Summary;
}

inline nlohmann::json message_summary(const Message& m) {
  nlohmann::json j;
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, EventGenerationRequest>) {
          j["origin"] = msg.origin.value;
          j["sent_at"] = msg.sent_at;
        } else if constexpr (std::is_same_v<T, WitnessConfirm>) {
          j["witness"] = msg.witness.value;
        } else if constexpr (std::is_same_v<T, EventDataBroadcast>) {
          j["reporter"] = msg.event.reporter.value;
          j["role"] = to_string(msg.event.role);
          j["timestamp"] = msg.event.timestamp;
          j["event_digest"] = to_hex(msg.event.digest);
        } else if constexpr (std::is_same_v<T, FederationFormationRequest>) {
          j["origin"] = msg.origin.value;
        } else if constexpr (std::is_same_v<T, VerifierValidation>) {
          j["verifier"] = msg.verifier.value;
          std::size_t ok = 0;
          for (const auto& [d, v] : msg.verdicts) ok += v ? 1 : 0;
          j["approved"] = ok;
          j["verdicts"] = msg.verdicts.size();
        } else if constexpr (std::is_same_v<T, NewBlockAnnouncement>) {
          j["events"] = msg.block.events.size();
          j["signatures"] = msg.block.multisig.signatures.size();
          j["leader"] = msg.block.leader.value;
        } else {
          j["reason"] = to_string(msg.record.reason);
          j["events"] = msg.record.events.size();
        }
      },
      m);
  return j;
}

/// One JSON object per line, in delivery order. Off yields an empty string.
inline std::string transcript_jsonl(const Transcript& transcript, LogLevel level = LogLevel::Summary) {
  if (level == LogLevel::Off) return {};
  std::string out;
  for (const auto& t : transcript) {
    nlohmann::json j;
    j["send"] = t.send_time;
    j["deliver"] = t.deliver_time;
    j["from"] = t.sender.value;
    j["to"] = t.receiver.value;
    j["type"] = message_name(t.message->body);
    j["accident"] = to_hex(accident_of(t.message->body));
    j["envelope"] = to_hex(envelope_digest(t.message->sender, t.message->body));
    if (t.dropped) j["dropped"] = true;
    j["info"] = message_summary(t.message->body);
    if (level == LogLevel::Full) {
      j["wire"] = to_hex(encode_message(t.message->body));
      j["signature"] = to_hex(t.message->signature);
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline nlohmann::json metrics_json(const SimOutcome& o) {
  nlohmann::json j;
  j["scenario"] = o.scenario;
  j["seed"] = o.seed;
  j["accident_id"] = to_hex(o.accident_id);
  j["classification"] = to_string(o.classification);
  j["blocks_produced"] = o.metrics.blocks_produced;
  j["events_accepted"] = o.metrics.events_accepted;
  j["unconfirmed_records"] = o.metrics.unconfirmed_records;
  j["messages_delivered"] = o.metrics.messages_delivered;
  j["messages_dropped"] = o.metrics.messages_dropped;
  j["unexpected_inputs"] = o.metrics.unexpected_inputs;
  j["witnesses"] = nlohmann::json::array();
  for (auto id : o.witnesses) j["witnesses"].push_back(id.value);
  if (o.federation) {
    j["federation"]["members"] = nlohmann::json::array();
    for (auto id : o.federation->members) j["federation"]["members"].push_back(id.value);
    j["federation"]["leader"] = o.federation->leader.value;
    j["federation"]["threshold_n"] = o.federation->threshold_n;
  } else {
    j["federation"] = nullptr;
  }
  j["events_rejected"] = nlohmann::json::array();
  for (const auto& r : o.metrics.events_rejected)
    j["events_rejected"].push_back(
        {{"reporter", r.reporter.value}, {"role", to_string(r.role)}, {"digest", to_hex(r.digest)}, {"reasons", r.reasons}});
  j["dmv_rejections"] = o.metrics.dmv_rejections;
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : o.metrics.attack_outcomes)
    j["attacks"].push_back({{"attack", a.attack}, {"outcome", a.summary()}, {"succeeded", a.succeeded}});
  return j;
}

inline nlohmann::json event_json(const EventData& e) {
  nlohmann::json j;
  j["reporter"] = e.reporter.value;
  j["role"] = to_string(e.role);
  j["location"] = {e.location.x, e.location.y};
  j["timestamp"] = e.timestamp;
  j["edr_samples"] = e.edr_window.size();
  j["digest"] = to_hex(e.digest);
  return j;
}

inline nlohmann::json ledger_json(const Ledger& ledger) {
  nlohmann::json j;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : ledger.blocks()) {
    nlohmann::json jb;
    jb["height"] = b.height;
    jb["prev_hash"] = to_hex(b.prev_hash);
    jb["block_hash"] = to_hex(b.block_hash);
    jb["accident_id"] = to_hex(b.accident_id);
    jb["leader"] = b.leader.value;
    jb["created_at"] = b.created_at;
    jb["federation"] = nlohmann::json::array();
    for (auto id : b.multisig.federation) jb["federation"].push_back(id.value);
    jb["threshold_n"] = b.multisig.threshold_n;
    jb["signers"] = nlohmann::json::array();
    for (const auto& [id, sig] : b.multisig.signatures) jb["signers"].push_back(id.value);
    jb["events"] = nlohmann::json::array();
    for (const auto& e : b.events) jb["events"].push_back(event_json(e));
    j["blocks"].push_back(std::move(jb));
  }
  j["unconfirmed"] = nlohmann::json::array();
  for (const auto& u : ledger.unconfirmed()) {
    nlohmann::json ju;
    ju["accident_id"] = to_hex(u.accident_id);
    ju["reason"] = to_string(u.reason);
    ju["submitted_by"] = u.submitted_by.value;
    ju["created_at"] = u.created_at;
    ju["events"] = nlohmann::json::array();
    for (const auto& e : u.events) ju["events"].push_back(event_json(e));
    j["unconfirmed"].push_back(std::move(ju));
  }
  return j;
}

inline nlohmann::json report_json(const DiscrepancyReport& r) {
  nlohmann::json j;
  j["accident_id"] = to_hex(r.accident_id);
  j["block_height"] = r.block_height;
  j["comparisons"] = nlohmann::json::array();
  for (const auto& c : r.comparisons) {
    nlohmann::json jc;
    jc["subject"] = c.subject.value;
    jc["self_reported"] = c.self_reported ? nlohmann::json(*c.self_reported) : nlohmann::json(nullptr);
    jc["witness_estimates"] = c.witness_estimates;
    jc["median"] = c.median ? nlohmann::json(*c.median) : nlohmann::json(nullptr);
    jc["spread"] = c.spread ? nlohmann::json(*c.spread) : nlohmann::json(nullptr);
    jc["flagged"] = c.flagged;
    j["comparisons"].push_back(std::move(jc));
  }
  return j;
}

inline nlohmann::json registry_json(const DmvRegistry& registry) {
  nlohmann::json j;
  j["vehicles"] = nlohmann::json::array();
  for (const auto& [id, e] : registry.entries())
    j["vehicles"].push_back({{"id", id.value},
                             {"plate", e.plate},
                             {"vin", e.vin},
                             {"public_key", to_hex(e.public_key)},
                             {"reputation", e.reputation.value()}});
  return j;
}

inline DmvRegistry parse_registry(const nlohmann::json& j) {
  DmvRegistry r;
  try {
    for (const auto& v : j.at("vehicles")) {
      const auto key = from_hex(v.at("public_key").get<std::string>());
      if (key.size() != crypto_sign_PUBLICKEYBYTES) throw Error(ErrorKind::Decode, "bad public key length");
      RegistryEntry e;
      e.plate = v.at("plate").get<std::string>();
      e.vin = v.at("vin").get<std::string>();
      std::copy(key.begin(), key.end(), e.public_key.begin());
      e.reputation = ReputationScore(v.at("reputation").get<double>());
      r.add(VehicleId{v.at("id").get<std::uint32_t>()}, std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("registry: ") + e.what());
  }
  return r;
}

/// File names written under the output directory.
struct OutputFiles {
  static constexpr const char* kLedger = "ledger.poel";
  static constexpr const char* kUnconfirmed = "unconfirmed.poeu";
  static constexpr const char* kTranscript = "transcript.jsonl";
  static constexpr const char* kMetrics = "metrics.json";
  static constexpr const char* kRegistry = "registry.json";
  static constexpr const char* kLedgerJson = "ledger.json";
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void write_outputs(const SimOutcome& o, const std::filesystem::path& out_dir, LogLevel level) {
  std::filesystem::create_directories(out_dir);
  write_file((out_dir / OutputFiles::kLedger).string(), serialize_ledger_file(o.ledger.blocks()));
  write_file((out_dir / OutputFiles::kUnconfirmed).string(), serialize_unconfirmed_file(o.ledger.unconfirmed()));
  if (level != LogLevel::Off) write_text(out_dir / OutputFiles::kTranscript, transcript_jsonl(o.transcript, level));
  write_text(out_dir / OutputFiles::kMetrics, metrics_json(o).dump(2) + "\n");
  write_text(out_dir / OutputFiles::kRegistry, registry_json(o.registry_after).dump(2) + "\n");
  write_text(out_dir / OutputFiles::kLedgerJson, ledger_json(o.ledger).dump(2) + "\n");
}

}  // namespace poe
