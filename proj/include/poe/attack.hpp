#pragma once

// Adversarial actors. Each attack wraps the honest state machine: it either
// rewrites what protocol_step emits or answers a specific input itself, so
// every defence is exercised at the protocol boundary.

#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "poe/protocol.hpp"
#include "poe/scenario.hpp"

namespace poe {

struct TamperBehavior {
  TamperField field;
  double delta;
};

struct ImpersonateBehavior {
  VehicleId claimed;
};

struct RelayBehavior {
  std::vector<VehicleId> fake_witnesses;
  Millis delay = 0;
  std::vector<std::shared_ptr<const SignedMessage>> pending;
};

/// Answers any event generation request, ignoring the reply window, and
/// claims to have been at the scene.
struct FakeWitnessBehavior {
  std::set<AccidentId> answered;
};

struct ColludeBehavior {};

using Behavior = std::variant<TamperBehavior, ImpersonateBehavior, RelayBehavior, FakeWitnessBehavior, ColludeBehavior>;

/// One simulated vehicle: honest node state plus any attack wrappers.
struct Actor {
  NodeState state;
  std::vector<Behavior> behaviors;
};

struct ActorStep {
  std::vector<Outbound> out;
  std::vector<TimerRequest> timers;
  std::optional<std::string> unexpected;
};

/// Applies a post-signing mutation; digest and signature are left stale.
inline void tamper_event(EventData& e, TamperField field, double delta) {
  switch (field) {
    case TamperField::Speed:
      for (auto& s : e.edr_window) s.speed = std::max(0.0, s.speed + delta);
      break;
    case TamperField::Heading:
      for (auto& s : e.edr_window) s.heading = std::fmod(std::fmod(s.heading + delta, 360.0) + 360.0, 360.0);
      break;
    case TamperField::LocationX: e.location.x += delta; break;
    case TamperField::LocationY: e.location.y += delta; break;
    case TamperField::Timestamp: e.timestamp += static_cast<Millis>(std::llround(delta)); break;
  }
}

namespace detail {

inline const EventGenerationRequest* as_request(const Input& in) {
  const auto* msg = std::get_if<std::shared_ptr<const SignedMessage>>(&in);
  if (!msg) return nullptr;
  return std::get_if<EventGenerationRequest>(&(*msg)->body);
}

/// Re-signs an outbound message after a wrapper changed it.
inline std::shared_ptr<const SignedMessage> reseal(VehicleId claimed_sender, Message body, const SecretKey& key) {
  return seal(claimed_sender, std::move(body), key);
}

inline void apply_tamper(const Actor& a, const TamperBehavior& t, std::vector<Outbound>& out) {
  for (auto& o : out) {
    const auto* b = std::get_if<EventDataBroadcast>(&o.message->body);
    if (!b || b->event.reporter != a.state.id) continue;
    auto e = b->event;
    tamper_event(e, t.field, t.delta);
    o.message = reseal(o.message->sender, EventDataBroadcast{std::move(e)}, a.state.keys.secret_key);
  }
}

inline void apply_impersonation(const Actor& a, const ImpersonateBehavior& imp, std::vector<Outbound>& out) {
  for (auto& o : out) {
    Message body = o.message->body;
    if (auto* b = std::get_if<EventDataBroadcast>(&body)) {
      b->event.reporter = imp.claimed;
      b->event.digest = compute_event_digest(b->event);
      b->event.signature = sign(a.state.keys.secret_key, b->event.digest);
    } else if (auto* c = std::get_if<WitnessConfirm>(&body)) {
      c->witness = imp.claimed;
    } else if (auto* v = std::get_if<VerifierValidation>(&body)) {
      v->verifier = imp.claimed;
    }
    o.message = reseal(imp.claimed, std::move(body), a.state.keys.secret_key);
  }
}

inline void apply_collusion(const Actor& a, std::vector<Outbound>& out) {
  for (auto& o : out) {
    const auto* v = std::get_if<VerifierValidation>(&o.message->body);
    if (!v) continue;
    const auto& view = a.state.accidents.at(v->accident_id);
    VerifierValidation forged;
    forged.accident_id = v->accident_id;
    forged.verifier = v->verifier;
    std::vector<EventData> all;
    for (const auto& [d, e] : view.events) {
      forged.verdicts[d] = true;
      all.push_back(*e);
    }
    sort_events(all);
    const auto& f = *view.federation;
    forged.signature = sign(a.state.keys.secret_key,
                            block_signing_digest(v->accident_id, all, f.members, f.threshold_n, f.leader));
    o.message = reseal(o.message->sender, std::move(forged), a.state.keys.secret_key);
  }
}

inline std::optional<ActorStep> fake_witness_answer(Actor& a, FakeWitnessBehavior& fw, const Input& in, Millis now,
                                                     const ProtocolContext& ctx) {
  const auto* req = as_request(in);
  if (!req || fw.answered.contains(req->accident_id)) return std::nullopt;
  fw.answered.insert(req->accident_id);
  ActorStep step;
  auto push = [&](Channel ch, std::vector<VehicleId> to, bool bcast, Message m) {
    step.out.push_back(Outbound{ch, std::move(to), bcast, seal(a.state.id, std::move(m), a.state.keys.secret_key)});
  };
  push(Channel::Cellular, {req->origin}, false, WitnessConfirm{req->accident_id, a.state.id});
  const Reporter me{a.state.id, a.state.keys, req->scene, *a.state.edr};
  auto e = make_event_data(me, EventRole::Witness, req->accident_id, now,
                           WindowParams{req->sent_at, ctx.params.edr_half_width}, ctx.registry);
  push(Channel::Cellular, {}, true, EventDataBroadcast{std::move(e)});
  auto& view = a.state.accidents[req->accident_id];
  view.has_role = true;
  view.role = Role::Witness;
  view.responded = true;
  return step;
}

}  // namespace detail

/// Steps one actor: honest transition, then each wrapper in order.
inline ActorStep step_actor(Actor& actor, const Input& input, Millis now, const ProtocolContext& ctx) {
  for (auto& b : actor.behaviors) {
    if (auto* fw = std::get_if<FakeWitnessBehavior>(&b)) {
      if (auto answered = detail::fake_witness_answer(actor, *fw, input, now, ctx)) return *answered;
    }
    if (auto* relay = std::get_if<RelayBehavior>(&b)) {
      if (const auto* t = std::get_if<TimerExpiry>(&input); t && t->kind == TimerKind::Relay) {
        ActorStep step;
        for (const auto& msg : relay->pending) step.out.push_back(Outbound{Channel::Cellular, relay->fake_witnesses, false, msg});
        relay->pending.clear();
        return step;
      }
    }
  }

  auto result = protocol_step(std::move(actor.state), input, now, ctx);
  actor.state = std::move(result.state);
  ActorStep step{std::move(result.out), std::move(result.timers), std::move(result.unexpected)};

  for (auto& b : actor.behaviors) {
    if (auto* relay = std::get_if<RelayBehavior>(&b)) {
      if (detail::as_request(input) && !step.unexpected) {
        relay->pending.push_back(std::get<std::shared_ptr<const SignedMessage>>(input));
        step.timers.push_back(TimerRequest{now + relay->delay, TimerExpiry{TimerKind::Relay, detail::as_request(input)->accident_id}});
      }
    } else if (std::holds_alternative<ColludeBehavior>(b)) {
      if (const auto* t = std::get_if<TimerExpiry>(&input); t && t->kind == TimerKind::ValidationCutoff)
        detail::apply_collusion(actor, step.out);
    } else if (const auto* t = std::get_if<TamperBehavior>(&b)) {
      detail::apply_tamper(actor, *t, step.out);
    }
  }
  for (const auto& b : actor.behaviors)
    if (const auto* imp = std::get_if<ImpersonateBehavior>(&b)) detail::apply_impersonation(actor, *imp, step.out);
  return step;
}

}  // namespace poe
