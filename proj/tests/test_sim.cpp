#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace poe;
using poe::test::load;

namespace {

std::set<VehicleId> block_reporters(const SimOutcome& o) {
  std::set<VehicleId> out;
  for (const auto& b : o.ledger.blocks())
    for (const auto& e : b.events) out.insert(e.reporter);
  return out;
}

std::set<VehicleId> ids(std::initializer_list<std::uint32_t> v) {
  std::set<VehicleId> out;
  for (auto x : v) out.insert(VehicleId{x});
  return out;
}

template <typename T>
std::vector<const T*> sent(const SimOutcome& o) {
  std::vector<const T*> out;
  for (const auto& t : o.transcript)
    if (const auto* m = std::get_if<T>(&t.message->body)) out.push_back(m);
  return out;
}

VehicleSpec vehicle(std::uint32_t id, double x, double y, double reputation) {
  VehicleSpec v;
  v.id = VehicleId{id};
  v.plate = "R" + std::to_string(id);
  v.vin = "RVIN" + std::to_string(id);
  v.state.position = {x, y};
  v.state.velocity = {static_cast<double>(id % 7), 3.0};
  v.reputation = reputation;
  return v;
}

/// Random single-cell world: two colliding vehicles, some witnesses inside
/// DSRC range and some community vehicles outside it.
ScenarioConfig random_scenario(std::mt19937_64& rng, std::size_t witnesses, std::size_t community) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ScenarioConfig cfg;
  cfg.name = "random";
  cfg.seed = rng();
  cfg.base_stations = {BaseStation{CellId{1}, {0, 0}}};
  cfg.edr.capacity = 80;
  cfg.params.edr_half_width = 1000;
  cfg.vehicles.push_back(vehicle(1, 0, 0, 50));
  cfg.vehicles.push_back(vehicle(2, 6, 2, 50));
  std::uint32_t next = 3;
  for (std::size_t i = 0; i < witnesses; ++i) {
    const double r = 290.0 * std::sqrt(unit(rng)), a = 6.283 * unit(rng);
    cfg.vehicles.push_back(vehicle(next++, 3 + r * std::cos(a), 1 + r * std::sin(a), 20 + 80 * unit(rng)));
  }
  for (std::size_t i = 0; i < community; ++i) {
    const double r = 320.0 + 2000.0 * unit(rng), a = 6.283 * unit(rng);
    cfg.vehicles.push_back(vehicle(next++, r * std::cos(a), r * std::sin(a), 31 + 69 * unit(rng)));
  }
  cfg.colliding = ids({1, 2});
  cfg.params.federation_size = 1 + static_cast<std::uint32_t>(rng() % 7);
  return cfg;
}

}  // namespace

TEST_CASE("two-vehicle crash with three witnesses produces one block of five events") {
  const auto o = run_scenario(load("fig2_normal"));
  CHECK(o.classification == Classification::Normal);
  REQUIRE(o.ledger.blocks().size() == 1);
  CHECK(o.ledger.blocks()[0].events.size() == 5);
  CHECK(block_reporters(o) == ids({1, 2, 3, 4, 5}));
  CHECK(o.witnesses == ids({3, 4, 5}));
  CHECK(o.metrics.events_rejected.empty());
  CHECK(verify_chain(o.ledger, load("fig2_normal").registry()).valid);
}

TEST_CASE("extreme scenarios") {
  SECTION("no witness and no verifier") {
    const auto o = run_scenario(load("extreme_1"));
    CHECK(o.classification == Classification::NoWitnessNoVerifier);
    CHECK(o.ledger.blocks().empty());
    REQUIRE(o.ledger.unconfirmed().size() == 1);
    const auto& rec = o.ledger.unconfirmed()[0];
    CHECK(rec.reason == UnconfirmedReason::EmptyFederation);
    REQUIRE(rec.events.size() == 2);
    for (const auto& e : rec.events) CHECK(e.role == EventRole::Accident);
  }
  SECTION("no witness") {
    const auto o = run_scenario(load("extreme_2"));
    CHECK(o.classification == Classification::NoWitness);
    REQUIRE(o.ledger.blocks().size() == 1);
    for (const auto& e : o.ledger.blocks()[0].events) CHECK(e.role == EventRole::Accident);
    CHECK(block_reporters(o) == ids({1, 2}));
  }
  SECTION("no verifier") {
    const auto o = run_scenario(load("extreme_3"));
    CHECK(o.classification == Classification::NoVerifier);
    CHECK(o.ledger.blocks().empty());
    REQUIRE(o.ledger.unconfirmed().size() == 1);
    CHECK(o.ledger.unconfirmed()[0].events.size() == 5);
  }
}

TEST_CASE("classify_outcome examples") {
  const auto key3 = poe::test::key_of(VehicleId{3}).secret_key;
  const auto key1 = poe::test::key_of(VehicleId{1}).secret_key;
  const AccidentId acc = poe::test::accident_n(1);
  const ScenarioConfig cfg;
  const TranscriptEntry confirm{0, 10, VehicleId{3}, VehicleId{1}, seal(VehicleId{3}, WitnessConfirm{acc, VehicleId{3}}, key3)};
  const TranscriptEntry empty_fed{0, 50, VehicleId{1}, kDmvId,
                                  seal(VehicleId{1},
                                       UnconfirmedSubmission{{acc, UnconfirmedReason::EmptyFederation, VehicleId{1}, 0, {}}},
                                       key1)};
  CHECK(classify_outcome({confirm}, cfg) == Classification::Normal);
  CHECK(classify_outcome({}, cfg) == Classification::NoWitness);
  CHECK(classify_outcome({confirm, empty_fed}, cfg) == Classification::NoVerifier);
  CHECK(classify_outcome({empty_fed}, cfg) == Classification::NoWitnessNoVerifier);

  for (const char* name : {"fig2_normal", "extreme_1", "extreme_2", "extreme_3"}) {
    const auto o = run_scenario(load(name));
    CHECK(classify_outcome(o.transcript, load(name)) == o.classification);
  }
}

TEST_CASE("tampered witness event is rejected and the block forms from the rest") {
  const auto o = run_scenario(load("attack_tamper"));
  REQUIRE(o.ledger.blocks().size() == 1);
  CHECK(block_reporters(o) == ids({1, 2, 3, 5}));
  REQUIRE(o.metrics.events_rejected.size() == 1);
  CHECK(o.metrics.events_rejected[0].reporter == VehicleId{4});
  CHECK(o.metrics.events_rejected[0].reasons == std::vector<std::string>{"digest mismatch"});
  CHECK(o.metrics.attack_outcomes[0].summary() == "mitigated: digest mismatch");
  // The attacker signed the original digest, so it is penalised.
  CHECK(o.registry_after.reputation(VehicleId{4}).value() == 60.0 - 5.0);
}

TEST_CASE("late fake witness data is rejected for the reply window") {
  const auto o = run_scenario(load("attack_fake_witness"));
  CHECK(block_reporters(o) == ids({1, 2, 3, 4, 5}));
  REQUIRE(o.metrics.events_rejected.size() == 2);
  for (const auto& r : o.metrics.events_rejected) CHECK(r.reasons == std::vector<std::string>{"reply window"});
  CHECK(o.metrics.attack_outcomes[0].summary() == "mitigated: reply window");
}

TEST_CASE("impersonating an unregistered id gets every attacker message dropped") {
  auto cfg = inject_attack(load("fig2_normal"), Impersonate{VehicleId{5}, VehicleId{99}});
  const auto o = run_scenario(cfg);
  for (const auto& t : o.transcript) {
    CHECK(t.sender != VehicleId{5});
    if (t.sender == VehicleId{99}) CHECK_FALSE(envelope_authentic(*t.message, cfg.registry()));
  }
  CHECK(block_reporters(o) == ids({1, 2, 3, 4}));
  CHECK(o.metrics.unexpected_inputs > 0);
  CHECK(o.metrics.attack_outcomes[0].summary() == "mitigated: signature check");
}

TEST_CASE("impersonating a registered vehicle does not get the forgery recorded or the victim penalised") {
  auto cfg = inject_attack(load("fig2_normal"), Impersonate{VehicleId{5}, VehicleId{4}});
  const auto o = run_scenario(cfg);
  for (const auto& b : o.ledger.blocks())
    for (const auto& e : b.events) CHECK(event_signature_valid(e, cfg.registry()));
  CHECK_FALSE(o.metrics.attack_outcomes[0].succeeded);
  CHECK(o.registry_after.reputation(VehicleId{4}).value() >= 60.0);
}

TEST_CASE("replaying a scenario is byte-identical") {
  for (const char* name : {"fig2_normal", "attack_collusion", "extreme_3"}) {
    const auto a = run_scenario(load(name));
    const auto b = run_scenario(load(name));
    CHECK(serialize_ledger_file(a.ledger.blocks()) == serialize_ledger_file(b.ledger.blocks()));
    CHECK(serialize_unconfirmed_file(a.ledger.unconfirmed()) == serialize_unconfirmed_file(b.ledger.unconfirmed()));
    CHECK(transcript_jsonl(a.transcript, LogLevel::Full) == transcript_jsonl(b.transcript, LogLevel::Full));
    CHECK(metrics_json(a).dump() == metrics_json(b).dump());
  }
}

TEST_CASE("seed changes only the federation draw") {
  auto cfg = load("fig2_normal");
  const auto a = run_scenario(cfg);
  std::set<std::vector<VehicleId>> federations;
  for (std::uint64_t s = 1; s <= 8; ++s) {
    cfg.seed = s;
    const auto b = run_scenario(cfg);
    CHECK(b.classification == a.classification);
    CHECK(block_reporters(b) == block_reporters(a));
    federations.insert(b.federation->members);
  }
  CHECK(federations.size() > 1);
}

TEST_CASE("tampered events never enter a block") {
  std::mt19937_64 rng(101);
  const auto base = load("fig2_normal");
  const TamperField fields[] = {TamperField::Speed, TamperField::Heading, TamperField::LocationX, TamperField::LocationY,
                                TamperField::Timestamp};
  for (int trial = 0; trial < 25; ++trial) {
    auto cfg = base;
    cfg.seed = rng();
    const VehicleId attacker{static_cast<std::uint32_t>(1 + rng() % 5)};
    cfg = inject_attack(cfg, TamperEvent{attacker, fields[rng() % 5], 1.0 + static_cast<double>(rng() % 40)});
    const auto o = run_scenario(cfg);
    for (const auto& b : o.ledger.blocks())
      for (const auto& e : b.events) CHECK(event_digest_matches(e));
    CHECK_FALSE(block_reporters(o).contains(attacker));
  }
}

TEST_CASE("collusion succeeds only with a per-event majority and the threshold") {
  auto base = load("fig2_normal");
  // Five eligible community vehicles so every draw yields the same federation.
  for (auto& v : base.vehicles)
    if (v.id.value >= 6 && v.id.value <= 13) v.reputation = v.id.value <= 10 ? 60.0 : 10.0;
  base.attacks = {TamperEvent{VehicleId{4}, TamperField::Speed, 5.0}};
  std::mt19937_64 rng(55);
  for (std::uint32_t n = 1; n <= 5; ++n) {
    for (std::uint32_t c = 0; c <= 5; ++c) {
      auto cfg = base;
      cfg.params.threshold_n = n;
      std::vector<VehicleId> members{VehicleId{6}, VehicleId{7}, VehicleId{8}, VehicleId{9}, VehicleId{10}};
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(c);
      cfg = inject_attack(cfg, ColludingVerifiers{members, "approve_tampered"});
      const auto o = run_scenario(cfg);
      bool tampered_in_block = false;
      for (const auto& b : o.ledger.blocks())
        for (const auto& e : b.events) tampered_in_block |= !event_digest_matches(e);
      INFO("n=" << n << " c=" << c);
      CHECK(tampered_in_block == (2 * c > 5 && c >= n));
    }
  }
}

TEST_CASE("a longer relay delay never turns a rejected fake event into an accepted one") {
  const auto base = load("fig2_normal");
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    bool rejected_before = false;
    for (Millis delay = 0; delay <= 1200; delay += 50) {
      auto cfg = base;
      cfg.seed = seed;
      cfg = inject_attack(cfg, FakeWitnessRelay{VehicleId{3}, {VehicleId{9}}, delay});
      const auto o = run_scenario(cfg);
      const bool accepted = block_reporters(o).contains(VehicleId{9});
      if (rejected_before) CHECK_FALSE(accepted);
      rejected_before |= !accepted;
      if (delay > cfg.params.reply_window) CHECK_FALSE(accepted);
    }
    CHECK(rejected_before);
  }
}

TEST_CASE("randomized runs keep role exclusivity, range soundness, threshold soundness and liveness") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const auto cfg = random_scenario(rng, rng() % 6, rng() % 12);
    const auto o = run_scenario(cfg);
    const auto reg = cfg.registry();

    std::set<VehicleId> witnesses, verifiers;
    for (const auto* m : sent<WitnessConfirm>(o)) witnesses.insert(m->witness);
    for (const auto* m : sent<VerifierValidation>(o)) verifiers.insert(m->verifier);
    for (auto v : verifiers) CHECK_FALSE(witnesses.contains(v));

    for (const auto& b : o.ledger.blocks())
      for (const auto& e : b.events)
        if (e.role == EventRole::Witness) CHECK(distance(e.location, o.scene) <= cfg.dsrc_range);

    for (const auto* ann : sent<NewBlockAnnouncement>(o))
      CHECK(check_multisig(block_signing_digest(ann->block), ann->block.multisig, reg));

    if (o.federation) {
      REQUIRE(o.ledger.blocks().size() == 1);
      CHECK(o.ledger.blocks()[0].created_at <= cfg.accident_time + cfg.params.validation_deadline);
    } else {
      CHECK(o.ledger.blocks().empty());
      CHECK(o.ledger.unconfirmed().size() == 1);
    }
    CHECK(verify_chain(o.ledger, reg).valid);
    CHECK(classify_outcome(o.transcript, cfg) == o.classification);
  }
}

TEST_CASE("sequential accidents share one chain") {
  auto first = load("fig2_normal");
  auto second = load("extreme_2");
  second.accident_time = 120000;
  const auto a = run_scenario(first);
  const auto b = run_scenario(second, a.ledger);
  REQUIRE(b.ledger.blocks().size() == 2);
  CHECK(b.ledger.blocks()[1].prev_hash == b.ledger.blocks()[0].block_hash);
  CHECK(verify_chain(b.ledger, first.registry()).valid);
  CHECK(forensic_review(b.ledger, a.accident_id).block_height == 0);
  CHECK(forensic_review(b.ledger, b.accident_id).block_height == 1);
}

TEST_CASE("message loss is seeded and recorded") {
  auto cfg = load("fig2_normal");
  cfg.loss_rate = 0.3;
  const auto a = run_scenario(cfg);
  const auto b = run_scenario(cfg);
  CHECK(a.metrics.messages_dropped > 0);
  CHECK(transcript_jsonl(a.transcript) == transcript_jsonl(b.transcript));
  std::size_t dropped = 0;
  for (const auto& t : a.transcript) dropped += t.dropped ? 1 : 0;
  CHECK(dropped == a.metrics.messages_dropped);
}

TEST_CASE("incentives reward honest witnesses and signing verifiers") {
  const auto cfg = load("fig2_normal");
  const auto o = run_scenario(cfg);
  const auto before = cfg.registry();
  for (std::uint32_t w : {3, 4, 5})
    CHECK(o.registry_after.reputation(VehicleId{w}).value() == before.reputation(VehicleId{w}).value() + 1.0);
  for (const auto& [signer, sig] : o.ledger.blocks()[0].multisig.signatures)
    CHECK(o.registry_after.reputation(signer).value() == before.reputation(signer).value() + 1.0);
  CHECK(o.registry_after.reputation(VehicleId{13}).value() == before.reputation(VehicleId{13}).value());
}

TEST_CASE("invalid configurations name the offending field") {
  auto j = read_json_file(poe::test::scenario_path("fig2_normal"));
  j["accident"]["colliding"] = {1, 77};
  try {
    parse_scenario(j);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
    CHECK(std::string(e.what()).find("accident.colliding") != std::string::npos);
  }

  j = read_json_file(poe::test::scenario_path("fig2_normal"));
  j["world"]["vehicles"][2]["x"] = "far";
  try {
    parse_scenario(j);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("world.vehicles[2].x") != std::string::npos);
  }

  try {
    inject_attack(load("fig2_normal"), TamperEvent{VehicleId{404}, TamperField::Speed, 1.0});
    FAIL("expected InvalidAttack");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidAttack);
    CHECK(std::string(e.what()).find("attack.attacker") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_attack(nlohmann::json{{"type", "teleport"}}), Error);
}

TEST_CASE("transcript export honours the log level") {
  const auto o = run_scenario(load("extreme_1"));
  CHECK(transcript_jsonl(o.transcript, LogLevel::Off).empty());
  const auto summary = transcript_jsonl(o.transcript, LogLevel::Summary);
  const auto full = transcript_jsonl(o.transcript, LogLevel::Full);
  CHECK(static_cast<std::size_t>(std::count(summary.begin(), summary.end(), '\n')) == o.transcript.size());
  CHECK(summary.find("\"wire\"") == std::string::npos);
  CHECK(full.find("\"wire\"") != std::string::npos);
  CHECK(parse_log_level("off") == LogLevel::Off);
  CHECK(parse_log_level(nullptr) == LogLevel::Summary);
}

TEST_CASE("registry export round-trips") {
  const auto reg = load("fig2_normal").registry();
  const auto back = parse_registry(registry_json(reg));
  REQUIRE(back.size() == reg.size());
  for (const auto& [id, e] : reg.entries()) {
    CHECK(back.at(id).public_key == e.public_key);
    CHECK(back.at(id).reputation == e.reputation);
    CHECK(back.at(id).vin == e.vin);
  }
}
