#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fedtrace/crypto.hpp"
#include "fedtrace/ledger.hpp"

using namespace fedtrace;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fedtrace_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// A small confirmed history: two nodes, one model, one vote.
Ledger seeded_ledger() {
  Ledger led{LedgerConfig{1000, 0, 0}};
  REQUIRE(led.register_node("alice", NodeRole::Trainer, 0).accepted);
  REQUIRE(led.register_node("vera", NodeRole::Validator, 0).accepted);
  led.confirm_until(1000);
  std::string model_cid = led.store().put("model-bytes-1");
  std::string manifest_cid = led.store().put("manifest-bytes-1");
  REQUIRE(led.submit_model("alice", model_cid, manifest_cid, "", Json{{"epochs", 5}}, 1500)
              .accepted);
  REQUIRE(led.submit_vote("vera", model_cid, 1600).accepted);
  led.confirm_all();
  return led;
}

}  // namespace

TEST_CASE("sha256 and hmac match the published vectors") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  std::string key(20, '\x0b');
  CHECK(hmac_sha256_hex(key, "Hi There") ==
        "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7");
}

TEST_CASE("content ids and the store") {
  std::string bytes = "hello world";
  CHECK(cid_of(bytes) == sha256_hex(bytes));
  CHECK(is_cid(cid_of(bytes)));
  CHECK(!is_cid("xyz"));
  CHECK(!is_cid(std::string(64, 'G')));

  ContentStore store;
  std::string cid = store.put(bytes);
  CHECK(store.contains(cid));
  CHECK(store.get(cid) == bytes);
  CHECK(store.put(bytes) == cid);
  CHECK(store.size() == 1);
  CHECK_THROWS_AS(store.get(std::string(64, 'a')), NotFoundError);

  TempDir tmp;
  store.put("second blob");
  store.persist(tmp.path);
  ContentStore back = ContentStore::load(tmp.path);
  CHECK(back.size() == 2);
  CHECK(back.get(cid) == bytes);

  // A tampered blob keeps its filename key; the mismatch is visible to any
  // consumer that rehashes, which lineage validation does.
  {
    std::ofstream f(tmp.path / cid, std::ios::binary | std::ios::trunc);
    f << "evil";
  }
  ContentStore tampered = ContentStore::load(tmp.path);
  CHECK(tampered.get(cid) == "evil");
  CHECK(cid_of(tampered.get(cid)) != cid);
}

TEST_CASE("registration and submission are validated against projected state") {
  Ledger led{LedgerConfig{2000, 0, 0}};
  CHECK(led.register_node("alice", NodeRole::Trainer, 0).accepted);
  // Duplicate registration is rejected while the first is still pending.
  CHECK(!led.register_node("alice", NodeRole::Trainer, 100).accepted);
  CHECK(!led.register_node("", NodeRole::Trainer, 100).accepted);

  // Model submission requires a registered trainer and stored blobs.
  std::string cid = led.store().put("m1");
  std::string man = led.store().put("man1");
  CHECK(!led.submit_model("bob", cid, man, "", {}, 100).accepted);

  // Pending registration already projects, so submission is accepted
  // before confirmation.
  CHECK(led.submit_model("alice", cid, man, "", {}, 150).accepted);
  CHECK(led.events().empty());
  led.confirm_until(10'000);
  CHECK(led.events().size() == 2);

  // Unknown blobs, duplicate model ids and unknown parents are rejected.
  CHECK(!led.submit_model("alice", std::string(64, 'a'), man, "", {}, 300).accepted);
  CHECK(!led.submit_model("alice", cid, man, "", {}, 300).accepted);
  std::string cid2 = led.store().put("m2");
  CHECK(!led.submit_model("alice", cid2, man, std::string(64, 'b'), {}, 300).accepted);
  CHECK(led.submit_model("alice", cid2, man, cid, {}, 300).accepted);

  // Validators cannot submit models.
  CHECK(led.register_node("vera", NodeRole::Validator, 300).accepted);
  led.confirm_all();
  std::string cid3 = led.store().put("m3");
  CHECK(!led.submit_model("vera", cid3, man, "", {}, 400).accepted);

  // Votes need a registered voter and a known model.
  CHECK(led.submit_vote("vera", cid, 500).accepted);
  CHECK(!led.submit_vote("mallory", cid, 500).accepted);
  CHECK(!led.submit_vote("vera", cid3, 500).accepted);
}

TEST_CASE("confirmation order is time, then sender, then nonce") {
  Ledger led{LedgerConfig{1000, 0, 0}};
  // Same submission time for everyone; confirm times tie.
  CHECK(led.register_node("zed", NodeRole::Trainer, 0).accepted);
  CHECK(led.register_node("alice", NodeRole::Trainer, 0).accepted);
  CHECK(led.register_node("mike", NodeRole::Trainer, 0).accepted);
  std::string cid = led.store().put("m");
  std::string man = led.store().put("man");
  CHECK(led.submit_model("alice", cid, man, "", {}, 0).accepted);
  led.confirm_until(999);
  CHECK(led.events().empty());
  led.confirm_until(1000);

  auto evs = led.events();
  REQUIRE(evs.size() == 4);
  CHECK(evs[0].sender == "alice");
  CHECK(evs[0].nonce == 0);
  CHECK(evs[1].sender == "alice");
  CHECK(evs[1].nonce == 1);
  CHECK(evs[2].sender == "mike");
  CHECK(evs[3].sender == "zed");
  for (size_t i = 0; i < evs.size(); ++i) CHECK(evs[i].seq == i);
}

TEST_CASE("confirmation jitter is deterministic per seed") {
  auto confirm_times = [](std::uint64_t seed) {
    Ledger led{LedgerConfig{1000, 500, seed}};
    led.register_node("a", NodeRole::Trainer, 0);
    led.register_node("b", NodeRole::Trainer, 0);
    led.register_node("c", NodeRole::Trainer, 0);
    led.confirm_all();
    std::vector<SimTime> ts;
    for (const auto& e : led.events()) ts.push_back(e.confirmed_at);
    return ts;
  };
  auto t1 = confirm_times(7);
  auto t2 = confirm_times(7);
  auto t3 = confirm_times(8);
  CHECK(t1 == t2);
  CHECK(t1 != t3);
  for (SimTime t : t1) {
    CHECK(t >= 1000);
    CHECK(t <= 1500);
  }
}

TEST_CASE("vote tallies keep only the latest vote per voter") {
  Ledger led{LedgerConfig{10, 0, 0}};
  led.register_node("t1", NodeRole::Trainer, 0);
  led.register_node("v1", NodeRole::Validator, 0);
  led.register_node("v2", NodeRole::Validator, 0);
  led.confirm_all();
  std::string m1 = led.store().put("m1");
  std::string m2 = led.store().put("m2");
  std::string man = led.store().put("man");
  led.submit_model("t1", m1, man, "", {}, 20);
  led.submit_model("t1", m2, man, m1, {}, 21);
  led.confirm_all();

  led.submit_vote("v1", m1, 40);
  led.submit_vote("v2", m1, 41);
  led.confirm_all();
  CHECK(led.tally_votes(m1) == 2);

  // v1 changes its mind; only the newest vote counts.
  led.submit_vote("v1", m2, 50);
  led.confirm_all();
  CHECK(led.tally_votes(m1) == 1);
  CHECK(led.tally_votes(m2) == 1);

  led.submit_vote("t1", m2, 60);
  led.confirm_all();
  CHECK(led.tally_votes(m2, VoterFilter::All) == 2);
  CHECK(led.tally_votes(m2, VoterFilter::Validators) == 1);
  CHECK(led.tally_votes(m2, VoterFilter::Trainers) == 1);
  CHECK_THROWS_AS(led.tally_votes(std::string(64, 'f')), std::invalid_argument);
}

TEST_CASE("rewards are contract actions with validated inputs") {
  Ledger led = seeded_ledger();
  std::string model_cid;
  for (const auto& [cid, info] : led.state().models) model_cid = cid;

  led.record_reward("0xabc", 250, model_cid, 5000);
  led.confirm_all();
  REQUIRE(!led.state().rewards.empty());
  CHECK(led.state().rewards[0].wallet == "0xabc");
  CHECK(led.state().rewards[0].amount == 250);
  CHECK(led.events().back().sender == "@contract");

  CHECK_THROWS_AS(led.record_reward("", 10, model_cid, 5000), std::invalid_argument);
  CHECK_THROWS_AS(led.record_reward("0xabc", -1, model_cid, 5000), std::invalid_argument);
}

TEST_CASE("event log round trips through jsonl and folds to the same state") {
  Ledger led = seeded_ledger();

  TempDir tmp;
  fs::path file = tmp.path / "ledger.jsonl";
  led.write_jsonl(file);
  auto events = Ledger::read_jsonl(file);
  REQUIRE(events.size() == led.events().size());
  for (size_t i = 0; i < events.size(); ++i)
    CHECK(events[i].canonical_line() == led.events()[i].canonical_line());

  CHECK(Ledger::digest_of(events) == led.log_digest());

  // The digest is the hash of the newline-joined canonical lines.
  std::string joined;
  for (const auto& e : events) joined += e.canonical_line() + "\n";
  CHECK(led.log_digest() == sha256_hex(joined));

  ContractState folded = fold_events(events);
  CHECK(folded.nodes.size() == led.state().nodes.size());
  CHECK(folded.models.size() == led.state().models.size());
  CHECK(folded.votes.size() == led.state().votes.size());
  CHECK(folded.nodes.at("alice").role == NodeRole::Trainer);

  // A corrupted line is reported with its line number.
  {
    std::ofstream f(file, std::ios::app);
    f << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(Ledger::read_jsonl(file), doctest::Contains("line 5"),
                       std::runtime_error);
}

TEST_CASE("events since a cursor expose only the new suffix") {
  Ledger led = seeded_ledger();
  auto all = led.events_since(0);
  CHECK(all.size() == led.head());
  auto tail = led.events_since(2);
  REQUIRE(tail.size() == all.size() - 2);
  CHECK(tail.front().seq == 2);
  CHECK(led.events_since(led.head()).empty());
}
