#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedtrace/common.hpp"

namespace fedtrace {

using Json = nlohmann::json;

// 64-hex-char SHA-256 content id.
std::string cid_of(std::string_view bytes);
bool is_cid(std::string_view s);

// In-memory content-addressed blob store, persistable as a directory of
// CID-named files.
class ContentStore {
 public:
  std::string put(std::string bytes);
  const std::string& get(const std::string& cid) const;  // throws NotFoundError
  bool contains(const std::string& cid) const;
  size_t size() const { return blobs_.size(); }
  const std::map<std::string, std::string>& blobs() const { return blobs_; }

  void persist(const std::filesystem::path& dir) const;
  static ContentStore load(const std::filesystem::path& dir);

 private:
  std::map<std::string, std::string> blobs_;
};

struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class NodeRole { Trainer, Validator };
enum class EventKind { NodeRegistered, ModelSubmitted, VoteSubmitted, RewardPaid };
enum class VoterFilter { All, Trainers, Validators };

const char* node_role_name(NodeRole r);
NodeRole node_role_from_name(const std::string& s);
const char* event_kind_name(EventKind k);
EventKind event_kind_from_name(const std::string& s);

struct LedgerEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::NodeRegistered;
  SimTime confirmed_at = 0;
  SimTime submitted_at = 0;
  std::string sender;
  std::uint64_t nonce = 0;
  Json payload;

  Json to_json() const;
  static LedgerEvent from_json(const Json& j);
  // One canonical JSON line; the log digest is built over these.
  std::string canonical_line() const;
};

struct NodeInfo {
  NodeRole role = NodeRole::Trainer;
  SimTime registered_at = 0;
};

struct ModelInfo {
  std::string submitter;
  std::string manifest_cid;
  std::string parent_cid;  // empty for genesis submissions
  Json meta;
  std::uint64_t seq = 0;
  SimTime confirmed_at = 0;
};

struct VoteInfo {
  std::string voter;
  std::string model_cid;
  SimTime time = 0;
  std::uint64_t seq = 0;
};

struct RewardInfo {
  std::string wallet;
  std::int64_t amount = 0;
  std::string model_cid;
};

// Pure fold of the event log.
struct ContractState {
  std::map<std::string, NodeInfo> nodes;
  std::map<std::string, ModelInfo> models;
  std::vector<VoteInfo> votes;
  std::vector<RewardInfo> rewards;

  void apply(const LedgerEvent& ev);
};

ContractState fold_events(const std::vector<LedgerEvent>& events);

struct SubmitOutcome {
  bool accepted = false;
  std::string reason;  // empty when accepted
};

struct LedgerConfig {
  SimTime confirmation_delay_ms = 2000;
  SimTime confirmation_jitter_ms = 0;
  std::uint64_t seed = 0;
};

// Smart-contract stand-in. Transactions are validated at submission against
// the projected state (confirmed plus still-pending accepted transactions),
// then confirmed after the configured delay. Confirmation assigns the dense
// event sequence using the deterministic order (time, sender, nonce).
class Ledger {
 public:
  explicit Ledger(LedgerConfig cfg = {});

  SubmitOutcome register_node(const std::string& address, NodeRole role, SimTime now);
  SubmitOutcome submit_model(const std::string& sender, const std::string& model_cid,
                             const std::string& manifest_cid, const std::string& parent_cid,
                             Json meta, SimTime now);
  SubmitOutcome submit_vote(const std::string& voter, const std::string& model_cid, SimTime now);
  // Reward payouts are contract-side actions, not node transactions.
  void record_reward(const std::string& wallet, std::int64_t amount,
                     const std::string& model_cid, SimTime now);

  // Confirms every pending transaction with confirm-time <= t.
  void confirm_until(SimTime t);
  void confirm_all();

  std::vector<LedgerEvent> events_since(std::uint64_t cursor) const;
  const std::vector<LedgerEvent>& events() const { return log_; }
  const ContractState& state() const { return state_; }
  std::uint64_t head() const { return log_.size(); }
  bool has_pending() const { return !pending_.empty(); }

  int tally_votes(const std::string& model_cid, VoterFilter filter = VoterFilter::All) const;

  std::string log_digest() const;
  void write_jsonl(const std::filesystem::path& file) const;
  static std::vector<LedgerEvent> read_jsonl(const std::filesystem::path& file);
  static std::string digest_of(const std::vector<LedgerEvent>& events);

  ContentStore& store() { return store_; }
  const ContentStore& store() const { return store_; }

 private:
  struct PendingTx {
    SimTime submitted_at = 0;
    SimTime confirm_at = 0;
    std::string sender;
    std::uint64_t nonce = 0;
    EventKind kind = EventKind::NodeRegistered;
    Json payload;
  };

  SubmitOutcome enqueue(EventKind kind, const std::string& sender, Json payload, SimTime now);
  SimTime confirmation_time(SimTime now);

  LedgerConfig cfg_;
  ContentStore store_;
  std::vector<LedgerEvent> log_;
  ContractState state_;      // fold of log_
  ContractState projected_;  // fold of log_ plus pending
  std::vector<PendingTx> pending_;
  std::map<std::string, std::uint64_t> next_nonce_;
  std::uint64_t tx_counter_ = 0;
};

}  // namespace fedtrace
