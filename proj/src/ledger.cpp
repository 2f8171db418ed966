#include "fedtrace/ledger.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fedtrace/crypto.hpp"
#include "fedtrace/rng.hpp"

namespace fedtrace {

std::string cid_of(std::string_view bytes) { return sha256_hex(bytes); }

bool is_cid(std::string_view s) {
  if (s.size() != 64) return false;
  for (char c : s)
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  return true;
}

std::string ContentStore::put(std::string bytes) {
  std::string cid = cid_of(bytes);
  blobs_.emplace(cid, std::move(bytes));
  return cid;
}

const std::string& ContentStore::get(const std::string& cid) const {
  auto it = blobs_.find(cid);
  if (it == blobs_.end()) throw NotFoundError("content store: unknown CID " + cid);
  return it->second;
}

bool ContentStore::contains(const std::string& cid) const { return blobs_.count(cid) > 0; }

void ContentStore::persist(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [cid, bytes] : blobs_) {
    std::ofstream os(dir / cid, std::ios::binary);
    if (!os) throw std::runtime_error("content store: cannot write " + (dir / cid).string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os.good()) throw std::runtime_error("content store: write failed for " + cid);
  }
}

ContentStore ContentStore::load(const std::filesystem::path& dir) {
  ContentStore store;
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("content store: " + dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && is_cid(entry.path().filename().string()))
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream is(file, std::ios::binary);
    std::ostringstream buf;
    buf << is.rdbuf();
    // Keyed by filename; tampered bytes are caught by digest-recomputing
    // consumers, not silently dropped here.
    store.blobs_[file.filename().string()] = buf.str();
  }
  return store;
}

const char* node_role_name(NodeRole r) {
  return r == NodeRole::Trainer ? "trainer" : "validator";
}

NodeRole node_role_from_name(const std::string& s) {
  if (s == "trainer") return NodeRole::Trainer;
  if (s == "validator") return NodeRole::Validator;
  throw std::invalid_argument("unknown node role: " + s);
}

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::NodeRegistered: return "NodeRegistered";
    case EventKind::ModelSubmitted: return "ModelSubmitted";
    case EventKind::VoteSubmitted: return "VoteSubmitted";
    case EventKind::RewardPaid: return "RewardPaid";
  }
  throw std::logic_error("bad event kind");
}

EventKind event_kind_from_name(const std::string& s) {
  if (s == "NodeRegistered") return EventKind::NodeRegistered;
  if (s == "ModelSubmitted") return EventKind::ModelSubmitted;
  if (s == "VoteSubmitted") return EventKind::VoteSubmitted;
  if (s == "RewardPaid") return EventKind::RewardPaid;
  throw std::invalid_argument("unknown event kind: " + s);
}

Json LedgerEvent::to_json() const {
  return Json{{"seq", seq},
              {"kind", event_kind_name(kind)},
              {"confirmed_at", confirmed_at},
              {"submitted_at", submitted_at},
              {"sender", sender},
              {"nonce", nonce},
              {"payload", payload}};
}

LedgerEvent LedgerEvent::from_json(const Json& j) {
  LedgerEvent ev;
  ev.seq = j.at("seq").get<std::uint64_t>();
  ev.kind = event_kind_from_name(j.at("kind").get<std::string>());
  ev.confirmed_at = j.at("confirmed_at").get<SimTime>();
  ev.submitted_at = j.at("submitted_at").get<SimTime>();
  ev.sender = j.at("sender").get<std::string>();
  ev.nonce = j.at("nonce").get<std::uint64_t>();
  ev.payload = j.at("payload");
  return ev;
}

std::string LedgerEvent::canonical_line() const { return to_json().dump(); }

void ContractState::apply(const LedgerEvent& ev) {
  switch (ev.kind) {
    case EventKind::NodeRegistered: {
      NodeInfo info;
      info.role = node_role_from_name(ev.payload.at("role").get<std::string>());
      info.registered_at = ev.confirmed_at;
      nodes[ev.payload.at("address").get<std::string>()] = info;
      break;
    }
    case EventKind::ModelSubmitted: {
      ModelInfo info;
      info.submitter = ev.sender;
      info.manifest_cid = ev.payload.at("manifest_cid").get<std::string>();
      info.parent_cid = ev.payload.value("parent_cid", std::string());
      info.meta = ev.payload.value("meta", Json::object());
      info.seq = ev.seq;
      info.confirmed_at = ev.confirmed_at;
      models[ev.payload.at("model_cid").get<std::string>()] = info;
      break;
    }
    case EventKind::VoteSubmitted: {
      VoteInfo v;
      v.voter = ev.sender;
      v.model_cid = ev.payload.at("model_cid").get<std::string>();
      v.time = ev.confirmed_at;
      v.seq = ev.seq;
      votes.push_back(std::move(v));
      break;
    }
    case EventKind::RewardPaid: {
      RewardInfo r;
      r.wallet = ev.payload.at("wallet").get<std::string>();
      r.amount = ev.payload.at("amount").get<std::int64_t>();
      r.model_cid = ev.payload.value("model_cid", std::string());
      rewards.push_back(std::move(r));
      break;
    }
  }
}

ContractState fold_events(const std::vector<LedgerEvent>& events) {
  ContractState state;
  for (const LedgerEvent& ev : events) state.apply(ev);
  return state;
}

Ledger::Ledger(LedgerConfig cfg) : cfg_(cfg) {
  if (cfg_.confirmation_delay_ms < 0)
    throw std::invalid_argument("ledger: confirmation delay must be >= 0");
  if (cfg_.confirmation_jitter_ms < 0)
    throw std::invalid_argument("ledger: confirmation jitter must be >= 0");
}

SimTime Ledger::confirmation_time(SimTime now) {
  SimTime delay = cfg_.confirmation_delay_ms;
  if (cfg_.confirmation_jitter_ms > 0) {
    auto eng = make_engine(cfg_.seed, "ledger.jitter", tx_counter_);
    std::uniform_int_distribution<SimTime> d(0, cfg_.confirmation_jitter_ms);
    delay += d(eng);
  }
  return now + delay;
}

SubmitOutcome Ledger::enqueue(EventKind kind, const std::string& sender, Json payload,
                              SimTime now) {
  PendingTx tx;
  tx.submitted_at = now;
  tx.confirm_at = confirmation_time(now);
  tx.sender = sender;
  tx.nonce = next_nonce_[sender]++;
  tx.kind = kind;
  tx.payload = std::move(payload);
  ++tx_counter_;

  LedgerEvent projected_ev;
  projected_ev.kind = tx.kind;
  projected_ev.sender = tx.sender;
  projected_ev.nonce = tx.nonce;
  projected_ev.confirmed_at = tx.confirm_at;
  projected_ev.submitted_at = tx.submitted_at;
  projected_ev.payload = tx.payload;
  projected_.apply(projected_ev);

  pending_.push_back(std::move(tx));
  return SubmitOutcome{true, ""};
}

SubmitOutcome Ledger::register_node(const std::string& address, NodeRole role, SimTime now) {
  if (address.empty()) return {false, "empty address"};
  if (projected_.nodes.count(address)) return {false, "address already registered: " + address};
  return enqueue(EventKind::NodeRegistered, address,
                 Json{{"address", address}, {"role", node_role_name(role)}}, now);
}

SubmitOutcome Ledger::submit_model(const std::string& sender, const std::string& model_cid,
                                   const std::string& manifest_cid, const std::string& parent_cid,
                                   Json meta, SimTime now) {
  auto node = projected_.nodes.find(sender);
  if (node == projected_.nodes.end()) return {false, "sender not registered: " + sender};
  if (node->second.role != NodeRole::Trainer)
    return {false, "validator nodes cannot submit models: " + sender};
  if (!store_.contains(model_cid)) return {false, "model CID not in content store: " + model_cid};
  if (!store_.contains(manifest_cid))
    return {false, "manifest CID not in content store: " + manifest_cid};
  if (projected_.models.count(model_cid))
    return {false, "model CID already submitted: " + model_cid};
  if (!parent_cid.empty() && !projected_.models.count(parent_cid))
    return {false, "unknown parent model: " + parent_cid};
  return enqueue(EventKind::ModelSubmitted, sender,
                 Json{{"model_cid", model_cid},
                      {"manifest_cid", manifest_cid},
                      {"parent_cid", parent_cid},
                      {"meta", std::move(meta)}},
                 now);
}

SubmitOutcome Ledger::submit_vote(const std::string& voter, const std::string& model_cid,
                                  SimTime now) {
  if (!projected_.nodes.count(voter)) return {false, "voter not registered: " + voter};
  if (!projected_.models.count(model_cid)) return {false, "vote for unknown model: " + model_cid};
  return enqueue(EventKind::VoteSubmitted, voter, Json{{"model_cid", model_cid}}, now);
}

void Ledger::record_reward(const std::string& wallet, std::int64_t amount,
                           const std::string& model_cid, SimTime now) {
  if (wallet.empty()) throw std::invalid_argument("record_reward: empty wallet");
  if (amount < 0) throw std::invalid_argument("record_reward: negative amount");
  enqueue(EventKind::RewardPaid, "@contract",
          Json{{"wallet", wallet}, {"amount", amount}, {"model_cid", model_cid}}, now);
}

void Ledger::confirm_until(SimTime t) {
  std::vector<PendingTx> due, later;
  for (auto& tx : pending_) (tx.confirm_at <= t ? due : later).push_back(std::move(tx));
  pending_ = std::move(later);

  std::stable_sort(due.begin(), due.end(), [](const PendingTx& a, const PendingTx& b) {
    if (a.confirm_at != b.confirm_at) return a.confirm_at < b.confirm_at;
    if (a.sender != b.sender) return a.sender < b.sender;
    return a.nonce < b.nonce;
  });

  for (PendingTx& tx : due) {
    LedgerEvent ev;
    ev.seq = log_.size();
    ev.kind = tx.kind;
    ev.confirmed_at = tx.confirm_at;
    ev.submitted_at = tx.submitted_at;
    ev.sender = std::move(tx.sender);
    ev.nonce = tx.nonce;
    ev.payload = std::move(tx.payload);
    state_.apply(ev);
    log_.push_back(std::move(ev));
  }
}

void Ledger::confirm_all() { confirm_until(std::numeric_limits<SimTime>::max()); }

std::vector<LedgerEvent> Ledger::events_since(std::uint64_t cursor) const {
  if (cursor >= log_.size()) return {};
  return std::vector<LedgerEvent>(log_.begin() + static_cast<std::ptrdiff_t>(cursor), log_.end());
}

int Ledger::tally_votes(const std::string& model_cid, VoterFilter filter) const {
  if (!state_.models.count(model_cid))
    throw std::invalid_argument("tally_votes: unknown model " + model_cid);

  std::map<std::string, const VoteInfo*> latest;
  for (const VoteInfo& v : state_.votes) latest[v.voter] = &v;  // seq order, last wins

  int count = 0;
  for (const auto& [voter, vote] : latest) {
    if (vote->model_cid != model_cid) continue;
    auto node = state_.nodes.find(voter);
    if (node == state_.nodes.end()) continue;
    if (filter == VoterFilter::Trainers && node->second.role != NodeRole::Trainer) continue;
    if (filter == VoterFilter::Validators && node->second.role != NodeRole::Validator) continue;
    ++count;
  }
  return count;
}

std::string Ledger::digest_of(const std::vector<LedgerEvent>& events) {
  std::string all;
  for (const LedgerEvent& ev : events) {
    all += ev.canonical_line();
    all += '\n';
  }
  return sha256_hex(all);
}

std::string Ledger::log_digest() const { return digest_of(log_); }

void Ledger::write_jsonl(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("ledger: cannot write " + file.string());
  for (const LedgerEvent& ev : log_) os << ev.canonical_line() << '\n';
  if (!os.good()) throw std::runtime_error("ledger: write failed for " + file.string());
}

std::vector<LedgerEvent> Ledger::read_jsonl(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("ledger: cannot read " + file.string());
  std::vector<LedgerEvent> events;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      events.push_back(LedgerEvent::from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "ledger: bad event at line " << line_no << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
  }
  return events;
}

}  // namespace fedtrace
