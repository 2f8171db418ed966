#include "fedtrace/provenance.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fedtrace/crypto.hpp"
#include "fedtrace/rng.hpp"

namespace fedtrace {

Json TrainingAssertion::to_json() const {
  return Json{{"author", author},
              {"epochs", epochs},
              {"data_digest", data_digest},
              {"objective", objective_name(objective)},
              {"timestamp", timestamp}};
}

TrainingAssertion TrainingAssertion::from_json(const Json& j) {
  TrainingAssertion a;
  a.author = j.at("author").get<std::string>();
  a.epochs = j.at("epochs").get<std::int64_t>();
  if (a.epochs < 0) throw std::invalid_argument("training assertion: negative epochs");
  a.data_digest = j.at("data_digest").get<std::string>();
  a.objective = objective_from_name(j.at("objective").get<std::string>());
  a.timestamp = j.at("timestamp").get<SimTime>();
  return a;
}

namespace {

Json manifest_body(const Manifest& m) {
  Json assertions = Json::array();
  for (const auto& a : m.assertions) assertions.push_back(a.to_json());
  return Json{{"format_version", 1},
              {"asset", Json{{"cid", m.asset_cid}}},
              {"ingredients", m.ingredients},
              {"training_assertions", std::move(assertions)},
              {"crypto_addresses", Json{{"wallet", m.wallet_address}}},
              {"signer_id", m.signer_id}};
}

}  // namespace

std::string Manifest::canonical_payload() const { return manifest_body(*this).dump(); }

Json Manifest::to_json() const {
  Json j = manifest_body(*this);
  j["signature"] = signature;
  return j;
}

std::string Manifest::serialize() const { return to_json().dump(); }

Manifest Manifest::from_json(const Json& j) {
  Manifest m;
  m.asset_cid = j.at("asset").at("cid").get<std::string>();
  m.ingredients = j.at("ingredients").get<std::vector<std::string>>();
  if (m.ingredients.size() > 1)
    throw std::invalid_argument("manifest: at most one parent ingredient allowed");
  for (const Json& a : j.at("training_assertions"))
    m.assertions.push_back(TrainingAssertion::from_json(a));
  m.wallet_address = j.at("crypto_addresses").at("wallet").get<std::string>();
  m.signer_id = j.at("signer_id").get<std::string>();
  m.signature = j.value("signature", std::string());
  return m;
}

Manifest Manifest::parse(const std::string& bytes) { return from_json(Json::parse(bytes)); }

std::string KeyRegistry::derive_key(const std::string& node_id, std::uint64_t seed) {
  return hmac_sha256_hex("fedtrace-key-derivation", node_id + "|" + std::to_string(seed));
}

void KeyRegistry::add(const std::string& signer_id, std::string key_hex) {
  keys_[signer_id] = std::move(key_hex);
}

const std::string& KeyRegistry::key_of(const std::string& signer_id) const {
  auto it = keys_.find(signer_id);
  if (it == keys_.end()) throw NotFoundError("key registry: unknown signer " + signer_id);
  return it->second;
}

bool KeyRegistry::contains(const std::string& signer_id) const { return keys_.count(signer_id); }

Json KeyRegistry::to_json() const {
  return Json{{"format_version", 1}, {"keys", keys_}};
}

KeyRegistry KeyRegistry::from_json(const Json& j) {
  KeyRegistry reg;
  for (const auto& [signer, key] : j.at("keys").items())
    reg.keys_[signer] = key.get<std::string>();
  return reg;
}

void KeyRegistry::save(const std::filesystem::path& file) const {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("key registry: cannot write " + file.string());
  os << to_json().dump(2) << '\n';
}

KeyRegistry KeyRegistry::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("key registry: cannot read " + file.string());
  Json j;
  is >> j;
  return from_json(j);
}

std::string wallet_address_of(const std::string& node_id, std::uint64_t seed) {
  std::string digest = sha256_hex("fedtrace-wallet|" + node_id + "|" + std::to_string(seed));
  return "0x" + digest.substr(0, 40);
}

std::string sign_manifest(const Manifest& m, const std::string& key_hex) {
  return hmac_sha256_hex(key_hex, m.canonical_payload());
}

bool verify_manifest(const Manifest& m, const std::string& key_hex) {
  return !m.signature.empty() && sign_manifest(m, key_hex) == m.signature;
}

Manifest build_manifest(const std::string& asset_cid, const std::string& parent_model_cid,
                        const TrainingAssertion& assertion, const std::string& wallet,
                        const std::string& signer_id, const std::string& key_hex,
                        const ContentStore& store, const ManifestResolver& resolver) {
  if (!store.contains(asset_cid))
    throw std::invalid_argument("build_manifest: asset not in content store: " + asset_cid);
  if (assertion.epochs < 0) throw std::invalid_argument("build_manifest: negative epochs");
  if (!store.contains(assertion.data_digest))
    throw std::invalid_argument("build_manifest: data digest not resolvable: " +
                                assertion.data_digest);

  Manifest m;
  m.asset_cid = asset_cid;
  m.wallet_address = wallet;
  m.signer_id = signer_id;

  if (!parent_model_cid.empty()) {
    auto manifest_cid = resolver(parent_model_cid);
    if (!manifest_cid)
      throw std::invalid_argument("build_manifest: unresolvable parent model: " +
                                  parent_model_cid);
    if (!store.contains(*manifest_cid))
      throw std::invalid_argument("build_manifest: parent manifest blob missing: " +
                                  *manifest_cid);
    Manifest parent = Manifest::parse(store.get(*manifest_cid));
    m.ingredients.push_back(parent_model_cid);
    m.assertions = parent.assertions;  // carry the whole history forward
  }
  m.assertions.push_back(assertion);
  m.signature = sign_manifest(m, key_hex);
  return m;
}

std::vector<LineageEntry> validate_lineage(const std::string& head_model_cid,
                                           const ContentStore& store,
                                           const ManifestResolver& resolver,
                                           const KeyRegistry& keys) {
  std::vector<LineageEntry> chain;
  std::set<std::string> seen;
  std::string cursor = head_model_cid;

  while (!cursor.empty()) {
    if (seen.count(cursor))
      throw LineageError("lineage: cycle detected at model " + cursor, cursor);
    seen.insert(cursor);

    auto manifest_cid = resolver(cursor);
    if (!manifest_cid)
      throw LineageError("lineage: no manifest recorded for model " + cursor, cursor);
    if (!store.contains(*manifest_cid))
      throw LineageError("lineage: manifest blob missing: " + *manifest_cid, *manifest_cid);

    const std::string& bytes = store.get(*manifest_cid);
    if (cid_of(bytes) != *manifest_cid)
      throw LineageError("lineage: manifest bytes do not match CID " + *manifest_cid,
                         *manifest_cid);

    Manifest m;
    try {
      m = Manifest::parse(bytes);
    } catch (const std::exception& e) {
      throw LineageError("lineage: manifest " + *manifest_cid + " unparseable: " + e.what(),
                         *manifest_cid);
    }
    if (m.asset_cid != cursor)
      throw LineageError("lineage: manifest " + *manifest_cid + " describes asset " +
                             m.asset_cid + ", expected " + cursor,
                         *manifest_cid);
    if (!store.contains(m.asset_cid))
      throw LineageError("lineage: model blob missing: " + m.asset_cid, m.asset_cid);
    if (cid_of(store.get(m.asset_cid)) != m.asset_cid)
      throw LineageError("lineage: model bytes do not match CID " + m.asset_cid, m.asset_cid);
    if (!keys.contains(m.signer_id))
      throw LineageError("lineage: unknown signer " + m.signer_id + " on manifest " +
                             *manifest_cid,
                         *manifest_cid);
    if (!verify_manifest(m, keys.key_of(m.signer_id)))
      throw LineageError("lineage: signature mismatch on manifest " + *manifest_cid,
                         *manifest_cid);

    LineageEntry entry;
    entry.model_cid = cursor;
    entry.manifest_cid = *manifest_cid;
    entry.manifest = m;
    chain.push_back(std::move(entry));

    cursor = chain.back().manifest.ingredients.empty() ? std::string()
                                                       : chain.back().manifest.ingredients[0];
  }

  std::reverse(chain.begin(), chain.end());  // genesis first
  return chain;
}

std::vector<std::pair<std::string, std::int64_t>> apportion_rewards(
    const std::vector<LineageEntry>& lineage, std::int64_t pool) {
  if (pool < 0) throw std::invalid_argument("apportion_rewards: negative pool");
  if (lineage.empty()) throw std::invalid_argument("apportion_rewards: empty lineage");

  // Each manifest carries the full history; the head entry alone holds every
  // assertion exactly once.
  const Manifest& head = lineage.back().manifest;
  std::map<std::string, std::int64_t> epochs_by_wallet;
  std::int64_t total_epochs = 0;

  // Wallet attribution: each assertion belongs to the manifest whose tail it
  // is; walk the chain so per-step wallets are used, not just the head's.
  for (size_t i = 0; i < lineage.size(); ++i) {
    const Manifest& m = lineage[i].manifest;
    if (m.assertions.empty())
      throw std::invalid_argument("apportion_rewards: manifest without assertions");
    const TrainingAssertion& a = m.assertions.back();
    epochs_by_wallet[m.wallet_address] += a.epochs;
    total_epochs += a.epochs;
  }

  if (total_epochs == 0) return {{head.wallet_address, pool}};

  struct Share {
    std::string wallet;
    std::int64_t base;
    double remainder;
  };
  std::vector<Share> shares;
  std::int64_t assigned = 0;
  for (const auto& [wallet, epochs] : epochs_by_wallet) {
    double exact = static_cast<double>(pool) * static_cast<double>(epochs) /
                   static_cast<double>(total_epochs);
    std::int64_t base = static_cast<std::int64_t>(exact);
    shares.push_back({wallet, base, exact - static_cast<double>(base)});
    assigned += base;
  }

  std::int64_t leftover = pool - assigned;
  std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    return a.wallet < b.wallet;
  });
  for (std::int64_t i = 0; i < leftover; ++i) shares[static_cast<size_t>(i)].base += 1;

  std::sort(shares.begin(), shares.end(),
            [](const Share& a, const Share& b) { return a.wallet < b.wallet; });
  std::vector<std::pair<std::string, std::int64_t>> out;
  out.reserve(shares.size());
  for (const Share& s : shares) out.push_back({s.wallet, s.base});
  return out;
}

}  // namespace fedtrace
