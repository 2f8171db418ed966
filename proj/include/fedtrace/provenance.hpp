#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedtrace/ledger.hpp"

namespace fedtrace {

struct TrainingAssertion {
  std::string author;
  std::int64_t epochs = 0;
  std::string data_digest;  // CID of a class-count summary blob, never raw data
  Objective objective = Objective::Qn;
  SimTime timestamp = 0;

  Json to_json() const;
  static TrainingAssertion from_json(const Json& j);
};

struct Manifest {
  std::string asset_cid;
  std::vector<std::string> ingredients;  // 0 or 1 parent model CID
  std::vector<TrainingAssertion> assertions;
  std::string wallet_address;
  std::string signer_id;
  std::string signature;  // hex HMAC over the canonical payload

  // Canonical JSON without the signature field; the bytes that get signed.
  std::string canonical_payload() const;
  // Canonical JSON including the signature; the stored blob bytes.
  std::string serialize() const;
  Json to_json() const;
  static Manifest from_json(const Json& j);
  static Manifest parse(const std::string& bytes);
};

// Node id -> signing key (hex). Simulated symmetric signing: verification
// uses the same registry the signer drew from.
class KeyRegistry {
 public:
  static std::string derive_key(const std::string& node_id, std::uint64_t seed);

  void add(const std::string& signer_id, std::string key_hex);
  const std::string& key_of(const std::string& signer_id) const;  // throws NotFoundError
  bool contains(const std::string& signer_id) const;

  Json to_json() const;
  static KeyRegistry from_json(const Json& j);
  void save(const std::filesystem::path& file) const;
  static KeyRegistry load(const std::filesystem::path& file);

 private:
  std::map<std::string, std::string> keys_;
};

std::string wallet_address_of(const std::string& node_id, std::uint64_t seed);

std::string sign_manifest(const Manifest& m, const std::string& key_hex);
bool verify_manifest(const Manifest& m, const std::string& key_hex);

// Resolves a model CID to its manifest CID (usually backed by ContractState).
using ManifestResolver = std::function<std::optional<std::string>(const std::string&)>;

// Builds and signs a manifest for a stored asset. The parent model, when
// given, must resolve to a stored manifest; its assertion history is carried
// forward so the new manifest lists the whole chain.
Manifest build_manifest(const std::string& asset_cid, const std::string& parent_model_cid,
                        const TrainingAssertion& assertion, const std::string& wallet,
                        const std::string& signer_id, const std::string& key_hex,
                        const ContentStore& store, const ManifestResolver& resolver);

struct LineageEntry {
  std::string model_cid;
  std::string manifest_cid;
  Manifest manifest;
};

struct LineageError : std::runtime_error {
  std::string offending_cid;
  LineageError(const std::string& msg, std::string cid)
      : std::runtime_error(msg), offending_cid(std::move(cid)) {}
};

// Walks head -> genesis via ingredients, returns genesis-first order.
// Verifies every signature, every CID linkage, and cycle freedom.
std::vector<LineageEntry> validate_lineage(const std::string& head_model_cid,
                                           const ContentStore& store,
                                           const ManifestResolver& resolver,
                                           const KeyRegistry& keys);

// Epochs-proportional split of `pool` over lineage wallets, integerized by
// largest remainder so the amounts always sum to the pool. Zero total epochs
// pays the head submitter everything.
std::vector<std::pair<std::string, std::int64_t>> apportion_rewards(
    const std::vector<LineageEntry>& lineage, std::int64_t pool);

}  // namespace fedtrace
