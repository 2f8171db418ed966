#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedtrace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Simulation clock, integer milliseconds.
using SimTime = std::int64_t;

inline constexpr int kEmbeddingDim = 256;

enum class Origin { Train, Test, Generated };

enum class Objective { FldFid, Qn, QnDedup };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::FldFid: return "fld_fid";
    case Objective::Qn: return "qn";
    case Objective::QnDedup: return "qn_dedup";
  }
  throw std::logic_error("bad objective");
}

inline Objective objective_from_name(const std::string& s) {
  if (s == "fld_fid") return Objective::FldFid;
  if (s == "qn") return Objective::Qn;
  if (s == "qn_dedup") return Objective::QnDedup;
  throw std::invalid_argument("unknown objective: " + s);
}

struct Latent {
  Vec values;
  int class_id = 0;
};

// One synthetic-world sample. The latent stands in for an image; everything
// downstream (embeddings, feature maps) is derived from it deterministically.
struct SampleRecord {
  std::string id;
  Latent latent;
  Origin origin = Origin::Train;
  std::string owner;
  std::uint64_t aug_seed = 0;
  bool is_duplicate = false;
  std::string duplicate_of;
};

}  // namespace fedtrace
