#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace vemd {

// A named joint set plus the ordered list of limbs (joint-index pairs).
struct Skeleton {
  std::string name;
  std::vector<std::string> joints;
  std::vector<std::pair<int, int>> edges;

  int num_joints() const { return static_cast<int>(joints.size()); }
  int num_limbs() const { return static_cast<int>(edges.size()); }

  // Throws ConfigError on out-of-range, self-loop or duplicate edges.
  void validate() const;
};

// Versioned set of skeletons loaded from the skeleton config file.
class SkeletonRegistry {
 public:
  static SkeletonRegistry from_json(const nlohmann::json& doc);
  static SkeletonRegistry load(const std::filesystem::path& path);
  // The config compiled into the library from config/skeletons.json.
  static const SkeletonRegistry& builtin();

  const Skeleton& get(const std::string& name) const;
  bool contains(const std::string& name) const { return skeletons_.count(name) > 0; }
  int version() const { return version_; }
  std::vector<std::string> names() const;

 private:
  int version_ = 0;
  std::map<std::string, Skeleton> skeletons_;
};

// Built-in skeleton names.
inline constexpr const char* kBodySkeleton = "body18";
inline constexpr const char* kFaceQuerySkeleton = "face20";
inline constexpr const char* kFaceDenseSkeleton = "face83";

const Skeleton& body_skeleton();
const Skeleton& face_query_skeleton();
const Skeleton& face_dense_skeleton();

// For every edge of `subset`, the index of the same edge (either orientation)
// in `superset`. Throws ConfigError if an edge is absent.
std::vector<int> limb_index_map(const Skeleton& superset, const Skeleton& subset);

}  // namespace vemd
