#include "vemd/skeleton.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "vemd/common.hpp"
#include "vemd/skeleton_config.hpp"

namespace vemd {

void Skeleton::validate() const {
  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= num_joints() || b >= num_joints()) {
      throw ConfigError("skeleton '" + name + "': edge (" + std::to_string(a) + "," +
                        std::to_string(b) + ") references a joint outside [0," +
                        std::to_string(num_joints()) + ")");
    }
    if (a == b) {
      throw ConfigError("skeleton '" + name + "': self-loop at joint " + std::to_string(a));
    }
    auto key = std::minmax(a, b);
    if (!seen.insert(key).second) {
      throw ConfigError("skeleton '" + name + "': duplicate edge (" + std::to_string(a) +
                        "," + std::to_string(b) + ")");
    }
  }
}

SkeletonRegistry SkeletonRegistry::from_json(const nlohmann::json& doc) {
  SkeletonRegistry reg;
  try {
    reg.version_ = doc.at("version").get<int>();
    for (const auto& [name, body] : doc.at("skeletons").items()) {
      Skeleton s;
      s.name = name;
      s.joints = body.at("joints").get<std::vector<std::string>>();
      for (const auto& e : body.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw FormatError("edge must be a pair");
        s.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
      }
      s.validate();
      reg.skeletons_.emplace(name, std::move(s));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("skeleton config: ") + ex.what());
  }
  return reg;
}

SkeletonRegistry SkeletonRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open skeleton config " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("skeleton config " + path.string() + ": " + ex.what());
  }
  return from_json(doc);
}

const SkeletonRegistry& SkeletonRegistry::builtin() {
  static const SkeletonRegistry reg =
      from_json(nlohmann::json::parse(detail::kDefaultSkeletonConfig));
  return reg;
}

const Skeleton& SkeletonRegistry::get(const std::string& name) const {
  auto it = skeletons_.find(name);
  if (it == skeletons_.end()) throw ConfigError("unknown skeleton '" + name + "'");
  return it->second;
}

std::vector<std::string> SkeletonRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : skeletons_) out.push_back(name);
  return out;
}

const Skeleton& body_skeleton() { return SkeletonRegistry::builtin().get(kBodySkeleton); }
const Skeleton& face_query_skeleton() {
  return SkeletonRegistry::builtin().get(kFaceQuerySkeleton);
}
const Skeleton& face_dense_skeleton() {
  return SkeletonRegistry::builtin().get(kFaceDenseSkeleton);
}

std::vector<int> limb_index_map(const Skeleton& superset, const Skeleton& subset) {
  std::vector<int> out;
  out.reserve(subset.edges.size());
  for (auto edge : subset.edges) {
    auto key = std::minmax(edge.first, edge.second);
    int found = -1;
    for (int k = 0; k < superset.num_limbs(); ++k) {
      auto [a, b] = superset.edges[k];
      if (std::minmax(a, b) == key) {
        found = k;
        break;
      }
    }
    if (found < 0) {
      throw ConfigError("edge (" + std::to_string(edge.first) + "," +
                        std::to_string(edge.second) + ") of '" + subset.name +
                        "' is not part of '" + superset.name + "'");
    }
    out.push_back(found);
  }
  return out;
}

}  // namespace vemd
