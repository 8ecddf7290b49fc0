#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "mtm/inference.hpp"
#include "mtm/model.hpp"

namespace mtm {

// Artifact layout: one line of JSON (the manifest) followed by a payload of
// little-endian float64 arrays, row-major, back to back. The manifest lists
// every array with its offset, shape and FNV-1a checksum, plus a checksum of
// the whole payload.
inline constexpr int kArtifactMajorVersion = 1;
inline constexpr int kArtifactMinorVersion = 0;

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ULL);

void write_model(const TrainedModel& model, std::ostream& out);
TrainedModel read_model(std::istream& in);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

struct GroundTruth {
  SyntheticSpec spec;
  TrueParams params;
  std::vector<std::string> env_names;

  friend bool operator==(const GroundTruth& a, const GroundTruth& b) {
    return a.params.beta == b.params.beta && a.params.gamma == b.params.gamma &&
           a.params.doc_thetas == b.params.doc_thetas && a.params.support_mask == b.params.support_mask &&
           a.env_names == b.env_names;
  }
};

void write_truth(const GroundTruth& truth, std::ostream& out);
GroundTruth read_truth(std::istream& in);
void save_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);

}  // namespace mtm
