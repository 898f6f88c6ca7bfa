#include "nola/pseudo_select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nola/error.hpp"
#include "nola/rng.hpp"

using nlohmann::json;

namespace nola {

namespace {
constexpr int kPseudoFormatVersion = 1;
}

void SelectionPolicy::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::InvalidConfig, "selection fraction must be in (0, 1]");
  if (floor < 1 || floor > cap) throw Error(ErrorCode::InvalidConfig, "selection requires 1 <= floor <= cap");
}

int compute_k(long long n_train, long long n_classes, const SelectionPolicy& policy) {
  if (n_train < 1 || n_classes < 2)
    throw Error(ErrorCode::InvalidCounts,
                "n_train=" + std::to_string(n_train) + ", n_classes=" + std::to_string(n_classes));
  policy.validate();
  const double raw = policy.fraction * static_cast<double>(n_train) / static_cast<double>(n_classes);
  // Guard against 0.2 * n / C landing a hair below an exact integer.
  const double k = std::floor(raw + 1e-9);
  return static_cast<int>(std::clamp(k, static_cast<double>(policy.floor), static_cast<double>(policy.cap)));
}

PseudoLabelSet select_topk(const ProbabilityBatch& probs, std::span<const std::string> sample_ids, int k) {
  if (probs.size() != sample_ids.size())
    throw Error(ErrorCode::AlignmentMismatch, std::to_string(probs.size()) + " probability rows for " +
                                                  std::to_string(sample_ids.size()) + " ids");
  if (k < 1) throw Error(ErrorCode::InvalidCounts, "k must be >= 1");
  const std::size_t num_classes = probs.probs.cols();

  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < probs.size(); ++i) members[argmax(probs.probs.row(i))].push_back(i);

  PseudoLabelSet out;
  out.k_used = k;
  out.per_class_counts.assign(num_classes, 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& m = members[c];
    const auto by_confidence = [&](std::size_t a, std::size_t b) {
      const double pa = probs.probs(a, c);
      const double pb = probs.probs(b, c);
      if (pa != pb) return pa > pb;
      return sample_ids[a] < sample_ids[b];
    };
    const std::size_t keep = std::min(m.size(), static_cast<std::size_t>(k));
    std::partial_sort(m.begin(), m.begin() + static_cast<long>(keep), m.end(), by_confidence);
    for (std::size_t j = 0; j < keep; ++j)
      out.entries.push_back({sample_ids[m[j]], static_cast<int>(c), probs.probs(m[j], c)});
    out.per_class_counts[c] = static_cast<int>(keep);
  }
  return out;
}

namespace {

std::uint64_t entries_checksum(const std::vector<PseudoLabel>& entries) {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : entries) {
    h = fnv1a(e.sample_id, h);
    h = fnv1a_values(std::span<const int>(&e.label, 1), h);
    h = fnv1a_values(std::span<const double>(&e.confidence, 1), h);
  }
  return h;
}

}  // namespace

void save_pseudo_labels(const PseudoLabelSet& set, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  const json header{{"format", "nola.pseudo_labels"},
                    {"version", kPseudoFormatVersion},
                    {"k_used", set.k_used},
                    {"policy", {{"fraction", set.policy.fraction}, {"floor", set.policy.floor}, {"cap", set.policy.cap}}},
                    {"count", set.entries.size()},
                    {"per_class_counts", set.per_class_counts},
                    {"checksum", std::to_string(entries_checksum(set.entries))}};
  out << header.dump() << '\n';
  for (const auto& e : set.entries)
    out << json{{"id", e.sample_id}, {"label", e.label}, {"confidence", e.confidence}}.dump() << '\n';
}

PseudoLabelSet load_pseudo_labels(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingCheckpoint, path.string());
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::CorruptFile, path.string() + ": empty");
  PseudoLabelSet set;
  std::size_t count = 0;
  std::string expected_checksum;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "nola.pseudo_labels") throw Error(ErrorCode::CorruptFile, "not a pseudo-label file");
    if (header.at("version").get<int>() != kPseudoFormatVersion)
      throw Error(ErrorCode::VersionMismatch, "pseudo-label format version " + header.at("version").dump());
    set.k_used = header.at("k_used").get<int>();
    set.policy.fraction = header.at("policy").at("fraction").get<double>();
    set.policy.floor = header.at("policy").at("floor").get<int>();
    set.policy.cap = header.at("policy").at("cap").get<int>();
    set.per_class_counts = header.at("per_class_counts").get<std::vector<int>>();
    count = header.at("count").get<std::size_t>();
    expected_checksum = header.at("checksum").get<std::string>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json e = json::parse(line);
      set.entries.push_back({e.at("id").get<std::string>(), e.at("label").get<int>(), e.at("confidence").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  if (set.entries.size() != count || std::to_string(entries_checksum(set.entries)) != expected_checksum)
    throw Error(ErrorCode::CorruptFile, path.string() + ": checksum mismatch");
  return set;
}

}  // namespace nola
