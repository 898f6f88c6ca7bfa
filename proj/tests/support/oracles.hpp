#pragma once

#include <span>
#include <string>
#include <vector>

#include "nola/descriptions.hpp"
#include "nola/encoders.hpp"
#include "nola/tensor.hpp"

// Straightforward reference computations, written independently of the
// library code they check.
namespace nola::oracle {

/// clamp(floor(n / (5 C)), 16, 512) in integer arithmetic.
long long topk_budget(long long n_train, long long n_classes);

/// Mean of -log softmax(logits)[target], long double accumulation.
double plain_cross_entropy(const Matrix& logits, std::span<const int> targets);

struct Selection {
  std::string id;
  int label = 0;
  double confidence = 0.0;
};

/// Per class: members by argmax (lowest index on ties), sorted by probability
/// descending then id ascending, first k kept. Classes in index order.
std::vector<Selection> brute_force_topk(const Matrix& probs, const std::vector<std::string>& ids, int k);

/// normalize(mean_i normalize(encode(desc_i))) per class, one text at a time.
Matrix class_description_matrix(const DescriptionSet& set, const TextEncoder& text);

/// FNV-1a over the token bytes, seeded with offset ^ hash_seed.
std::size_t hashed_bucket(const std::string& token, std::uint64_t hash_seed, std::size_t buckets);

/// Bag-of-words embedding recomputed from the projection matrix.
std::vector<double> toy_text_embedding(const ToyTextEncoder& encoder, const std::string& text);

/// Toy vision forward pass with explicit loops over one image.
std::vector<double> toy_vision_forward(const ToyVisionEncoder& encoder, std::span<const float> image,
                                       const Matrix& prompts);

/// trace(S_b) / trace(S_w) with per-class means.
double fisher(const Matrix& features, std::span<const int> labels, std::size_t num_classes);

/// ||a - b|| / max(||a||, ||b||, 1e-12) over all entries.
double relative_error(const Matrix& a, const Matrix& b);

/// Central differences of f with respect to every entry of x.
template <typename F>
Matrix numeric_gradient(F&& f, Matrix& x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.values()[i];
    x.values()[i] = keep + h;
    const double up = f();
    x.values()[i] = keep - h;
    const double down = f();
    x.values()[i] = keep;
    g.values()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace nola::oracle
