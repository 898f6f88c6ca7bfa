#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace nola::oracle {

long long topk_budget(long long n_train, long long n_classes) {
  return std::clamp(n_train / (5 * n_classes), 16LL, 512LL);
}

double plain_cross_entropy(const Matrix& logits, std::span<const int> targets) {
  long double total = 0.0L;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    long double mx = logits(b, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max<long double>(mx, logits(b, c));
    long double z = 0.0L;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(static_cast<long double>(logits(b, c)) - mx);
    total += -(static_cast<long double>(logits(b, static_cast<std::size_t>(targets[b]))) - mx - std::log(z));
  }
  return static_cast<double>(total / static_cast<long double>(logits.rows()));
}

std::vector<Selection> brute_force_topk(const Matrix& probs, const std::vector<std::string>& ids, int k) {
  const std::size_t classes = probs.cols();
  std::vector<std::vector<Selection>> buckets(classes);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    buckets[best].push_back({ids[i], static_cast<int>(best), probs(i, best)});
  }
  std::vector<Selection> out;
  for (auto& bucket : buckets) {
    std::sort(bucket.begin(), bucket.end(), [](const Selection& a, const Selection& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      return a.id < b.id;
    });
    const std::size_t keep = std::min<std::size_t>(bucket.size(), static_cast<std::size_t>(k));
    out.insert(out.end(), bucket.begin(), bucket.begin() + static_cast<long>(keep));
  }
  return out;
}

Matrix class_description_matrix(const DescriptionSet& set, const TextEncoder& text) {
  Matrix out(set.class_names.size(), text.output_dim());
  for (std::size_t c = 0; c < set.class_names.size(); ++c) {
    std::vector<double> sum(text.output_dim(), 0.0);
    const auto& descs = set.descriptions(c);
    for (const auto& d : descs) {
      const std::vector<std::string> one{d};
      const EmbeddingBatch e = text.encode(one);
      double n = 0.0;
      for (double v : e.vectors.row(0)) n += v * v;
      n = std::sqrt(n);
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += e.vectors(0, k) / n;
    }
    double n = 0.0;
    for (double& v : sum) {
      v /= static_cast<double>(descs.size());
      n += v * v;
    }
    n = std::sqrt(n);
    for (std::size_t k = 0; k < sum.size(); ++k) out(c, k) = sum[k] / n;
  }
  return out;
}

std::size_t hashed_bucket(const std::string& token, std::uint64_t hash_seed, std::size_t buckets) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ hash_seed;
  for (unsigned char ch : token) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h % buckets);
}

std::vector<double> toy_text_embedding(const ToyTextEncoder& encoder, const std::string& text) {
  const Matrix& w = encoder.projection();
  const std::size_t buckets = w.cols() - 1;
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text + " ") {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  std::vector<double> v(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) v[r] = w(r, buckets);
  for (const auto& t : tokens) {
    const std::size_t col = hashed_bucket(t, encoder.hash_seed(), buckets);
    for (std::size_t r = 0; r < w.rows(); ++r) v[r] += w(r, col);
  }
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> toy_vision_forward(const ToyVisionEncoder& encoder, std::span<const float> image,
                                       const Matrix& prompts) {
  const std::size_t s = encoder.input_size(), p = encoder.patch_size(), d = encoder.width();
  const std::size_t side = s / p;
  const Matrix& we = encoder.parameter("patch_embed.weight");
  const Matrix& be = encoder.parameter("patch_embed.bias");
  const Matrix& pos = encoder.parameter("pos_embed");
  const Matrix& cls = encoder.parameter("cls_token");
  const Matrix& q = encoder.parameter("attn.query");
  const Matrix& wv = encoder.parameter("attn.value");
  const Matrix& wp = encoder.parameter("proj.weight");
  const Matrix& bp = encoder.parameter("proj.bias");

  std::vector<std::vector<double>> seq;
  seq.emplace_back(cls.row(0).begin(), cls.row(0).end());
  for (std::size_t j = 0; j < prompts.rows(); ++j) seq.emplace_back(prompts.row(j).begin(), prompts.row(j).end());
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px) {
      std::vector<double> patch;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = image[((py * p + y) * s + px * p + x) * 3 + c];
            patch.push_back((v - ToyVisionEncoder::kPixelMean[c]) / ToyVisionEncoder::kPixelStd[c]);
          }
      std::vector<double> tok(d);
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < patch.size(); ++k) acc += we(r, k) * patch[k];
        tok[r] = acc + be(0, r) + pos(py * side + px, r);
      }
      seq.push_back(tok);
    }

  std::vector<double> score(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t k = 0; k < d; ++k) score[t] += seq[t][k] * q(0, k);
  const double mx = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  for (double& v : score) z += (v = std::exp(v - mx));
  std::vector<double> pooled(d, 0.0);
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t k = 0; k < d; ++k) pooled[k] += score[t] / z * seq[t][k];

  std::vector<double> out(d);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = cls(0, r);
    for (std::size_t k = 0; k < d; ++k) acc += wv(r, k) * pooled[k];
    out[r] = acc;
  }
  std::vector<double> feat(wp.rows());
  double n = 0.0;
  for (std::size_t r = 0; r < wp.rows(); ++r) {
    double acc = bp(0, r);
    for (std::size_t k = 0; k < d; ++k) acc += wp(r, k) * out[k];
    feat[r] = acc;
    n += acc * acc;
  }
  n = std::sqrt(n);
  for (double& v : feat) v /= n;
  return feat;
}

double fisher(const Matrix& features, std::span<const int> labels, std::size_t num_classes) {
  const std::size_t d = features.cols(), n = features.rows();
  std::vector<std::vector<double>> mean(num_classes, std::vector<double>(d, 0.0));
  std::vector<double> count(num_classes, 0.0), all(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    count[labels[i]] += 1;
    for (std::size_t k = 0; k < d; ++k) {
      mean[labels[i]][k] += features(i, k);
      all[k] += features(i, k) / static_cast<double>(n);
    }
  }
  double sb = 0.0, sw = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < d; ++k) {
      if (count[c] > 0) mean[c][k] /= count[c];
      sb += count[c] * (mean[c][k] - all[k]) * (mean[c][k] - all[k]);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) sw += std::pow(features(i, k) - mean[labels[i]][k], 2);
  return sb / sw;
}

double relative_error(const Matrix& a, const Matrix& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += std::pow(a.values()[i] - b.values()[i], 2);
    na += a.values()[i] * a.values()[i];
    nb += b.values()[i] * b.values()[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace nola::oracle
