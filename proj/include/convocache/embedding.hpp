#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convocache/errors.hpp"
#include "convocache/types.hpp"

namespace convocache {

/// Stored/queried embeddings are single precision; aggregation runs in double.
using Embedding = Eigen::VectorXf;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
  return v.allFinite();
}

/// L2-normalized copy. Throws InvalidArgument for a zero or non-finite vector.
template <typename Derived>
Vector<typename Derived::Scalar> normalized(const Eigen::MatrixBase<Derived>& v) {
  const auto norm = v.norm();
  if (!(norm > 0) || !std::isfinite(static_cast<double>(norm)))
    throw InvalidArgument("cannot normalize a zero or non-finite vector");
  return v / norm;
}

template <typename DerivedA, typename DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine_similarity: length mismatch");
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
}

template <typename Derived>
bool is_unit_norm(const Eigen::MatrixBase<Derived>& v, double tol = 1e-6) {
  return std::abs(v.template cast<double>().norm() - 1.0) <= tol;
}

/// Exponential-decay weights w_i = exp(-lambda*i) / sum_j exp(-lambda*j), i = 1..n.
/// Element 0 of the result is i = 1, the LAST utterance of a history.
///
/// Evaluated relative to i = 1 so that large lambda*n underflows towards zero
/// weights instead of producing 0/0.
template <typename Scalar = double>
Vector<Scalar> decay_weights(std::size_t n, Scalar lambda) {
  if (n == 0) throw InvalidArgument("decay_weights: n must be >= 1");
  if (!(lambda >= Scalar(0)) || !std::isfinite(static_cast<double>(lambda)))
    throw InvalidArgument("decay_weights: lambda must be finite and >= 0");
  Vector<Scalar> w(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = std::exp(-lambda * Scalar(i));
  w /= w.sum();
  return w;
}

struct EncoderDescriptor {
  std::string id;
  std::size_t dim = 0;

  EncoderDescriptor(std::string id_, std::size_t dim_);
};

/// Sentence encoder. Implementations report whether `encode_batch` may be
/// called from several threads at once; callers serialize otherwise.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual const EncoderDescriptor& descriptor() const noexcept = 0;
  virtual std::vector<Embedding> encode_batch(std::span<const std::string> texts) = 0;
  virtual bool thread_safe() const noexcept { return false; }

  std::size_t dim() const noexcept { return descriptor().dim; }
  const std::string& id() const noexcept { return descriptor().id; }
};

/// Encodes one utterance and checks the encoder's output contract
/// (declared dimension, finite components).
Embedding encode(const Utterance& utterance, Encoder& encoder);

/// Encodes every utterance of a history, in order, in one batch call.
std::vector<Embedding> encode_all(const DialogueHistory& history, Encoder& encoder);

/// Decay-weighted sum of per-utterance embeddings (given oldest first), L2-normalized.
Embedding combine(std::span<const Embedding> utterance_embeddings, double lambda);

/// Conversation embedding of a history: normalize(sum_i w_i * e_i), w_1 on the last utterance.
Embedding aggregate(const DialogueHistory& history, double lambda, Encoder& encoder);

/// Hermetic bag-of-hashed-tokens encoder. Lowercased whitespace tokens are
/// hashed with a seed into a bucket and a sign; counts accumulate and the
/// result is L2-normalized.
class ReferenceEncoder final : public Encoder {
 public:
  ReferenceEncoder(std::size_t dim, std::uint64_t seed);

  const EncoderDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<Embedding> encode_batch(std::span<const std::string> texts) override;
  bool thread_safe() const noexcept override { return true; }

  std::uint64_t seed() const noexcept { return seed_; }

  /// Id format: "reference-hash:dim=<dim>:seed=<seed>".
  static std::string make_id(std::size_t dim, std::uint64_t seed);
  /// Rebuilds an encoder from an id produced by make_id. Throws InvalidArgument otherwise.
  static std::unique_ptr<ReferenceEncoder> from_id(std::string_view id);

 private:
  EncoderDescriptor descriptor_;
  std::uint64_t seed_;
};

Embedding reference_encode(const Utterance& utterance, std::size_t dim, std::uint64_t seed);

/// Wraps another encoder and memoizes per-utterance results by exact text.
/// Shared prefixes of successive turns are then encoded once.
class MemoizingEncoder final : public Encoder {
 public:
  explicit MemoizingEncoder(std::shared_ptr<Encoder> inner, std::size_t max_entries = 1 << 16);

  const EncoderDescriptor& descriptor() const noexcept override { return inner_->descriptor(); }
  std::vector<Embedding> encode_batch(std::span<const std::string> texts) override;
  bool thread_safe() const noexcept override { return true; }

  std::size_t cached() const;
  std::size_t inner_calls() const;

 private:
  std::shared_ptr<Encoder> inner_;
  std::size_t max_entries_;
  mutable std::mutex mutex_;
  std::mutex inner_mutex_;
  std::unordered_map<std::string, Embedding> cache_;
  std::size_t inner_calls_ = 0;
};

}  // namespace convocache
