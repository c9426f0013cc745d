#include "convocache/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace convocache {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::vector<std::string> lowercase_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Embedding hashed_bag(std::string_view text, std::size_t dim, std::uint64_t seed) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& token : lowercase_tokens(text)) {
    const std::uint64_t h = splitmix64(fnv1a64(token) ^ splitmix64(seed));
    const auto bucket = static_cast<Eigen::Index>(h % dim);
    acc[bucket] += (h >> 63) ? -1.0 : 1.0;
  }
  if (acc.squaredNorm() == 0.0) {
    // Tokens cancelled out exactly; fall back to one bucket keyed by the whole text.
    const std::uint64_t h = splitmix64(fnv1a64(text) ^ splitmix64(~seed));
    acc[static_cast<Eigen::Index>(h % dim)] = 1.0;
  }
  return (acc / acc.norm()).cast<float>();
}

}  // namespace

EncoderDescriptor::EncoderDescriptor(std::string id_, std::size_t dim_) : id(std::move(id_)), dim(dim_) {
  if (id.empty()) throw InvalidArgument("encoder id must be non-empty");
  if (dim == 0) throw InvalidArgument("encoder dim must be > 0");
}

Embedding encode(const Utterance& utterance, Encoder& encoder) {
  const std::string text = utterance.text();
  auto out = encoder.encode_batch(std::span<const std::string>(&text, 1));
  if (out.size() != 1) throw DimensionMismatch("encoder returned wrong number of embeddings");
  if (static_cast<std::size_t>(out.front().size()) != encoder.dim())
    throw DimensionMismatch("encoder '" + encoder.id() + "' declared dim " + std::to_string(encoder.dim()) +
                            " but returned " + std::to_string(out.front().size()) + " values");
  if (!all_finite(out.front())) throw InvalidArgument("encoder returned non-finite components");
  return std::move(out.front());
}

std::vector<Embedding> encode_all(const DialogueHistory& history, Encoder& encoder) {
  const auto texts = history.texts();
  auto out = encoder.encode_batch(texts);
  if (out.size() != texts.size()) throw DimensionMismatch("encoder returned wrong number of embeddings");
  for (const auto& e : out) {
    if (static_cast<std::size_t>(e.size()) != encoder.dim())
      throw DimensionMismatch("encoder '" + encoder.id() + "' declared dim " + std::to_string(encoder.dim()) +
                              " but returned " + std::to_string(e.size()) + " values");
    if (!all_finite(e)) throw InvalidArgument("encoder returned non-finite components");
  }
  return out;
}

Embedding combine(std::span<const Embedding> utterance_embeddings, double lambda) {
  const std::size_t n = utterance_embeddings.size();
  const Vector<double> w = decay_weights<double>(n, lambda);
  const Eigen::Index dim = utterance_embeddings.front().size();
  Eigen::VectorXd s = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = utterance_embeddings[n - 1 - i];  // i = 0 is the last utterance
    if (e.size() != dim) throw DimensionMismatch("combine: utterance embeddings differ in length");
    s.noalias() += w[static_cast<Eigen::Index>(i)] * e.cast<double>();
  }
  return normalized(s).cast<float>();
}

Embedding aggregate(const DialogueHistory& history, double lambda, Encoder& encoder) {
  const auto embeddings = encode_all(history, encoder);
  return combine(embeddings, lambda);
}

ReferenceEncoder::ReferenceEncoder(std::size_t dim, std::uint64_t seed)
    : descriptor_(make_id(dim, seed), dim), seed_(seed) {
  if (dim < 8) throw InvalidArgument("reference encoder needs dim >= 8");
}

std::vector<Embedding> ReferenceEncoder::encode_batch(std::span<const std::string> texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(hashed_bag(t, descriptor_.dim, seed_));
  return out;
}

std::string ReferenceEncoder::make_id(std::size_t dim, std::uint64_t seed) {
  std::ostringstream os;
  os << "reference-hash:dim=" << dim << ":seed=" << seed;
  return os.str();
}

std::unique_ptr<ReferenceEncoder> ReferenceEncoder::from_id(std::string_view id) {
  constexpr std::string_view prefix = "reference-hash:dim=";
  constexpr std::string_view seed_key = ":seed=";
  if (!id.starts_with(prefix)) throw InvalidArgument("not a reference encoder id: " + std::string(id));
  const auto rest = id.substr(prefix.size());
  const auto sep = rest.find(seed_key);
  if (sep == std::string_view::npos) throw InvalidArgument("malformed reference encoder id: " + std::string(id));
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  const auto dim_str = rest.substr(0, sep);
  const auto seed_str = rest.substr(sep + seed_key.size());
  auto r1 = std::from_chars(dim_str.data(), dim_str.data() + dim_str.size(), dim);
  auto r2 = std::from_chars(seed_str.data(), seed_str.data() + seed_str.size(), seed);
  if (r1.ec != std::errc{} || r1.ptr != dim_str.data() + dim_str.size() || r2.ec != std::errc{} ||
      r2.ptr != seed_str.data() + seed_str.size())
    throw InvalidArgument("malformed reference encoder id: " + std::string(id));
  return std::make_unique<ReferenceEncoder>(dim, seed);
}

Embedding reference_encode(const Utterance& utterance, std::size_t dim, std::uint64_t seed) {
  ReferenceEncoder enc(dim, seed);
  return encode(utterance, enc);
}

MemoizingEncoder::MemoizingEncoder(std::shared_ptr<Encoder> inner, std::size_t max_entries)
    : inner_(std::move(inner)), max_entries_(max_entries) {
  if (!inner_) throw InvalidArgument("MemoizingEncoder needs an inner encoder");
}

std::vector<Embedding> MemoizingEncoder::encode_batch(std::span<const std::string> texts) {
  std::vector<Embedding> out(texts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_at;
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto it = cache_.find(texts[i]); it != cache_.end()) {
        out[i] = it->second;
      } else {
        missing.push_back(texts[i]);
        missing_at.push_back(i);
      }
    }
  }
  if (missing.empty()) return out;

  std::vector<Embedding> fresh;
  if (inner_->thread_safe()) {
    fresh = inner_->encode_batch(missing);
  } else {
    std::lock_guard lock(inner_mutex_);
    fresh = inner_->encode_batch(missing);
  }
  if (fresh.size() != missing.size()) throw DimensionMismatch("encoder returned wrong number of embeddings");

  std::lock_guard lock(mutex_);
  ++inner_calls_;
  for (std::size_t j = 0; j < missing.size(); ++j) {
    out[missing_at[j]] = fresh[j];
    if (cache_.size() >= max_entries_) cache_.clear();
    cache_.emplace(missing[j], std::move(fresh[j]));
  }
  return out;
}

std::size_t MemoizingEncoder::cached() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

std::size_t MemoizingEncoder::inner_calls() const {
  std::lock_guard lock(mutex_);
  return inner_calls_;
}

}  // namespace convocache
