#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "convocache/embedding.hpp"

namespace convocache {

enum class EntrySource : std::uint8_t { seeded = 0, generated = 1 };

std::string_view to_string(EntrySource source) noexcept;

struct CacheEntry {
  std::uint64_t id = 0;
  Embedding embedding;
  std::string response_text;
  std::optional<std::string> audio_ref;
  EntrySource source = EntrySource::seeded;
  std::int64_t created_at = 0;  // unix seconds
};

struct SearchHit {
  std::uint64_t entry_id = 0;
  double similarity = 0.0;
  std::size_t rank = 0;  // 1-based
};

/// Header fields of a store, persisted in the snapshot.
struct StoreInfo {
  std::size_t dim = 0;
  double lambda = 0.5;
  std::string encoder_id;
};

/// Append-only exact inner-product store. Embeddings are kept unit-norm,
/// column-wise in a dim x capacity float matrix.
///
/// Readers take a shared lock, `append` an exclusive one, so a search always
/// sees a consistent prefix of the store. New readers hold back while an
/// append is waiting, so a steady stream of searches cannot starve writers.
class CacheStore {
 public:
  explicit CacheStore(StoreInfo info);
  CacheStore(std::size_t dim, double lambda, std::string encoder_id)
      : CacheStore(StoreInfo{dim, lambda, std::move(encoder_id)}) {}

  CacheStore(const CacheStore& other);
  CacheStore& operator=(const CacheStore&) = delete;

  const StoreInfo& info() const noexcept { return info_; }
  std::size_t dim() const noexcept { return info_.dim; }
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  /// Top-k by inner product, exhaustive scan, ties to the lower id.
  /// Returns min(k, size()) hits.
  std::vector<SearchHit> search(const Embedding& query, std::size_t k) const;

  /// Appends and returns the assigned id. The entry's id field is ignored;
  /// ids are assigned sequentially and never reused. A created_at of 0 is
  /// replaced by the current time.
  std::uint64_t append(CacheEntry entry);

  /// Convenience for the common case.
  std::uint64_t append(const Embedding& embedding, std::string response_text, EntrySource source,
                       std::optional<std::string> audio_ref = std::nullopt);

  CacheEntry entry(std::uint64_t id) const;
  std::string response_text(std::uint64_t id) const;
  std::vector<CacheEntry> entries() const;

  void save_snapshot(const std::filesystem::path& path) const;
  /// Throws IoError, FormatError (bad magic / version / checksum / truncation),
  /// DimensionMismatch when `expected_dim` is given and differs from the file.
  static CacheStore load_snapshot(const std::filesystem::path& path,
                                  std::optional<std::size_t> expected_dim = std::nullopt);

  /// Header only, for inspection tools. Does not verify the checksum.
  struct SnapshotHeader {
    std::uint32_t version = 0;
    std::size_t dim = 0;
    std::uint64_t count = 0;
    double lambda = 0.0;
    std::string encoder_id;
  };
  static SnapshotHeader read_snapshot_header(const std::filesystem::path& path);

  static constexpr std::uint32_t kSnapshotVersion = 1;

 private:
  struct Meta {
    std::uint64_t id;
    std::string response_text;
    std::optional<std::string> audio_ref;
    EntrySource source;
    std::int64_t created_at;
  };

  void append_locked(const Embedding& unit, Meta meta);
  std::size_t entry_index(std::uint64_t id) const;
  std::shared_lock<std::shared_mutex> read_lock() const;
  std::unique_lock<std::shared_mutex> write_lock();

  StoreInfo info_;
  mutable std::shared_mutex mutex_;
  std::atomic<int> writers_waiting_{0};
  Eigen::MatrixXf embeddings_;  // dim x capacity
  std::vector<Meta> meta_;
  std::uint64_t next_id_ = 0;
};

}  // namespace convocache
