#include "convocache/index.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

namespace convocache {

namespace {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'V', 'C', 'H'};
constexpr std::size_t kParallelScanThreshold = 1 << 15;

std::int64_t now_unix_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return buf_; }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw FormatError("snapshot truncated");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large snapshots.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open snapshot for reading: " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading snapshot: " + path.string());
  return data;
}

CacheStore::SnapshotHeader parse_header(ByteReader& r) {
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad snapshot magic");
  CacheStore::SnapshotHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != CacheStore::kSnapshotVersion)
    throw FormatError("unsupported snapshot version " + std::to_string(h.version));
  h.dim = r.get<std::uint32_t>();
  h.count = r.get<std::uint64_t>();
  h.lambda = r.get<double>();
  h.encoder_id = r.get_string();
  if (h.dim == 0) throw FormatError("snapshot declares dim 0");
  return h;
}

}  // namespace

std::string_view to_string(EntrySource source) noexcept {
  return source == EntrySource::generated ? "generated" : "seeded";
}

CacheStore::CacheStore(StoreInfo info) : info_(std::move(info)) {
  if (info_.dim == 0) throw InvalidArgument("store dim must be > 0");
  if (!(info_.lambda >= 0.0)) throw InvalidArgument("store lambda must be >= 0");
  embeddings_.resize(static_cast<Eigen::Index>(info_.dim), 0);
}

CacheStore::CacheStore(const CacheStore& other) {
  auto lock = other.read_lock();
  info_ = other.info_;
  embeddings_ = other.embeddings_;
  meta_ = other.meta_;
  next_id_ = other.next_id_;
}

std::shared_lock<std::shared_mutex> CacheStore::read_lock() const {
  while (writers_waiting_.load(std::memory_order_acquire) > 0) std::this_thread::yield();
  return std::shared_lock(mutex_);
}

std::unique_lock<std::shared_mutex> CacheStore::write_lock() {
  writers_waiting_.fetch_add(1, std::memory_order_acq_rel);
  std::unique_lock lock(mutex_);
  writers_waiting_.fetch_sub(1, std::memory_order_acq_rel);
  return lock;
}

std::size_t CacheStore::size() const {
  auto lock = read_lock();
  return meta_.size();
}

std::vector<SearchHit> CacheStore::search(const Embedding& query, std::size_t k) const {
  if (static_cast<std::size_t>(query.size()) != info_.dim)
    throw DimensionMismatch("query has dim " + std::to_string(query.size()) + ", store has " +
                            std::to_string(info_.dim));
  auto lock = read_lock();
  const std::size_t n = meta_.size();
  if (n == 0 || k == 0) return {};

  // Accumulate in double so near-ties order the same way as a plain reference sum.
  const Eigen::VectorXd q = query.cast<double>();
  std::vector<double> scores(n);
  auto scan = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      scores[i] = embeddings_.col(static_cast<Eigen::Index>(i)).cast<double>().dot(q);
  };
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  if (n >= kParallelScanThreshold && workers > 1) {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t b = 0; b < n; b += chunk) pool.emplace_back(scan, b, std::min(n, b + chunk));
  } else {
    scan(0, n);
  }

  // Ids increase with position, so a lower position is a lower id.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t top = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });

  std::vector<SearchHit> hits;
  hits.reserve(top);
  for (std::size_t r = 0; r < top; ++r)
    hits.push_back(SearchHit{meta_[order[r]].id, scores[order[r]], r + 1});
  return hits;
}

void CacheStore::append_locked(const Embedding& unit, Meta meta) {
  const auto n = static_cast<Eigen::Index>(meta_.size());
  if (n == embeddings_.cols()) {
    const Eigen::Index capacity = std::max<Eigen::Index>(64, embeddings_.cols() * 2);
    embeddings_.conservativeResize(Eigen::NoChange, capacity);
  }
  embeddings_.col(n) = unit;
  next_id_ = meta.id + 1;
  meta_.push_back(std::move(meta));
}

std::uint64_t CacheStore::append(CacheEntry entry) {
  if (static_cast<std::size_t>(entry.embedding.size()) != info_.dim)
    throw DimensionMismatch("entry has dim " + std::to_string(entry.embedding.size()) + ", store has " +
                            std::to_string(info_.dim));
  if (!all_finite(entry.embedding) || !is_unit_norm(entry.embedding))
    throw InvalidArgument("cache entry embedding must be finite and unit-norm");
  if (entry.created_at == 0) entry.created_at = now_unix_seconds();

  auto lock = write_lock();
  const std::uint64_t id = next_id_;
  append_locked(entry.embedding, Meta{id, std::move(entry.response_text), std::move(entry.audio_ref),
                                      entry.source, entry.created_at});
  return id;
}

std::uint64_t CacheStore::append(const Embedding& embedding, std::string response_text, EntrySource source,
                                 std::optional<std::string> audio_ref) {
  CacheEntry e;
  e.embedding = embedding;
  e.response_text = std::move(response_text);
  e.audio_ref = std::move(audio_ref);
  e.source = source;
  return append(std::move(e));
}

std::size_t CacheStore::entry_index(std::uint64_t id) const {
  auto it = std::lower_bound(meta_.begin(), meta_.end(), id,
                             [](const Meta& m, std::uint64_t v) { return m.id < v; });
  if (it == meta_.end() || it->id != id) throw InvalidArgument("unknown cache entry id " + std::to_string(id));
  return static_cast<std::size_t>(it - meta_.begin());
}

CacheEntry CacheStore::entry(std::uint64_t id) const {
  auto lock = read_lock();
  const auto i = entry_index(id);
  const auto& m = meta_[i];
  return CacheEntry{m.id, embeddings_.col(static_cast<Eigen::Index>(i)), m.response_text, m.audio_ref,
                    m.source, m.created_at};
}

std::string CacheStore::response_text(std::uint64_t id) const {
  auto lock = read_lock();
  return meta_[entry_index(id)].response_text;
}

std::vector<CacheEntry> CacheStore::entries() const {
  auto lock = read_lock();
  std::vector<CacheEntry> out;
  out.reserve(meta_.size());
  for (std::size_t i = 0; i < meta_.size(); ++i) {
    const auto& m = meta_[i];
    out.push_back(CacheEntry{m.id, embeddings_.col(static_cast<Eigen::Index>(i)), m.response_text, m.audio_ref,
                             m.source, m.created_at});
  }
  return out;
}

void CacheStore::save_snapshot(const std::filesystem::path& path) const {
  ByteWriter w;
  {
    auto lock = read_lock();
    w.put_bytes(kMagic, 4);
    w.put<std::uint32_t>(kSnapshotVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(info_.dim));
    w.put<std::uint64_t>(meta_.size());
    w.put<double>(info_.lambda);
    w.put_string(info_.encoder_id);
    for (std::size_t i = 0; i < meta_.size(); ++i) {
      const auto& m = meta_[i];
      w.put<std::uint64_t>(m.id);
      w.put_bytes(embeddings_.col(static_cast<Eigen::Index>(i)).data(), info_.dim * sizeof(float));
      w.put_string(m.response_text);
      w.put_string(m.audio_ref.value_or(std::string{}));
      w.put<std::uint8_t>(static_cast<std::uint8_t>(m.source));
      w.put<std::int64_t>(m.created_at);
    }
  }
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.bytes().size());
  w.put<std::uint32_t>(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open snapshot for writing: " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing snapshot: " + path.string());
}

CacheStore CacheStore::load_snapshot(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  const auto data = read_file(path);
  if (data.size() < 4 + sizeof(std::uint32_t)) throw FormatError("snapshot truncated");

  ByteReader r(data.data(), data.size() - sizeof(std::uint32_t));
  const auto header = parse_header(r);
  if (expected_dim && *expected_dim != header.dim)
    throw DimensionMismatch("snapshot has dim " + std::to_string(header.dim) + ", expected " +
                            std::to_string(*expected_dim));

  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, data.data() + data.size() - sizeof(std::uint32_t), sizeof(stored_crc));
  if (crc32_of(data.data(), data.size() - sizeof(std::uint32_t)) != stored_crc)
    throw FormatError("snapshot checksum mismatch");

  CacheStore store(StoreInfo{header.dim, header.lambda, header.encoder_id});
  store.embeddings_.resize(static_cast<Eigen::Index>(header.dim),
                           static_cast<Eigen::Index>(std::max<std::uint64_t>(header.count, 1)));
  store.meta_.reserve(header.count);
  Embedding v(static_cast<Eigen::Index>(header.dim));
  for (std::uint64_t i = 0; i < header.count; ++i) {
    Meta m;
    m.id = r.get<std::uint64_t>();
    if (!store.meta_.empty() && m.id <= store.meta_.back().id) throw FormatError("snapshot ids not increasing");
    r.get_bytes(v.data(), header.dim * sizeof(float));
    m.response_text = r.get_string();
    auto audio = r.get_string();
    if (!audio.empty()) m.audio_ref = std::move(audio);
    const auto source = r.get<std::uint8_t>();
    if (source > 1) throw FormatError("snapshot entry has unknown source tag");
    m.source = static_cast<EntrySource>(source);
    m.created_at = r.get<std::int64_t>();
    store.append_locked(v, std::move(m));
  }
  if (r.pos() != data.size() - sizeof(std::uint32_t)) throw FormatError("trailing bytes in snapshot");
  return store;
}

CacheStore::SnapshotHeader CacheStore::read_snapshot_header(const std::filesystem::path& path) {
  const auto data = read_file(path);
  ByteReader r(data.data(), data.size());
  return parse_header(r);
}

}  // namespace convocache
