#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgap/common.hpp"

namespace dgap {

// Counters kept by the emulated region. payload_bytes counts bytes passed to
// store()/atomic_store_8(); media_bytes counts whole cache lines written back
// to the durable image (what an actual device would see). media_bytes_256
// additionally buckets write-backs at the device's internal 256-byte buffer
// granularity.
struct WriteStats {
  std::uint64_t payload_bytes = 0;
  std::uint64_t media_bytes = 0;
  std::uint64_t media_bytes_256 = 0;
  std::uint64_t flush_count = 0;
  std::uint64_t fence_count = 0;
  std::uint64_t store_count = 0;

  double write_amplification() const {
    return payload_bytes ? double(media_bytes) / double(payload_bytes) : 0.0;
  }
};

struct CrashPlan {
  enum class Mode { AtEvent, Random, Exhaustive };
  Mode mode = Mode::AtEvent;
  std::uint64_t at_event = 0;  // AtEvent: crash once the event counter reaches this
  std::uint64_t seed = 0;      // drives torn-word selection; Random point choice
  std::uint64_t count = 1;     // Random: number of crash points a driver should sample
  bool torn_writes = false;
};

// What an unfenced-but-flushed line does at a crash. Strict drops it,
// Permissive persists it whole. Torn writes (CrashPlan) override either by
// persisting a seeded subset of the line's 8-byte words.
enum class UnfencedMode { Strict, Permissive };

struct RegionEvent {
  enum class Kind : std::uint8_t { Store, AtomicStore, Flush, Fence };
  Kind kind;
  std::uint64_t off = 0;
  std::uint64_t len = 0;
  std::vector<std::uint8_t> bytes;  // Store/AtomicStore payload
};

class CrashInjected : public std::exception {
 public:
  const char* what() const noexcept override { return "injected crash"; }
};

// Byte-addressable persistent-memory emulation: a volatile working image in
// front of a durable image, with explicit flush/fence, 8-byte failure
// atomicity, and deterministic crash injection. File persistence of the
// durable image is on-demand (save()); it is not part of the crash model.
class PmRegion {
 public:
  static std::unique_ptr<PmRegion> create(const std::string& path, std::uint64_t capacity);
  // Returns the region and the durable NORMAL_SHUTDOWN value; the flag is set
  // false and made durable before this returns.
  static std::pair<std::unique_ptr<PmRegion>, bool> open(const std::string& path);

  std::uint64_t capacity() const { return capacity_; }

  // --- store / persist primitives -----------------------------------------
  void store(std::uint64_t off, std::span<const std::uint8_t> bytes);
  void store_u32(std::uint64_t off, std::uint32_t v);
  void store_u64(std::uint64_t off, std::uint64_t v);
  void atomic_store_8(std::uint64_t off, std::uint64_t word);
  void flush(std::uint64_t off, std::uint64_t len);
  void fence();

  // Reads always come from the working image.
  const std::uint8_t* working(std::uint64_t off = 0) const { return working_.data() + off; }
  std::uint32_t load_u32(std::uint64_t off) const;
  std::uint64_t load_u64(std::uint64_t off) const;
  void read(std::uint64_t off, std::span<std::uint8_t> out) const;
  const std::vector<std::uint8_t>& durable_image() const { return durable_; }

  // --- crash machinery ------------------------------------------------------
  // AtEvent plans with a future event index arm the region: the matching
  // store/flush/fence throws CrashInjected. Anything else crashes immediately.
  void crash(const CrashPlan& plan);
  // Discard the working image and restart from the (crash-resolved) durable one.
  void reopen();

  void set_unfenced_mode(UnfencedMode m) { unfenced_ = m; }
  UnfencedMode unfenced_mode() const { return unfenced_; }
  void set_eadr(bool on) { eadr_ = on; }
  bool eadr() const { return eadr_; }

  std::uint64_t event_count() const { return events_.load(std::memory_order_relaxed); }

  void enable_event_log(bool on);
  const std::vector<RegionEvent>& event_log() const { return log_; }

  WriteStats stats() const;
  void reset_stats();

  // Persist the durable image to the backing file (no-op for anonymous regions).
  void save() const;
  const std::string& path() const { return path_; }

  // Build a region directly from an externally computed durable image
  // (crash-suite replay). Header validation is the caller's business.
  static std::unique_ptr<PmRegion> from_image(std::vector<std::uint8_t> image);

  // Resolves one pending (flushed, unfenced) line for a crash: returns the
  // surviving bytes given old durable content and the flush snapshot.
  static void resolve_pending_line(std::uint8_t* dst_old, const std::uint8_t* snap,
                                   UnfencedMode mode, bool torn, std::uint64_t seed,
                                   std::uint64_t crash_event, std::uint64_t line_index);

  PmRegion(const PmRegion&) = delete;
  PmRegion& operator=(const PmRegion&) = delete;

 private:
  explicit PmRegion(std::uint64_t capacity);
  void bounds_check(std::uint64_t off, std::uint64_t len) const;
  void mark_dirty(std::uint64_t off, std::uint64_t len);
  std::uint64_t bump_event(RegionEvent ev);
  void crash_now(bool torn, std::uint64_t seed);

  std::string path_;
  std::uint64_t capacity_ = 0;
  std::vector<std::uint8_t> working_;
  std::vector<std::uint8_t> durable_;
  std::vector<std::atomic<std::uint8_t>> line_dirty_;

  mutable std::mutex mu_;  // pending map, event log, crash state
  std::unordered_map<std::uint64_t, std::array<std::uint8_t, kCacheLine>> pending_;

  std::atomic<std::uint64_t> events_{0};
  std::atomic<std::uint64_t> payload_{0};
  std::atomic<std::uint64_t> media_{0};
  std::atomic<std::uint64_t> media256_{0};
  std::atomic<std::uint64_t> flushes_{0};
  std::atomic<std::uint64_t> fences_{0};
  std::atomic<std::uint64_t> stores_{0};

  UnfencedMode unfenced_ = UnfencedMode::Strict;
  bool eadr_ = false;

  bool log_enabled_ = false;
  std::vector<RegionEvent> log_;

  bool armed_ = false;
  CrashPlan armed_plan_;
  bool crashed_ = false;
};

}  // namespace dgap
