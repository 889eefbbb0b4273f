#include "dgap/pm_region.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dgap/format.hpp"

namespace dgap {

PmRegion::PmRegion(std::uint64_t capacity)
    : capacity_(capacity),
      working_(capacity, 0),
      durable_(capacity, 0),
      line_dirty_((capacity + kCacheLine - 1) / kCacheLine) {
  for (auto& f : line_dirty_) f.store(0, std::memory_order_relaxed);
}

std::unique_ptr<PmRegion> PmRegion::create(const std::string& path, std::uint64_t capacity) {
  if (capacity < fmt::kHeaderLen)
    raise(Errc::CapacityTooSmall, "region capacity below header size");
  auto r = std::unique_ptr<PmRegion>(new PmRegion(capacity));
  r->path_ = path;
  std::uint8_t magic[8];
  std::memcpy(magic, fmt::kMagic, 8);
  r->store(fmt::kOffMagic, magic);
  r->store_u64(fmt::kOffVersion, fmt::kVersion);
  r->atomic_store_8(fmt::kOffNormalShutdown, 1);
  r->flush(0, fmt::kHeaderLen);
  r->fence();
  if (!path.empty()) r->save();
  return r;
}

std::pair<std::unique_ptr<PmRegion>, bool> PmRegion::open(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::IoError, "cannot open region file: " + path);
  std::vector<std::uint8_t> image((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (image.size() < fmt::kHeaderLen) raise(Errc::BadMagic, "region file too short");
  if (std::memcmp(image.data(), fmt::kMagic, 8) != 0) raise(Errc::BadMagic, "bad region magic");
  if (load_le64(image.data() + fmt::kOffVersion) != fmt::kVersion)
    raise(Errc::VersionMismatch, "unsupported region version");
  auto r = from_image(std::move(image));
  r->path_ = path;
  bool was_normal = r->load_u64(fmt::kOffNormalShutdown) != 0;
  // Clear the flag before anything else so a crash during this session is
  // detectable on the next open.
  r->atomic_store_8(fmt::kOffNormalShutdown, 0);
  r->flush(fmt::kOffNormalShutdown, 8);
  r->fence();
  return {std::move(r), was_normal};
}

std::unique_ptr<PmRegion> PmRegion::from_image(std::vector<std::uint8_t> image) {
  auto r = std::unique_ptr<PmRegion>(new PmRegion(image.size()));
  r->working_ = image;
  r->durable_ = std::move(image);
  return r;
}

void PmRegion::bounds_check(std::uint64_t off, std::uint64_t len) const {
  if (off + len > capacity_ || off + len < off)
    raise(Errc::OutOfBounds, "region access out of bounds");
}

void PmRegion::mark_dirty(std::uint64_t off, std::uint64_t len) {
  for (std::uint64_t l = off / kCacheLine; l <= (off + len - 1) / kCacheLine; ++l)
    line_dirty_[l].store(1, std::memory_order_release);
}

std::uint64_t PmRegion::bump_event(RegionEvent ev) {
  std::uint64_t n = events_.fetch_add(1, std::memory_order_relaxed) + 1;
  if (log_enabled_) {
    std::lock_guard<std::mutex> g(mu_);
    log_.push_back(std::move(ev));
  }
  if (armed_ && armed_plan_.mode == CrashPlan::Mode::AtEvent && n >= armed_plan_.at_event) {
    std::lock_guard<std::mutex> g(mu_);
    if (armed_) {
      armed_ = false;
      crash_now(armed_plan_.torn_writes, armed_plan_.seed);
      throw CrashInjected{};
    }
  }
  return n;
}

void PmRegion::store(std::uint64_t off, std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return;
  bounds_check(off, bytes.size());
  std::memcpy(working_.data() + off, bytes.data(), bytes.size());
  mark_dirty(off, bytes.size());
  payload_.fetch_add(bytes.size(), std::memory_order_relaxed);
  stores_.fetch_add(1, std::memory_order_relaxed);
  bump_event({RegionEvent::Kind::Store, off, bytes.size(),
              std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
}

void PmRegion::store_u32(std::uint64_t off, std::uint32_t v) {
  std::uint8_t b[4];
  store_le32(b, v);
  store(off, b);
}

void PmRegion::store_u64(std::uint64_t off, std::uint64_t v) {
  std::uint8_t b[8];
  store_le64(b, v);
  store(off, b);
}

void PmRegion::atomic_store_8(std::uint64_t off, std::uint64_t word) {
  if (off % 8 != 0) raise(Errc::Misaligned, "atomic_store_8 requires 8-byte alignment");
  bounds_check(off, 8);
  std::uint8_t b[8];
  store_le64(b, word);
  std::memcpy(working_.data() + off, b, 8);
  mark_dirty(off, 8);
  payload_.fetch_add(8, std::memory_order_relaxed);
  stores_.fetch_add(1, std::memory_order_relaxed);
  bump_event({RegionEvent::Kind::AtomicStore, off, 8, std::vector<std::uint8_t>(b, b + 8)});
}

void PmRegion::flush(std::uint64_t off, std::uint64_t len) {
  if (len == 0) return;
  bounds_check(off, len);
  flushes_.fetch_add(1, std::memory_order_relaxed);
  if (!eadr_) {
    std::lock_guard<std::mutex> g(mu_);
    std::uint64_t prev_bucket = ~0ull;
    for (std::uint64_t l = off / kCacheLine; l <= (off + len - 1) / kCacheLine; ++l) {
      std::uint8_t was = line_dirty_[l].exchange(0, std::memory_order_acq_rel);
      if (!was) continue;  // clean line: nothing written back
      auto& snap = pending_[l];
      std::memcpy(snap.data(), working_.data() + l * kCacheLine, kCacheLine);
      media_.fetch_add(kCacheLine, std::memory_order_relaxed);
      std::uint64_t bucket = l / 4;
      if (bucket != prev_bucket) {
        media256_.fetch_add(256, std::memory_order_relaxed);
        prev_bucket = bucket;
      }
    }
  }
  bump_event({RegionEvent::Kind::Flush, off, len, {}});
}

void PmRegion::fence() {
  fences_.fetch_add(1, std::memory_order_relaxed);
  {
    std::lock_guard<std::mutex> g(mu_);
    if (eadr_) {
      // eADR: caches are in the persistence domain, a fence drains everything.
      for (std::uint64_t l = 0; l < line_dirty_.size(); ++l) {
        if (line_dirty_[l].exchange(0, std::memory_order_acq_rel)) {
          std::uint64_t n = std::min<std::uint64_t>(kCacheLine, capacity_ - l * kCacheLine);
          std::memcpy(durable_.data() + l * kCacheLine, working_.data() + l * kCacheLine, n);
          media_.fetch_add(kCacheLine, std::memory_order_relaxed);
        }
      }
    } else {
      for (auto& [line, snap] : pending_) {
        std::uint64_t n = std::min<std::uint64_t>(kCacheLine, capacity_ - line * kCacheLine);
        std::memcpy(durable_.data() + line * kCacheLine, snap.data(), n);
      }
      pending_.clear();
    }
  }
  bump_event({RegionEvent::Kind::Fence, 0, 0, {}});
}

std::uint32_t PmRegion::load_u32(std::uint64_t off) const {
  bounds_check(off, 4);
  return load_le32(working_.data() + off);
}

std::uint64_t PmRegion::load_u64(std::uint64_t off) const {
  bounds_check(off, 8);
  return load_le64(working_.data() + off);
}

void PmRegion::read(std::uint64_t off, std::span<std::uint8_t> out) const {
  bounds_check(off, out.size());
  std::memcpy(out.data(), working_.data() + off, out.size());
}

void PmRegion::resolve_pending_line(std::uint8_t* dst_old, const std::uint8_t* snap,
                                    UnfencedMode mode, bool torn, std::uint64_t seed,
                                    std::uint64_t crash_event, std::uint64_t line_index) {
  if (torn) {
    // A seeded, word-independent subset of the line's 8-byte words persists.
    // Tearing never splits a word, so 8-byte atomic stores stay whole.
    for (int w = 0; w < 8; ++w) {
      std::uint64_t h = mix64(seed ^ mix64(crash_event ^ mix64(line_index * 8 + w)));
      if (h & 1) std::memcpy(dst_old + w * 8, snap + w * 8, 8);
    }
  } else if (mode == UnfencedMode::Permissive) {
    std::memcpy(dst_old, snap, kCacheLine);
  }
  // Strict: the unfenced line is dropped; dst_old already holds the old bytes.
}

void PmRegion::crash_now(bool torn, std::uint64_t seed) {
  // Caller holds mu_ (or is single-threaded via crash()).
  std::uint64_t ev = events_.load(std::memory_order_relaxed);
  if (eadr_) {
    durable_ = working_;
  } else {
    for (auto& [line, snap] : pending_) {
      std::uint64_t n = std::min<std::uint64_t>(kCacheLine, capacity_ - line * kCacheLine);
      if (n == kCacheLine) {
        resolve_pending_line(durable_.data() + line * kCacheLine, snap.data(), unfenced_, torn,
                             seed, ev, line);
      } else {
        // partial trailing line: treat as strict
      }
    }
  }
  pending_.clear();
  for (auto& f : line_dirty_) f.store(0, std::memory_order_relaxed);
  crashed_ = true;
}

void PmRegion::crash(const CrashPlan& plan) {
  std::lock_guard<std::mutex> g(mu_);
  if (plan.mode == CrashPlan::Mode::AtEvent &&
      plan.at_event > events_.load(std::memory_order_relaxed)) {
    armed_ = true;
    armed_plan_ = plan;
    return;
  }
  crash_now(plan.torn_writes, plan.seed);
}

void PmRegion::reopen() {
  std::lock_guard<std::mutex> g(mu_);
  working_ = durable_;
  pending_.clear();
  for (auto& f : line_dirty_) f.store(0, std::memory_order_relaxed);
  events_.store(0, std::memory_order_relaxed);
  armed_ = false;
  crashed_ = false;
}

void PmRegion::enable_event_log(bool on) {
  std::lock_guard<std::mutex> g(mu_);
  log_enabled_ = on;
  if (!on) log_.clear();
}

WriteStats PmRegion::stats() const {
  WriteStats s;
  s.payload_bytes = payload_.load(std::memory_order_relaxed);
  s.media_bytes = media_.load(std::memory_order_relaxed);
  s.media_bytes_256 = media256_.load(std::memory_order_relaxed);
  s.flush_count = flushes_.load(std::memory_order_relaxed);
  s.fence_count = fences_.load(std::memory_order_relaxed);
  s.store_count = stores_.load(std::memory_order_relaxed);
  return s;
}

void PmRegion::reset_stats() {
  payload_.store(0, std::memory_order_relaxed);
  media_.store(0, std::memory_order_relaxed);
  media256_.store(0, std::memory_order_relaxed);
  flushes_.store(0, std::memory_order_relaxed);
  fences_.store(0, std::memory_order_relaxed);
  stores_.store(0, std::memory_order_relaxed);
}

void PmRegion::save() const {
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoError, "cannot write region file: " + path_);
  out.write(reinterpret_cast<const char*>(durable_.data()),
            static_cast<std::streamsize>(durable_.size()));
  if (!out) raise(Errc::IoError, "short write to region file: " + path_);
}

}  // namespace dgap
