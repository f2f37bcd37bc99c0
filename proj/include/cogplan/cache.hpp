// Copyright 2026 The cogplan Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary cache of memoized hierarchy rows.
//
// Layout (little-endian):
//   "CGPH" | u32 format version | u64 config hash | u32 k_max | u64 num_states
//   then for ego levels 0..k_max and env levels 0..k_max:
//   u32 num_actions | u64 row count | rows of (u32 state, f64 x num_actions)

#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "cogplan/hierarchy.hpp"
#include "cogplan/traffic.hpp"

namespace cogplan {

inline constexpr std::uint32_t kCacheFormatVersion = 1;

class CacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* s, std::size_t n) { buf_.insert(buf_.end(), s, s + n); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> b) : buf_(std::move(b)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CacheError("hierarchy cache is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_hierarchy(const Hierarchy& h, std::uint64_t hash) {
  detail::ByteWriter w;
  w.raw("CGPH", 4);
  w.u32(kCacheFormatVersion);
  w.u64(hash);
  w.u32(static_cast<std::uint32_t>(h.k_max()));
  w.u64(h.spec().num_states);
  for (Player p : {Player::kEgo, Player::kEnv}) {
    for (int k = 0; k <= h.k_max(); ++k) {
      const LevelPolicy& pol = h.policy(p, k);
      const auto rows = pol.cached_rows();
      w.u32(static_cast<std::uint32_t>(pol.num_actions()));
      w.u64(rows.size());
      for (const auto& [x, r] : rows) {
        w.u32(x);
        for (double v : r) w.f64(v);
      }
    }
  }
  return w.bytes();
}

/// Inserts the cached rows into `h`. Throws CacheError on a malformed file or
/// when the file was built for a different configuration.
inline std::size_t deserialize_hierarchy(std::vector<char> bytes, const Hierarchy& h, std::uint64_t hash) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4) != "CGPH") throw CacheError("not a hierarchy cache (bad magic)");
  if (r.u32() != kCacheFormatVersion) throw CacheError("unsupported hierarchy cache version");
  if (r.u64() != hash) throw CacheError("hierarchy cache was built for a different configuration");
  if (r.u32() != static_cast<std::uint32_t>(h.k_max())) throw CacheError("hierarchy cache k_max mismatch");
  if (r.u64() != h.spec().num_states) throw CacheError("hierarchy cache state count mismatch");
  std::size_t total = 0;
  for (Player p : {Player::kEgo, Player::kEnv}) {
    for (int k = 0; k <= h.k_max(); ++k) {
      const LevelPolicy& pol = h.policy(p, k);
      if (r.u32() != pol.num_actions()) throw CacheError("hierarchy cache action count mismatch");
      const std::uint64_t n = r.u64();
      for (std::uint64_t i = 0; i < n; ++i) {
        const StateIndex x = r.u32();
        std::vector<double> row(pol.num_actions());
        for (double& v : row) v = r.f64();
        try {
          pol.insert(x, std::move(row));
        } catch (const ArgumentError& e) {
          throw CacheError(std::string("corrupt hierarchy cache row: ") + e.what());
        }
        ++total;
      }
    }
  }
  if (!r.done()) throw CacheError("trailing bytes in hierarchy cache");
  return total;
}

inline void write_hierarchy_cache(const std::string& path, const Hierarchy& h, std::uint64_t hash) {
  const auto bytes = serialize_hierarchy(h, hash);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CacheError("cannot write hierarchy cache '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CacheError("failed writing hierarchy cache '" + path + "'");
}

inline std::size_t read_hierarchy_cache(const std::string& path, const Hierarchy& h, std::uint64_t hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheError("cannot read hierarchy cache '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_hierarchy(std::move(bytes), h, hash);
}

/// Evaluates the policies the planner reads (human levels in the config)
/// on every state reachable from the initial state within `depth` steps.
inline std::size_t warm_hierarchy(const traffic::Scenario& s, const Hierarchy& h, int depth) {
  const GameSpec& g = *s.game();
  std::vector<StateIndex> frontier{s.initial_state()};
  std::unordered_set<StateIndex> seen(frontier.begin(), frontier.end());
  for (int d = 0; d <= depth; ++d) {
    std::vector<StateIndex> next;
    for (StateIndex x : frontier) {
      for (int k : s.config().levels) (void)h.env(k).row(x);
      if (d == depth) continue;
      for (std::size_t u1 = 0; u1 < g.num_ego_actions; ++u1)
        for (std::size_t u2 = 0; u2 < g.num_env_actions; ++u2) {
          const StateIndex y = g.transition(x, static_cast<ActionIndex>(u1), static_cast<ActionIndex>(u2));
          if (seen.insert(y).second) next.push_back(y);
        }
    }
    frontier = std::move(next);
  }
  return seen.size();
}

}  // namespace cogplan
