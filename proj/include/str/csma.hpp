#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_map>

#include "str/common.hpp"

namespace str {

enum class MacProtocol { NonSTR, S_STR, I_STR, D_STR };
enum class MacLayout { SingleCell, SevenCell };

inline const char* to_string(MacProtocol p) {
  switch (p) {
    case MacProtocol::NonSTR: return "non-STR";
    case MacProtocol::S_STR: return "s-STR";
    case MacProtocol::I_STR: return "i-STR";
    case MacProtocol::D_STR: return "d-STR";
  }
  return "?";
}
inline const char* to_string(MacLayout l) { return l == MacLayout::SingleCell ? "single" : "seven"; }

/// Times are in packet durations, distances in units of the sensing
/// radius r.
struct MacScenario {
  MacLayout layout = MacLayout::SingleCell;
  MacProtocol protocol = MacProtocol::NonSTR;
  double G = 1.0;
  double p_dl = 0.8;
  double h = 0.0;
  double b = 1.0;
  double radius = 1.0;
  /// 0: every terminal event draws a fresh uniform position. >0: that
  /// many fixed terminals per cell, picked uniformly per packet.
  int n_terminals = 0;
  /// 0: a blocked attempt is dropped and G is the attempt rate (the
  /// infinite-population model). >0: blocked packets retry after an
  /// exponential delay of this mean and G is the fresh-packet rate.
  double backoff_mean = 100.0;
  /// pending retries per cell; packets beyond it are dropped, which caps
  /// the attempt rate near max_backlog / backoff_mean once saturated
  int max_backlog = 500;
  /// d-STR: a pairing source holds if it senses a third transmission
  bool pair_sensing = true;
  double warmup = 1e3;
  double duration = 1e5;

  void validate() const {
    if (!(G >= 0)) throw ConfigError("G must be non-negative");
    if (!(p_dl >= 0 && p_dl <= 1)) throw ConfigError("p_dl must be in [0, 1]");
    if (!(b >= 0 && b <= 1)) throw ConfigError("b must be in [0, 1]");
    if (!(h >= 0 && h < 1)) throw ConfigError("h must be in [0, 1)");
    if (!(radius > 0)) throw ConfigError("radius must be positive");
    if (n_terminals < 0) throw ConfigError("n_terminals must be non-negative");
    if (!(backoff_mean >= 0)) throw ConfigError("backoff_mean must be non-negative");
    if (max_backlog < 1) throw ConfigError("max_backlog must be >= 1");
    if (!(warmup >= 0 && duration > 0)) throw ConfigError("warmup/duration out of range");
  }
};

struct ThroughputSample {
  double G_offered = 0;
  double G_measured = 0;  // attempts per packet-time, centre cell
  double S = 0;
  double S_dl = 0;
  double S_ul = 0;
  long successes = 0;
  long collisions = 0;  // data packets started and lost, aborts included
  long aborted = 0;
  long blocked = 0;
};

inline double ideal_csma_throughput(double G) {
  if (G < 0) throw DomainError("G must be non-negative");
  if (std::isinf(G)) return 1.0;
  return G / (1.0 + G);
}

inline double ideal_dstr_throughput(double G, double p) {
  if (G < 0) throw DomainError("G must be non-negative");
  if (p < 0 || p > 1) throw DomainError("p must be in [0, 1]");
  auto f = [](double g) { return std::isinf(g) ? 1.0 : g / (1.0 + g); };
  const double a = p * G, c = (1 - p) * G;
  return (p > 0 ? f(a) : 0.0) + (p < 1 ? f(c) : 0.0);
}

namespace detail {

class MacSim {
 public:
  MacSim(const MacScenario& s, std::uint64_t seed) : s_(s), rng_(seed) {
    s.validate();
    const double d = 2 * s.radius;
    ap_.push_back({0, 0});
    if (s.layout == MacLayout::SevenCell)
      for (int i = 0; i < 6; ++i) ap_.push_back({d * std::cos(kPi / 3 * i), d * std::sin(kPi / 3 * i)});
    n_cells_ = static_cast<int>(ap_.size());
    backlog_.assign(n_cells_, 0);
    next_id_ = n_cells_;
    if (s.n_terminals > 0) {
      for (int c = 0; c < n_cells_; ++c)
        for (int i = 0; i < s.n_terminals; ++i) fixed_.push_back(drop(c));
      next_id_ += n_cells_ * s.n_terminals;
    }
    str_ = s.protocol != MacProtocol::NonSTR;
    ack_ = s.protocol == MacProtocol::I_STR || s.protocol == MacProtocol::D_STR;
  }

  ThroughputSample run() {
    const double t_end = s_.warmup + s_.duration;
    const double rate = s_.G * n_cells_;
    if (rate > 0) push(rng_.exponential(1.0 / rate), kArrival, -1);
    while (!q_.empty()) {
      const Event e = q_.top();
      q_.pop();
      now_ = e.t;
      switch (e.type) {
        case kArrival:
          if (now_ < t_end) {
            arrival(static_cast<int>(rng_.below(n_cells_)), -1, nullptr);
            push(now_ + rng_.exponential(1.0 / rate), kArrival, -1);
          }
          break;
        case kRetry: {
          auto it = retries_.find(e.id);
          const Retry r = it->second;
          retries_.erase(it);
          --backlog_[r.cell];
          if (now_ < t_end) arrival(r.cell, r.dl ? 1 : 0, &r.term);
          break;
        }
        case kHeader: header(e.id); break;
        case kAck: ack(e.id); break;
        case kEnd:
          if (tx(e.id).version == e.version) end_data(e.id);
          break;
      }
      if (++since_prune_ >= 1024) prune();
    }
    out_.G_offered = s_.G;
    out_.G_measured = static_cast<double>(attempts_) / s_.duration;
    out_.S = static_cast<double>(out_.successes) / s_.duration;
    out_.S_dl = static_cast<double>(succ_dl_) / s_.duration;
    out_.S_ul = static_cast<double>(succ_ul_) / s_.duration;
    return out_;
  }

 private:
  struct Pt {
    double x, y;
  };
  struct Term {
    int id;
    Pt pos;
  };
  struct Tx {
    double start, end;
    int src, dst;  // dst < 0 for dummies
    Pt src_pos, dst_pos;
    int cell;
    bool dummy, dl;
    bool clean = false, aborted = false;
    int version = 0;
    double sensed = 0;  // others detect the carrier from here on
  };
  struct Event {
    double t;
    std::uint64_t seq;
    int type;
    long id;
    int version;
    bool operator<(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };
  struct Node {
    long data = -1;   // own data in flight
    long dummy = -1;  // own dummy in flight
    std::vector<long> covering;
  };
  struct Retry {
    int cell;
    bool dl;
    Term term;
  };
  enum { kArrival, kRetry, kHeader, kAck, kEnd };

  Pt drop(int cell) {
    const double rr = s_.radius * std::sqrt(rng_.uniform());
    const double a = 2 * kPi * rng_.uniform();
    return {ap_[cell].x + rr * std::cos(a), ap_[cell].y + rr * std::sin(a)};
  }

  Term pick_terminal(int cell) {
    if (s_.n_terminals > 0) {
      const int i = cell * s_.n_terminals + static_cast<int>(rng_.below(s_.n_terminals));
      return {n_cells_ + i, fixed_[i]};
    }
    return {next_id_++, drop(cell)};
  }

  bool hears(const Pt& p, const Pt& q) const {
    const double dx = p.x - q.x, dy = p.y - q.y;
    return dx * dx + dy * dy <= s_.radius * s_.radius * (1 + 1e-12);
  }

  void push(double t, int type, long id, int version = 0) { q_.push({t, seq_++, type, id, version}); }

  Tx& tx(long id) { return tx_[static_cast<std::size_t>(id - base_)]; }
  const Tx& tx(long id) const { return tx_[static_cast<std::size_t>(id - base_)]; }
  long first_id() const { return base_; }
  long end_id() const { return base_ + static_cast<long>(tx_.size()); }
  bool live(long id) const { return id >= base_ && tx(id).end > now_; }

  bool measuring(const Tx& p) const { return p.cell == 0 && p.start >= s_.warmup && p.start < s_.warmup + s_.duration; }

  /// any transmission other than `skip` overlapping [a, b] audible at
  /// node `rx`, ignoring those sent by `peer` and, under STR, by `rx`
  bool interfered(int rx, const Pt& rx_pos, double a, double b, long skip, int peer) const {
    for (long i = first_id(); i < end_id(); ++i) {
      const Tx& q = tx(i);
      if (i == skip || q.start > b || !(q.end > a) || !(q.end > q.start)) continue;
      if (q.src == rx) {
        if (!str_) return true;  // half duplex: talking while listening
        continue;
      }
      if (q.src == peer) continue;
      if (hears(q.src_pos, rx_pos)) return true;
    }
    return false;
  }

  /// drops finished transmissions from the active list; one that ends
  /// exactly now stays until time moves on
  void compact_active() {
    std::size_t k = 0;
    for (long id : active_)
      if (!(tx(id).end < now_)) active_[k++] = id;
    active_.resize(k);
  }

  bool busy(int src, const Pt& pos) {
    compact_active();
    for (long i : active_) {
      const Tx& q = tx(i);
      if (!(q.end > now_) || !(q.end > q.start)) continue;
      if (q.src == src) return true;
      if (q.sensed <= now_ && hears(q.src_pos, pos)) return true;
    }
    return false;
  }

  bool sensed_by_others(const Pt& pos, int self, int peer) {
    compact_active();
    for (long i : active_) {
      const Tx& q = tx(i);
      if (!(q.end > now_) || !(q.end > q.start) || q.src == self || q.src == peer) continue;
      if (q.sensed <= now_ && hears(q.src_pos, pos)) return true;
    }
    return false;
  }

  long add_tx(Tx t) {
    // a node switching between data and dummy keeps one carrier
    t.sensed = t.start + s_.h;
    for (long i : active_) {
      const Tx& q = tx(i);
      if (q.src == t.src && q.end >= now_ && q.end > q.start) t.sensed = std::min(t.sensed, q.sensed);
    }
    tx_.push_back(t);
    active_.push_back(end_id() - 1);
    return end_id() - 1;
  }

  /// direction: -1 draw, 0 UL, 1 DL; `term` reuses a retried terminal
  void arrival(int cell, int direction, const Term* term) {
    const bool dl = direction < 0 ? rng_.uniform() < s_.p_dl : direction == 1;
    if (cell == 0 && now_ >= s_.warmup && now_ < s_.warmup + s_.duration) ++attempts_;
    if (s_.protocol == MacProtocol::D_STR && try_pair(cell, dl)) return;
    const Term t = term ? *term : pick_terminal(cell);
    const int src = dl ? cell : t.id, dst = dl ? t.id : cell;
    const Pt sp = dl ? ap_[cell] : t.pos, dp = dl ? t.pos : ap_[cell];
    if (busy(src, sp)) {
      if (cell == 0 && now_ >= s_.warmup && now_ < s_.warmup + s_.duration) ++out_.blocked;
      if (s_.backoff_mean > 0 && backlog_[cell] < s_.max_backlog) {
        ++backlog_[cell];
        const long id = retry_id_++;
        retries_[id] = {cell, dl, t};
        push(now_ + rng_.exponential(s_.backoff_mean), kRetry, id);
      }
      return;
    }
    start_data(src, dst, sp, dp, cell, dl);
  }

  /// d-STR: overwrite a dummy the would-be source is sending for an
  /// opposite-direction packet and address the new packet back to that
  /// packet's source.
  bool try_pair(int cell, bool dl) {
    compact_active();
    for (std::size_t j = 0; j < active_.size(); ++j) {
      const Tx& p = tx(active_[j]);
      if (p.dummy || p.cell != cell || p.dl == dl || p.aborted || !p.clean || !(p.end > now_)) continue;
      auto it = nodes_.find(p.dst);
      if (it == nodes_.end() || it->second.data >= 0 || !live(it->second.dummy)) continue;
      if (!(rng_.uniform() < s_.b)) return false;
      const Tx copy = p;
      // the new source still senses the channel, ignoring its own
      // carrier and the exchange it joins
      if (s_.pair_sensing && sensed_by_others(copy.dst_pos, copy.dst, copy.src)) return false;
      stop_dummy(copy.dst);
      start_data(copy.dst, copy.src, copy.dst_pos, copy.src_pos, cell, dl);
      return true;
    }
    return false;
  }

  void start_data(int src, int dst, const Pt& sp, const Pt& dp, int cell, bool dl) {
    Tx t{now_, now_ + 1.0, src, dst, sp, dp, cell, false, dl};
    const long id = add_tx(t);
    nodes_[src].data = id;
    push(now_ + s_.h, kHeader, id);
    if (ack_) push(now_ + 2 * s_.h, kAck, id);
    push(now_ + 1.0, kEnd, id, 0);
  }

  void header(long id) {
    Tx& p = tx(id);
    if (p.aborted) return;
    p.clean = !interfered(p.dst, p.dst_pos, p.start, now_, id, p.src);
    if (!str_ || !p.clean) return;
    Node& d = nodes_[p.dst];
    d.covering.push_back(id);
    // a node busy with its own data starts the dummy when that ends
    if (d.data < 0) start_dummy(p.dst, p.dst_pos);
  }

  void ack(long id) {
    Tx& p = tx(id);
    if (p.aborted || !(p.end > now_)) return;
    if (p.clean && !interfered(p.src, p.src_pos, p.start + s_.h, now_, id, p.dst)) return;
    p.aborted = true;
    p.end = now_;
    ++p.version;
    push(now_, kEnd, id, p.version);
    auto it = nodes_.find(p.dst);
    if (it != nodes_.end()) {
      auto& cov = it->second.covering;
      cov.erase(std::remove(cov.begin(), cov.end(), id), cov.end());
      trim_dummy(p.dst);
    }
  }

  double cover_end(const Node& n) const {
    double e = now_;
    for (long c : n.covering)
      if (c >= base_ && !tx(c).aborted) e = std::max(e, tx(c).end);
    return e;
  }

  void start_dummy(int n, const Pt& pos) {
    Node& d = nodes_[n];
    const double e = cover_end(d);
    if (!(e > now_)) return;
    if (live(d.dummy)) {
      tx(d.dummy).end = std::max(tx(d.dummy).end, e);
      return;
    }
    d.dummy = add_tx({now_, e, n, -1, pos, pos, -1, true, false});
  }

  void stop_dummy(int n) {
    Node& d = nodes_[n];
    if (live(d.dummy)) tx(d.dummy).end = now_;
    d.dummy = -1;
  }

  void trim_dummy(int n) {
    Node& d = nodes_[n];
    if (!live(d.dummy)) return;
    tx(d.dummy).end = std::min(tx(d.dummy).end, cover_end(d));
    if (!(tx(d.dummy).end > now_)) tx(d.dummy).end = now_;
  }

  void end_data(long id) {
    const Tx p = tx(id);
    if (measuring(p)) {
      if (!p.aborted && !interfered(p.dst, p.dst_pos, p.start, p.end, id, p.src)) {
        ++out_.successes;
        ++(p.dl ? succ_dl_ : succ_ul_);
      } else {
        ++out_.collisions;
        if (p.aborted) ++out_.aborted;
      }
    }
    auto si = nodes_.find(p.src);
    if (si != nodes_.end() && si->second.data == id) {
      Node& s = si->second;
      s.data = -1;
      auto& cov = s.covering;
      cov.erase(std::remove_if(cov.begin(), cov.end(),
                               [&](long c) { return c < base_ || tx(c).aborted || !(tx(c).end > now_); }),
                cov.end());
      if (!cov.empty()) start_dummy(p.src, p.src_pos);
    }
    auto di = nodes_.find(p.dst);
    if (di != nodes_.end()) {
      auto& cov = di->second.covering;
      cov.erase(std::remove(cov.begin(), cov.end(), id), cov.end());
    }
  }

  void prune() {
    since_prune_ = 0;
    // every transmission lasts at most one packet plus h
    std::size_t k = 0;
    while (k < tx_.size() && tx_[k].start < now_ - 3.0) ++k;
    tx_.erase(tx_.begin(), tx_.begin() + static_cast<long>(k));
    base_ += static_cast<long>(k);
    active_.erase(std::remove_if(active_.begin(), active_.end(), [&](long id) { return id < base_; }), active_.end());
    compact_active();
    for (auto it = nodes_.begin(); it != nodes_.end();) {
      const Node& n = it->second;
      if (n.data < 0 && !live(n.dummy) && n.covering.empty()) it = nodes_.erase(it);
      else ++it;
    }
  }

  const MacScenario& s_;
  Rng rng_;
  std::vector<Pt> ap_, fixed_;
  int n_cells_ = 1;
  int next_id_ = 1;
  bool str_ = false, ack_ = false;
  std::vector<Tx> tx_;
  std::vector<long> active_;  // ids that may still be on air, in start order
  long base_ = 0;
  std::unordered_map<int, Node> nodes_;
  std::unordered_map<long, Retry> retries_;
  long retry_id_ = 0;
  std::vector<int> backlog_;
  std::priority_queue<Event> q_;
  std::uint64_t seq_ = 0;
  double now_ = 0;
  long attempts_ = 0, succ_dl_ = 0, succ_ul_ = 0;
  int since_prune_ = 0;
  ThroughputSample out_;
};

}  // namespace detail

inline ThroughputSample run_mac(const MacScenario& s, std::uint64_t seed) {
  detail::MacSim sim(s, seed);
  return sim.run();
}

/// Log-spaced load grid.
inline std::vector<double> log_grid(double lo, double hi, int n) {
  if (n < 1 || !(lo > 0) || !(hi >= lo)) throw ConfigError("bad grid");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return g;
}

struct MaxThroughput {
  double S = 0;
  double G = 0;
};

inline MaxThroughput max_throughput(MacScenario s, const std::vector<double>& grid, std::uint64_t seed) {
  MaxThroughput best;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    s.G = grid[i];
    const double S = run_mac(s, Rng::derive(seed, i)).S;
    if (S > best.S) best = {S, grid[i]};
  }
  return best;
}

struct GainRow {
  MacLayout layout;
  double p_dl;
  double h;
  double baseline_S;
  double gain_s, gain_i, gain_d25, gain_d100;  // relative, e.g. 0.228
};

/// Improvement of maximum throughput over non-STR for one (layout, p, h).
inline GainRow max_throughput_gain(MacScenario s, const std::vector<double>& grid, std::uint64_t seed) {
  GainRow r{s.layout, s.p_dl, s.h, 0, 0, 0, 0, 0};
  s.protocol = MacProtocol::NonSTR;
  r.baseline_S = max_throughput(s, grid, Rng::derive(seed, 0)).S;
  auto gain = [&](MacProtocol p, double b, std::uint64_t k) {
    MacScenario t = s;
    t.protocol = p;
    t.b = b;
    return max_throughput(t, grid, Rng::derive(seed, k)).S / r.baseline_S - 1.0;
  };
  r.gain_s = gain(MacProtocol::S_STR, 1.0, 1);
  r.gain_i = gain(MacProtocol::I_STR, 1.0, 2);
  r.gain_d25 = gain(MacProtocol::D_STR, 0.25, 3);
  r.gain_d100 = gain(MacProtocol::D_STR, 1.0, 4);
  return r;
}

}  // namespace str
