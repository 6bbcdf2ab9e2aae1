#pragma once

// Scenario files, CSV/manifest output and sweeps for the command-line tool.

#include <boost/crc.hpp>

#include <chrono>
#include <deque>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "str/canceller.hpp"
#include "str/cellular.hpp"
#include "str/csma.hpp"
#include "str/wiener.hpp"

namespace str::io {

inline constexpr const char* kVersion = "0.1.0";

/// malformed or unreadable scenario (exit 2)
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Engine { Wiener, Canceller, Mac, Cellular };

inline const char* to_string(Engine e) {
  switch (e) {
    case Engine::Wiener: return "wiener";
    case Engine::Canceller: return "canceller";
    case Engine::Mac: return "mac";
    case Engine::Cellular: return "cellular";
  }
  return "?";
}

inline Engine parse_engine(const std::string& s) {
  if (s == "wiener") return Engine::Wiener;
  if (s == "canceller") return Engine::Canceller;
  if (s == "mac") return Engine::Mac;
  if (s == "cellular") return Engine::Cellular;
  throw ParseError("unknown engine '" + s + "'");
}

enum class Kind { Num, Int, Bool, Str, NumList, StrList };

struct ParamSpec {
  std::string key;
  Kind kind;
  std::string def;
  std::string doc;
  std::vector<std::string> choices = {};  // Str / StrList only; empty = free text
};

// ---------------------------------------------------------------------
// Value parsing

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

inline double parse_num(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (...) {
    throw ParseError("not a number: '" + s + "'");
  }
  if (pos != s.size()) throw ParseError("not a number: '" + s + "'");
  return v;
}

inline long parse_int(const std::string& s) {
  const double v = parse_num(s);
  if (v != std::floor(v) || std::abs(v) > 9e15) throw ParseError("not an integer: '" + s + "'");
  return static_cast<long>(v);
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "off" || s == "0" || s == "no") return false;
  throw ParseError("not a boolean: '" + s + "'");
}

/// "a,b,c" or a grid "lo:hi:n" / "lo:hi:n:log"
inline std::vector<double> parse_num_list(const std::string& s) {
  if (s.find(':') != std::string::npos) {
    const auto p = split(s, ':');
    if (p.size() != 3 && p.size() != 4) throw ParseError("grid must be lo:hi:n[:log]");
    const double lo = parse_num(p[0]), hi = parse_num(p[1]);
    const long n = parse_int(p[2]);
    const bool lg = p.size() == 4 && p[3] == "log";
    if (p.size() == 4 && p[3] != "log" && p[3] != "lin") throw ParseError("grid spacing must be lin or log");
    if (n < 1 || !(hi >= lo)) throw ParseError("bad grid '" + s + "'");
    if (lg && !(lo > 0)) throw ParseError("log grid needs lo > 0");
    std::vector<double> v(n);
    for (long i = 0; i < n; ++i) {
      const double u = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
      v[i] = lg ? lo * std::pow(hi / lo, u) : lo + (hi - lo) * u;
    }
    return v;
  }
  std::vector<double> v;
  for (const auto& t : split(s, ',')) v.push_back(parse_num(t));
  if (v.empty()) throw ParseError("empty list");
  return v;
}

/// shortest round-trip formatting, so CSVs are stable across runs
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---------------------------------------------------------------------
// Schema

inline const std::vector<ParamSpec>& common_schema() {
  static const std::vector<ParamSpec> s = {
      {"engine", Kind::Str, "", "wiener | canceller | mac | cellular", {"wiener", "canceller", "mac", "cellular"}},
      {"seed", Kind::Int, "1", "base seed; every random stream is derived from it"},
      {"output_dir", Kind::Str, "", "result directory (empty: $STRSIM_OUTPUT_DIR or ./out/<name>)"},
      {"name", Kind::Str, "", "label written into the CSV metadata"},
  };
  return s;
}

inline const std::vector<ParamSpec>& engine_schema(Engine e) {
  static const std::vector<ParamSpec> wiener = {
      {"taps", Kind::NumList, "2", "tap counts K"},
      {"spacing", Kind::NumList, "0.01", "normalized tap spacings B*dtau"},
      {"echo_offset", Kind::Num, "0.5", "echo position as a fraction of the first tap gap (0 = on tap 1)"},
      {"bandwidth_hz", Kind::Num, "10e6", "signal bandwidth"},
      {"carrier_hz", Kind::Num, "2e9", "carrier frequency"},
      {"monte_carlo", Kind::Bool, "false", "also measure each point on a rendered OFDM stream"},
      {"mc_symbols", Kind::Int, "40", "OFDM symbols per Monte Carlo point"},
      {"oversampling", Kind::Int, "16", "oversampling of the Monte Carlo stream"},
  };
  static const std::vector<ParamSpec> canceller = {
      {"mode", Kind::Str, "full", "ideal: no noise, unlimited attenuators; full: every impairment", {"ideal", "full"}},
      {"oversampling", Kind::Int, "16", "samples per Nyquist interval"},
      {"n_symbols", Kind::Int, "200000", "OFDM symbols of adaptation"},
      {"mu", Kind::Num, "200", "integrator gain per symbol"},
      {"update_block", Kind::Int, "1", "samples per weight update"},
      {"mu_halve_at", Kind::Int, "-1", "symbol at which mu is halved (-1: never)"},
      {"tap_spacing", Kind::Num, "0.025", "normalized tap spacing"},
      {"atten_range_db", Kind::Num, "35", "attenuator range above the 3 dB minimum"},
      {"unlimited", Kind::Str, "auto", "unlimited attenuators (auto follows mode)", {"auto", "true", "false"}},
      {"noise", Kind::Str, "auto", "noise sources (auto follows mode)", {"auto", "true", "false"}},
      {"phase_distortion", Kind::Bool, "true", "attenuator phase law"},
      {"z_gain_db", Kind::Num, "30", "gain ahead of the residual downconverter"},
      {"weight_fullscale_dbm", Kind::Num, "10", "integrator output level for unit weight"},
      {"tx_iq", Kind::Bool, "false", "transmitter I/Q imbalance"},
      {"phase_noise_deg", Kind::Num, "0", "rms oscillator phase noise"},
      {"independent_oscillators", Kind::Bool, "true", "separate LO per downconverter"},
      {"time_varying", Kind::Bool, "false", "apply the tracking profile to the echoes"},
      {"digital", Kind::Bool, "false", "switch to digital cancellation below the threshold"},
      {"digital_threshold_dbm", Kind::Num, "-70", "analog residual that enables the digital stage"},
      {"digital_averaging", Kind::Int, "100", "symbols averaged into the digital channel estimate"},
      {"digital_symbols", Kind::Int, "500", "symbols run after the digital stage starts"},
      {"trace_every", Kind::Int, "1000", "weight snapshot period in symbols"},
      {"final_window", Kind::Int, "1000", "trailing symbols averaged into the final residual"},
  };
  static const std::vector<ParamSpec> mac = {
      {"output", Kind::Str, "point", "point: one load; curve: S over G_grid; gains: max-throughput gain row",
       {"point", "curve", "gains"}},
      {"layout", Kind::Str, "single", "single cell or seven cells", {"single", "seven"}},
      {"protocol", Kind::StrList, "nonstr", "protocols for point/curve", {"nonstr", "s", "i", "d"}},
      {"G", Kind::Num, "1", "offered load for output=point"},
      {"G_grid", Kind::NumList, "0.1:1000:16:log", "load grid for curve and gains"},
      {"p_dl", Kind::Num, "0.8", "downlink share of the traffic"},
      {"h", Kind::Num, "0", "normalized hidden-terminal seeing radius"},
      {"b", Kind::Num, "1", "d-STR dummy share"},
      {"n_terminals", Kind::Int, "0", "fixed terminals per cell (0: fresh position per packet)"},
      {"backoff_mean", Kind::Num, "100", "mean retry delay of a blocked packet (0: drop)"},
      {"max_backlog", Kind::Int, "500", "pending retries per cell"},
      {"warmup", Kind::Num, "1000", "packet-times discarded before measuring"},
      {"duration", Kind::Num, "100000", "measured packet-times"},
  };
  static const std::vector<ParamSpec> cellular = {
      {"cell", Kind::Str, "large", "deployment", {"large", "small"}},
      {"n_snapshots", Kind::Int, "200", "drops per location range"},
      {"p_lo", Kind::NumList, "0.25", "lower location-probability bounds, one study each"},
      {"p_hi", Kind::Num, "0.99", "upper location-probability bound"},
      {"antennas", Kind::NumList, "8,12", "vertical elements of the STR arrays"},
      {"null_forming", Kind::Bool, "true", "null toward the horizon in the STR arrays"},
      {"include_no_null", Kind::Bool, "false", "add STR cases without null forming"},
      {"resource_blocks", Kind::Bool, "false", "add the optimized DL/UL zone scheme per array"},
      {"epsilon", Kind::Num, "0", "null-forming regularization (0: tune to the depth target)"},
      {"depth_target_db", Kind::Str, "auto", "null depth target (auto: from the link budget)"},
      {"tilt_deg", Kind::Num, "15", "electrical downtilt"},
      {"n_sites", Kind::Int, "19", "sites: 1, 7 or 19"},
      {"wraparound", Kind::Bool, "true", "wrap-around geometry"},
      {"best_server", Kind::Bool, "true", "keep drops served by their own sector"},
      {"bs_bs_draws", Kind::Int, "0", "first-tier BS-BS coupling draws per link (0: skip)"},
  };
  switch (e) {
    case Engine::Wiener: return wiener;
    case Engine::Canceller: return canceller;
    case Engine::Mac: return mac;
    case Engine::Cellular: return cellular;
  }
  return wiener;
}

inline void check_value(const ParamSpec& p, const std::string& v) {
  auto in_choices = [&](const std::string& x) {
    return p.choices.empty() || std::find(p.choices.begin(), p.choices.end(), x) != p.choices.end();
  };
  switch (p.kind) {
    case Kind::Num: parse_num(v); break;
    case Kind::Int: parse_int(v); break;
    case Kind::Bool: parse_bool(v); break;
    case Kind::NumList: parse_num_list(v); break;
    case Kind::Str:
      if (!in_choices(v)) throw ParseError(p.key + ": '" + v + "' is not one of the allowed values");
      break;
    case Kind::StrList:
      for (const auto& t : split(v, ','))
        if (!in_choices(t)) throw ParseError(p.key + ": '" + t + "' is not one of the allowed values");
      break;
  }
}

// ---------------------------------------------------------------------
// Scenario

class Scenario {
 public:
  Engine engine = Engine::Wiener;
  std::string origin;

  static Scenario parse(const std::string& text, const std::string& origin = "<string>") {
    std::map<std::string, std::string> raw;
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(origin + ":" + std::to_string(n) + ": expected key = value");
      const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
      if (k.empty()) throw ParseError(origin + ":" + std::to_string(n) + ": empty key");
      if (raw.count(k)) throw ParseError(origin + ":" + std::to_string(n) + ": duplicate key '" + k + "'");
      raw[k] = v;
    }
    if (!raw.count("engine")) throw ParseError(origin + ": missing 'engine'");
    Scenario s;
    s.origin = origin;
    s.engine = parse_engine(raw["engine"]);
    for (const auto* sch : {&common_schema(), &engine_schema(s.engine)})
      for (const auto& p : *sch) s.values_[p.key] = p.def;
    for (const auto& [k, v] : raw) s.set(k, v);
    return s;
  }

  static Scenario load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot read scenario '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  /// key=value override; unknown keys are rejected
  void set(const std::string& key, const std::string& value) {
    const ParamSpec* p = spec(key);
    if (!p) throw ParseError("unknown key '" + key + "' for engine " + to_string(engine));
    if (key == "engine" && value != to_string(engine)) throw ParseError("engine cannot be overridden");
    check_value(*p, value);
    values_[key] = value;
  }

  void set_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("override must be key=value: '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const ParamSpec* spec(const std::string& key) const {
    for (const auto* sch : {&common_schema(), &engine_schema(engine)})
      for (const auto& p : *sch)
        if (p.key == key) return &p;
    return nullptr;
  }

  const std::string& str(const std::string& k) const {
    const auto it = values_.find(k);
    if (it == values_.end()) throw ParseError("no key '" + k + "'");
    return it->second;
  }
  double num(const std::string& k) const { return parse_num(str(k)); }
  long integer(const std::string& k) const { return parse_int(str(k)); }
  bool flag(const std::string& k) const { return parse_bool(str(k)); }
  std::vector<double> list(const std::string& k) const { return parse_num_list(str(k)); }
  std::vector<std::string> words(const std::string& k) const { return split(str(k), ','); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  /// every key with its effective value, sorted; this is what gets hashed
  std::string resolved_text() const {
    std::ostringstream os;
    os << "engine = " << to_string(engine) << "\n";
    for (const auto& [k, v] : values_)
      if (k != "engine" && k != "output_dir") os << k << " = " << v << "\n";
    return os.str();
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::uint32_t crc32(const std::string& data) {
  boost::crc_32_type c;
  c.process_bytes(data.data(), data.size());
  return c.checksum();
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

// ---------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> r) {
    if (r.size() != columns.size()) throw std::logic_error("row width mismatch");
    rows.push_back(std::move(r));
  }
};

/// '#'-prefixed metadata lines, one header line, then the rows
inline std::string to_csv(const Table& t, const std::vector<std::pair<std::string, std::string>>& meta) {
  std::ostringstream os;
  for (const auto& [k, v] : meta) os << "# " << k << ": " << v << "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << "\n";
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << "\n";
  }
  return os.str();
}

/// named output tables; the first one is the summary a sweep merges
struct RunOutput {
  // deque: tables handed out by add() stay valid as more are added
  std::deque<std::pair<std::string, Table>> files;
  Table& add(const std::string& name, std::vector<std::string> cols) {
    files.push_back({name, Table{std::move(cols), {}}});
    return files.back().second;
  }
};

// ---------------------------------------------------------------------
// Engine builders

inline TapLayout build_wiener_layout(int K, double spacing, const Scenario& s) {
  return TapLayout::uniform(K, spacing, s.num("bandwidth_hz"), s.num("carrier_hz"), 0.0);
}

inline RunOutput run_wiener(const Scenario& s) {
  RunOutput out;
  const bool mc = s.flag("monte_carlo");
  std::vector<std::string> cols = {"taps", "norm_spacing", "echo_position", "suppression_db"};
  if (mc) cols.push_back("mc_suppression_db");
  Table& t = out.add("wiener.csv", cols);
  const double off = s.num("echo_offset");
  SignalConfig sc;
  sc.bandwidth_hz = s.num("bandwidth_hz");
  sc.carrier_hz = s.num("carrier_hz");
  sc.oversampling = static_cast<int>(s.integer("oversampling"));
  long idx = 0;
  for (double kd : s.list("taps")) {
    const int K = static_cast<int>(kd);
    if (K < 1 || K != kd) throw ConfigError("taps must be positive integers");
    for (double sp : s.list("spacing")) {
      const TapLayout l = build_wiener_layout(K, sp, s);
      const double tau = off * sp / l.bandwidth_hz;
      std::vector<std::string> r = {std::to_string(K), fmt(sp), fmt(off * sp), fmt(wiener_weights({tau, 0, 0}, l).suppression_db)};
      if (mc) {
        // the Monte Carlo stream fixes B to its occupied band, so rebuild on that scale
        TapLayout m = TapLayout::uniform(K, sp, sc.occupied_bandwidth(), sc.carrier_hz, 20e-9);
        const EchoTap e{m.tap_delays_s[0] + off * sp / sc.occupied_bandwidth(), 0, 0};
        r.push_back(fmt(monte_carlo_suppression(e, m, sc, static_cast<int>(s.integer("mc_symbols")), Rng::derive(s.seed(), idx))));
      }
      t.add(r);
      ++idx;
    }
  }
  return out;
}

inline CancellerScenario build_canceller(const Scenario& s) {
  const bool ideal = s.str("mode") == "ideal";
  CancellerScenario c = fig4_scenario(ideal);
  c.signal.oversampling = static_cast<int>(s.integer("oversampling"));
  const double sp = s.num("tap_spacing");
  if (sp != 0.025) {
    c.layout = TapLayout::uniform(3, sp, c.signal.bandwidth_hz, c.signal.carrier_hz, 1.0e-9);
    const auto& t = c.layout.tap_delays_s;
    c.echo.taps[0].delay_s = 0.5 * (t[0] + t[1]);
    c.echo.taps[1].delay_s = 0.5 * (t[1] + t[2]);
  }
  const std::string unl = s.str("unlimited"), noi = s.str("noise");
  c.atten.unlimited = unl == "auto" ? ideal : unl == "true";
  c.atten.max_atten_db = c.atten.min_atten_db + s.num("atten_range_db");
  c.atten.phase_distortion = s.flag("phase_distortion");
  const bool noise = noi == "auto" ? !ideal : noi == "true";
  c.noise = noise ? NoiseBudget{} : NoiseBudget::none();
  c.noise.z_gain_db = s.num("z_gain_db");
  c.noise.weight_fullscale_dbm = s.num("weight_fullscale_dbm");
  c.tx.enabled = s.flag("tx_iq");
  const double pn = s.num("phase_noise_deg");
  const bool indep = s.flag("independent_oscillators");
  for (auto& d : c.x_dc) {
    d.phase_noise_rms_deg = pn;
    d.common_oscillator = !indep;
  }
  c.z_dc.phase_noise_rms_deg = pn;
  c.z_dc.common_oscillator = !indep;
  auto& a = c.adapt;
  a.n_symbols = s.integer("n_symbols");
  a.mu = s.num("mu");
  a.update_block = static_cast<int>(s.integer("update_block"));
  const long h = s.integer("mu_halve_at");
  if (h >= 0) a.mu_schedule = {{h, 0.5}};
  a.digital = s.flag("digital");
  a.digital_threshold_dbm = s.num("digital_threshold_dbm");
  a.digital_averaging = static_cast<int>(s.integer("digital_averaging"));
  a.digital_symbols = s.integer("digital_symbols");
  a.trace_every = static_cast<int>(std::max(1L, s.integer("trace_every")));
  a.final_window = s.integer("final_window");
  if (s.flag("time_varying")) c.echo.profile = tracking_profile(a.n_symbols, c.echo.taps.size());
  c.seed = s.seed();
  return c;
}

inline RunOutput run_canceller(const Scenario& s) {
  const CancellerScenario c = build_canceller(s);
  const CancellerTrace tr = run_adaptation(c);
  RunOutput out;
  out.add("summary.csv", {"echo_dbm", "final_residual_dbm", "suppression_db", "digital_start", "digital_final_dbm"})
      .add({fmt(tr.echo_power_dbm), fmt(tr.final_residual_dbm), fmt(tr.suppression_db), std::to_string(tr.digital_start),
            tr.digital_start >= 0 ? fmt(tr.digital_final_dbm) : "nan"});
  Table& t = out.add("trace.csv", {"symbol", "residual_dbm"});
  for (std::size_t i = 0; i < tr.residual_dbm.size(); ++i) t.add({std::to_string(i), fmt(tr.residual_dbm[i])});
  std::vector<std::string> wc = {"symbol"};
  for (int k = 0; k < c.bank.K; ++k)
    for (int m = 0; m < c.bank.M; ++m) wc.push_back("w" + std::to_string(k + 1) + std::to_string(m + 1));
  Table& w = out.add("weights.csv", wc);
  for (std::size_t i = 0; i < tr.weights.size(); ++i) {
    std::vector<std::string> r = {std::to_string(tr.weight_symbol[i])};
    for (double v : tr.weights[i]) r.push_back(fmt(v));
    w.add(r);
  }
  Table& sp = out.add("spectrum.csv", {"freq_hz", "z_dbm_hz", "residual_dbm_hz"});
  for (std::size_t i = 0; i < tr.spectrum_freq_hz.size(); ++i)
    sp.add({fmt(tr.spectrum_freq_hz[i]), fmt(tr.spectrum_z_dbm_hz[i]), fmt(tr.spectrum_residual_dbm_hz[i])});
  if (tr.digital_start >= 0) {
    Table& d = out.add("digital.csv", {"symbol", "residual_dbm"});
    for (std::size_t i = 0; i < tr.digital_residual_dbm.size(); ++i)
      d.add({std::to_string(tr.digital_start + static_cast<long>(i)), fmt(tr.digital_residual_dbm[i])});
  }
  return out;
}

inline MacProtocol parse_protocol(const std::string& p) {
  if (p == "nonstr") return MacProtocol::NonSTR;
  if (p == "s") return MacProtocol::S_STR;
  if (p == "i") return MacProtocol::I_STR;
  if (p == "d") return MacProtocol::D_STR;
  throw ParseError("unknown protocol '" + p + "'");
}

inline MacScenario build_mac(const Scenario& s) {
  MacScenario m;
  m.layout = s.str("layout") == "seven" ? MacLayout::SevenCell : MacLayout::SingleCell;
  m.G = s.num("G");
  m.p_dl = s.num("p_dl");
  m.h = s.num("h");
  m.b = s.num("b");
  m.n_terminals = static_cast<int>(s.integer("n_terminals"));
  m.backoff_mean = s.num("backoff_mean");
  m.max_backlog = static_cast<int>(s.integer("max_backlog"));
  m.warmup = s.num("warmup");
  m.duration = s.num("duration");
  m.validate();
  return m;
}

inline RunOutput run_mac_engine(const Scenario& s, int threads) {
  MacScenario m = build_mac(s);
  const std::string mode = s.str("output");
  RunOutput out;
  if (mode == "gains") {
    const GainRow g = max_throughput_gain(m, s.list("G_grid"), s.seed());
    out.add("gains.csv", {"layout", "p_dl", "h", "baseline_S", "s_str_pct", "i_str_pct", "d_str_b25_pct", "d_str_b100_pct"})
        .add({to_string(g.layout), fmt(g.p_dl), fmt(g.h), fmt(g.baseline_S), fmt(100 * g.gain_s), fmt(100 * g.gain_i),
              fmt(100 * g.gain_d25), fmt(100 * g.gain_d100)});
    return out;
  }
  const auto protos = s.words("protocol");
  const std::vector<double> grid = mode == "curve" ? s.list("G_grid") : std::vector<double>{m.G};
  const long n = static_cast<long>(protos.size() * grid.size());
  std::vector<ThroughputSample> res(n);
  parallel_for(n, threads, [&](long i) {
    MacScenario t = m;
    t.protocol = parse_protocol(protos[i / grid.size()]);
    t.G = grid[i % grid.size()];
    res[i] = run_mac(t, Rng::derive(s.seed(), i));
  });
  Table& t = out.add(mode == "curve" ? "throughput.csv" : "point.csv",
                     {"protocol", "G", "G_measured", "S", "S_dl", "S_ul", "successes", "collisions", "blocked"});
  for (long i = 0; i < n; ++i) {
    const auto& r = res[i];
    t.add({protos[i / grid.size()], fmt(grid[i % grid.size()]), fmt(r.G_measured), fmt(r.S), fmt(r.S_dl), fmt(r.S_ul),
           std::to_string(r.successes), std::to_string(r.collisions), std::to_string(r.blocked)});
  }
  return out;
}

inline CellDeployment build_deployment(const Scenario& s) {
  CellDeployment d = s.str("cell") == "small" ? CellDeployment::small() : CellDeployment::large();
  d.n_sites = static_cast<int>(s.integer("n_sites"));
  d.wraparound = s.flag("wraparound");
  d.best_server = s.flag("best_server");
  d.validate();
  return d;
}

inline ArrayConfig build_array(const Scenario& s, int n_vertical, bool nulls) {
  ArrayConfig a;
  a.n_vertical = n_vertical;
  a.tilt_deg = s.num("tilt_deg");
  a.null_forming = nulls;
  a.epsilon = s.num("epsilon");
  const std::string t = s.str("depth_target_db");
  a.depth_target_db = t == "auto" ? std::numeric_limits<double>::quiet_NaN() : parse_num(t);
  a.validate();
  return a;
}

inline RunOutput run_cellular(const Scenario& s, int threads) {
  const CellDeployment d = build_deployment(s);
  const auto antennas = s.list("antennas");
  const bool nulls = s.flag("null_forming");
  std::vector<CellularCase> cases;
  CellularCase base{"nonstr", build_array(s, 8, false), DuplexMode::NonSTR, false, {}};
  cases.push_back(base);
  for (double n : antennas) {
    const int N = static_cast<int>(n);
    const std::string tag = std::to_string(N);
    if (s.flag("include_no_null")) cases.push_back({"str" + tag, build_array(s, N, false), DuplexMode::STR, false, {}});
    cases.push_back({nulls ? "str" + tag + "_null" : "str" + tag, build_array(s, N, nulls), DuplexMode::STR, false, {}});
  }
  RunOutput out;
  Table& g = out.add("gains.csv", {"p_lo", "case", "dl_mean", "dl_edge", "ul_mean", "ul_edge", "dl_mean_pct", "dl_edge_pct",
                                   "ul_mean_pct", "ul_edge_pct"});
  Table& q = out.add("cdf.csv", {"p_lo", "case", "quantile", "dl", "ul"});
  auto quant = [](std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * (v.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    return i + 1 < v.size() ? v[i] + (pos - i) * (v[i + 1] - v[i]) : v[i];
  };
  long pi = 0;
  for (double p : s.list("p_lo")) {
    CellularStudy st;
    st.deployment = d;
    st.p_range = {p, s.num("p_hi")};
    st.n_snapshots = s.integer("n_snapshots");
    st.seed = Rng::derive(s.seed(), pi++);
    st.threads = threads;
    const auto reps = run_study(st, cases);
    const CapacityStats bd = reps[0].dl_stats(), bu = reps[0].ul_stats();
    auto emit = [&](const std::string& name, const CapacityReport& r) {
      const CapacityStats sd = r.dl_stats(), su = r.ul_stats();
      const GainCell gd = gains(sd, bd), gu = gains(su, bu);
      g.add({fmt(p), name, fmt(sd.mean), fmt(sd.edge), fmt(su.mean), fmt(su.edge), fmt(gd.mean_pct), fmt(gd.edge_pct),
             fmt(gu.mean_pct), fmt(gu.edge_pct)});
      for (int k = 1; k < 100; ++k)
        q.add({fmt(p), name, fmt(k / 100.0), fmt(quant(r.dl, k / 100.0)), fmt(quant(r.ul, k / 100.0))});
    };
    for (std::size_t c = 0; c < cases.size(); ++c) emit(cases[c].name, reps[c]);
    if (s.flag("resource_blocks"))
      for (double n : antennas) {
        const int N = static_cast<int>(n);
        const auto rb = resource_block_optimize(st, build_array(s, N, nulls), ResourceBlockSearch::standard(), reps[0]);
        CellularCase rc{"rb" + std::to_string(N), build_array(s, N, nulls), DuplexMode::STR, true, rb.policy};
        emit(rc.name, run_study(st, {rc})[0]);
      }
  }
  const long draws = s.integer("bs_bs_draws");
  if (draws > 0) {
    Table& b = out.add("bs_bs.csv", {"case", "noise_floor_dbm", "median_dbm", "p95_dbm", "fraction_below_floor"});
    const double floor_dbm = d.noise_dbm(d.nf_bs_db);
    for (std::size_t c = 1; c < cases.size(); ++c) {
      const auto v = first_tier_bs_bs_dbm(d, make_antenna(d, cases[c].array), static_cast<int>(draws), s.seed());
      long below = 0;
      for (double x : v) below += x < floor_dbm;
      b.add({cases[c].name, fmt(floor_dbm), fmt(quant(v, 0.5)), fmt(quant(v, 0.95)), fmt(static_cast<double>(below) / v.size())});
    }
  }
  return out;
}

/// Dispatch to the scenario's engine. Library errors propagate.
inline RunOutput run_engine(const Scenario& s, int threads = 1) {
  switch (s.engine) {
    case Engine::Wiener: return run_wiener(s);
    case Engine::Canceller: return run_canceller(s);
    case Engine::Mac: return run_mac_engine(s, threads);
    case Engine::Cellular: return run_cellular(s, threads);
  }
  throw ParseError("no engine");
}

// ---------------------------------------------------------------------
// Writing results

inline std::vector<std::pair<std::string, std::string>> csv_meta(const Scenario& s, const std::string& extra = {}) {
  std::vector<std::pair<std::string, std::string>> m = {
      {"engine", to_string(s.engine)},
      {"scenario_hash", hex32(crc32(s.resolved_text()))},
      {"seed", s.str("seed")},
      {"version", kVersion},
  };
  if (!s.str("name").empty()) m.insert(m.begin(), {"name", s.str("name")});
  if (!extra.empty()) m.push_back({"sweep", extra});
  return m;
}

inline std::filesystem::path default_output_dir(const Scenario& s) {
  if (!s.str("output_dir").empty()) return s.str("output_dir");
  const std::string stem = std::filesystem::path(s.origin).stem().string();
  const char* env = std::getenv("STRSIM_OUTPUT_DIR");
  const std::filesystem::path root = env && *env ? env : "out";
  return root / (stem.empty() ? "run" : stem);
}

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << body;
}

/// Writes every table, the resolved config and manifest.json.
inline nlohmann::json write_outputs(const Scenario& s, const RunOutput& out, const std::filesystem::path& dir, double wall_s,
                                    const std::string& sweep_note = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::object();
  const std::string cfg = s.resolved_text();
  write_text(dir / "resolved.cfg", cfg);
  files["resolved.cfg"] = hex32(crc32(cfg));
  for (const auto& [name, t] : out.files) {
    const std::string body = to_csv(t, csv_meta(s, sweep_note));
    write_text(dir / name, body);
    files[name] = hex32(crc32(body));
  }
  nlohmann::json m;
  m["scenario_hash"] = hex32(crc32(cfg));
  m["toolkit_version"] = kVersion;
  m["engine"] = to_string(s.engine);
  m["files"] = files;
  m["wall_clock_s"] = wall_s;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return m;
}

// ---------------------------------------------------------------------
// Sweeps

struct Axis {
  std::string key;
  std::vector<double> values;
};

/// "key=v1,v2,..." or "key=lo:hi:n[:log]"
inline Axis parse_axis(const std::string& spec, const Scenario& s) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ParseError("axis must be key=values");
  Axis a{trim(spec.substr(0, eq)), parse_num_list(trim(spec.substr(eq + 1)))};
  const ParamSpec* p = s.spec(a.key);
  if (!p) throw ParseError("unknown axis key '" + a.key + "'");
  if (p->kind != Kind::Num && p->kind != Kind::Int && p->kind != Kind::NumList)
    throw ParseError("axis key '" + a.key + "' is not numeric");
  if (p->kind == Kind::Int)
    for (double v : a.values)
      if (v != std::floor(v)) throw ParseError("axis key '" + a.key + "' takes integers");
  return a;
}

/// Runs every axis point with seed ^ index and merges the first table of
/// each point, axis column first, sorted by axis value then index.
inline Table run_sweep(const Scenario& base, const Axis& axis, int parallelism) {
  const long n = static_cast<long>(axis.values.size());
  std::vector<Table> parts(n);
  const bool is_int = base.spec(axis.key)->kind == Kind::Int;
  parallel_for(n, parallelism, [&](long i) {
    Scenario s = base;
    s.set(axis.key, is_int ? std::to_string(static_cast<long>(axis.values[i])) : fmt(axis.values[i]));
    s.set("seed", std::to_string(base.seed() ^ static_cast<std::uint64_t>(i)));
    parts[i] = run_engine(s, 1).files.front().second;
  });
  std::vector<long> order(n);
  for (long i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) { return axis.values[a] < axis.values[b]; });
  Table merged;
  merged.columns.push_back(axis.key);
  if (n) merged.columns.insert(merged.columns.end(), parts[0].columns.begin(), parts[0].columns.end());
  for (long i : order)
    for (const auto& r : parts[i].rows) {
      std::vector<std::string> row = {fmt(axis.values[i])};
      row.insert(row.end(), r.begin(), r.end());
      merged.add(row);
    }
  return merged;
}

}  // namespace str::io
