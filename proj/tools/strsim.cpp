// strsim: run scenario files and sweeps.
//
//   strsim run <cfg> [--set key=value]... [--out dir] [-j N]
//   strsim sweep <cfg> --axis key=lo:hi:n[:log] [--set ...] [--out dir] [-j N]
//   strsim list-presets
//   strsim validate <cfg> [--set ...]
//
// Exit codes: 0 ok, 2 parse/usage error, 3 engine error.

#include <CLI11.hpp>

#include <iostream>

#include "str/io.hpp"

namespace fs = std::filesystem;
using namespace str;

namespace {

fs::path preset_dir() {
  if (const char* e = std::getenv("STRSIM_PRESET_DIR"); e && *e) return e;
#ifdef STRSIM_PRESET_DIR
  return STRSIM_PRESET_DIR;
#else
  return "presets";
#endif
}

io::Scenario load(const std::string& path, const std::vector<std::string>& sets) {
  io::Scenario s = io::Scenario::load(path);
  for (const auto& kv : sets) s.set_override(kv);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int list_presets() {
  const fs::path dir = preset_dir();
  if (!fs::is_directory(dir)) {
    std::cerr << "no preset directory at " << dir << "\n";
    return 2;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".cfg") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::ifstream f(p);
    std::string first;
    std::getline(f, first);
    if (first.rfind("#", 0) == 0) first = io::trim(first.substr(1));
    else first.clear();
    std::cout << p.stem().string() << "\t" << first << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simultaneous transmit/receive simulation toolkit"};
  app.require_subcommand(1);
  std::string cfg, out_dir, axis;
  std::vector<std::string> sets;
  int jobs = 1;

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("scenario", cfg, "scenario file")->required();
  run->add_option("--set", sets, "key=value override")->take_all();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("-j,--jobs", jobs, "worker threads")->check(CLI::Range(1, 1024));

  auto* sweep = app.add_subcommand("sweep", "run a scenario over one numeric axis");
  sweep->add_option("scenario", cfg, "scenario file")->required();
  sweep->add_option("--axis", axis, "key=v1,v2,... or key=lo:hi:n[:log]")->required();
  sweep->add_option("--set", sets, "key=value override")->take_all();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("-j,--jobs", jobs, "parallel points")->check(CLI::Range(1, 1024));

  auto* list = app.add_subcommand("list-presets", "list bundled scenario files");
  auto* val = app.add_subcommand("validate", "parse a scenario and print the resolved config");
  val->add_option("scenario", cfg, "scenario file")->required();
  val->add_option("--set", sets, "key=value override")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (list->parsed()) return list_presets();

  io::Scenario s;
  try {
    s = load(cfg, sets);
  } catch (const io::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (val->parsed()) {
    std::cout << s.resolved_text();
    return 0;
  }
  const fs::path dir = out_dir.empty() ? io::default_output_dir(s) : fs::path(out_dir);

  try {
    const auto t0 = std::chrono::steady_clock::now();
    if (run->parsed()) {
      const io::RunOutput r = io::run_engine(s, jobs);
      io::write_outputs(s, r, dir, seconds_since(t0));
    } else {
      io::Axis a;
      try {
        a = io::parse_axis(axis, s);
      } catch (const io::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
      }
      io::RunOutput r;
      r.files.push_back({"sweep.csv", io::run_sweep(s, a, jobs)});
      io::write_outputs(s, r, dir, seconds_since(t0), axis);
    }
    std::cout << dir.string() << "\n";
  } catch (const io::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "engine error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
