#pragma once

// Run manifests: a config file whose [run] section records provenance and
// whose command section holds every effective setting. Passing the manifest
// back as --config reproduces the run.

#include <adnorm/config.hpp>
#include <adnorm/io.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace adnorm {

inline constexpr const char* kVersion = "1.0.0";

/// Entries of `c` under `section.`, keys unchanged.
inline Config section_of(const Config& c, const std::string& section) {
  Config out;
  const std::string prefix = section + ".";
  for (const auto& [k, v] : c.values())
    if (k.rfind(prefix, 0) == 0) out.set(k, v);
  return out;
}

inline std::uint64_t section_hash(const Config& c, const std::string& section) {
  return section_of(c, section).hash();
}

struct Manifest {
  std::string command;
  std::string section;
  Config effective;  // keys under `section.`
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out;
  std::vector<std::string> outputs;  // relative to `out`
  double wall_seconds = 0.0;

  void write(const std::filesystem::path& path) const {
    auto f = io::open_output(path);
    f << "# adnorm run manifest; rerun with --config <this file>\n";
    f << "[run]\n";
    f << "command = " << command << "\n";
    f << "section = " << section << "\n";
    f << "version = " << kVersion << "\n";
    f << "config_hash = " << hex64(section_hash(effective, section)) << "\n";
    f << "seed = " << seed << "\n";
    f << "threads = " << threads << "\n";
    f << "out = " << out << "\n";
    std::string list;
    for (std::size_t i = 0; i < outputs.size(); ++i) list += (i ? "," : "") + outputs[i];
    f << "outputs = " << list << "\n";
    f << "wall_seconds = " << io::fmt6(wall_seconds) << "\n";
    f << section_of(effective, section).canonical();
  }
};

}  // namespace adnorm
