#pragma once

#include <filesystem>
#include <string>

#include "fedsim/config.hpp"
#include "fedsim/simulator.hpp"

namespace fedsim {

/// Everything needed to reproduce a run bit-identically: the fully-resolved
/// config (the master seed lives inside it) plus the artifact version. The
/// output directory is deliberately not part of the serialized manifest, so a
/// replay into a different directory yields byte-identical files.
struct RunManifest {
    ExperimentConfig config;
    std::filesystem::path out_dir;
};

/// Number formatting used in every CSV cell: 9 significant digits.
std::string format_number(double v);

/// Writes rounds.csv, detector.csv, quantiles.csv and manifest.json into
/// manifest.out_dir (created if missing). Row order is fixed:
/// replication-major, then round/interval, then agent. Throws IoError with the
/// path on write failure.
void emit_results(const ExperimentResult& result, const RunManifest& manifest);

/// Reads a manifest.json back into a validated config.
ExperimentConfig parse_manifest(const std::filesystem::path& path);

}  // namespace fedsim
