#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctdse/measurement.hpp"
#include "ctdse/network.hpp"
#include "ctdse/powerflow.hpp"

namespace ctdse {

enum class CaseFormat { json, matpower_like };

CaseFormat case_format_from_string(const std::string& name);

struct LoadOptions {
  /// Reject unknown fields; otherwise they are reported in `warnings`.
  bool strict = true;
  std::vector<std::string>* warnings = nullptr;
};

/// Reads a single network. Bus ids are re-indexed 0..N-1 in file order and the
/// file ids are kept in NetworkCase::external_ids.
NetworkCase load_case(const std::filesystem::path& path, CaseFormat format, const LoadOptions& options = {});
NetworkCase load_case(const std::filesystem::path& path, const LoadOptions& options = {});

/// Parses a JSON case document; `location` prefixes error messages.
NetworkCase parse_case_json(const std::string& text, const std::string& location, const LoadOptions& options = {});
/// Parses MATPOWER-style text (mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch).
NetworkCase parse_case_matpower(const std::string& text, const std::string& location);

struct LoadedIntegratedCase {
  /// Harmonized onto the transmission per-unit base.
  IntegratedCase integrated;
  /// Placement from the file's "placement" section, if present.
  std::optional<ExperimentPlans> plans;
};

/// Reads an integrated T&D file: {transmission, feeders, boundary_links, placement?}.
/// Networks may be inline objects or {"path", "format"} references relative to the file.
LoadedIntegratedCase load_integrated(const std::filesystem::path& path, const LoadOptions& options = {});

/// Placement section of an integrated file, or the default plans when absent.
ExperimentPlans plans_or_default(const LoadedIntegratedCase& loaded);

/// JSON dump of a global power-flow solution (per-bus v, theta by external id; head powers).
std::string power_flow_to_json(const IntegratedCase& integrated, const GlobalPowerFlow& solution);

}  // namespace ctdse
