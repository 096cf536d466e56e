#pragma once

// Golden-file regression harness for fit_<k>.out files.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace chordfit::certest {

inline constexpr const char* kManifestName = "MANIFEST";

struct Tolerance {
  double rel = 1e-6;
  double abs = 1e-9;
};

/// Numeric fields pass iff |a - b| <= abs + rel * max(|a|, |b|). Overrides are
/// keyed by field name: time, A, mu, sigma, dA, dmu, dsigma, chi2, velocity,
/// temperature, radiance.
struct ToleranceSpec {
  Tolerance defaults;
  std::map<std::string, Tolerance> overrides;

  Tolerance for_field(const std::string& field) const;
  void validate() const;
};

struct ManifestEntry {
  std::string name;
  std::string digest;  // SHA-256, hex
  std::size_t bytes = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& reference_dir);
std::string sha256_hex(std::string_view data);

/// Copies every fit_<k>.out from run_output_dir into reference_dir and writes
/// the manifest. Refuses to touch an existing reference unless overwrite is set.
std::size_t generate_reference(const std::filesystem::path& run_output_dir,
                               const std::filesystem::path& reference_dir, bool overwrite = false);

struct Violation {
  std::string file;
  std::size_t line = 0;  // data line number in the file, 0 for file-level problems
  std::string field;
  std::string reference;
  std::string test;
};

struct FieldDeviation {
  double worst_abs = 0.0;
  double worst_rel = 0.0;
};

struct FileVerdict {
  std::string name;
  bool pass = true;
  std::string note;
};

struct CertestReport {
  std::size_t compared_files = 0;
  std::vector<FileVerdict> files;
  std::map<std::string, FieldDeviation> deviations;
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  std::vector<Violation> violations;
  bool pass = false;

  double worst_abs() const;
  double worst_rel() const;
};

CertestReport compare(const std::filesystem::path& reference_dir, const std::filesystem::path& test_dir,
                      const ToleranceSpec& tol = {});

std::string report_to_json(const CertestReport& report);
std::string report_to_table(const CertestReport& report);

}  // namespace chordfit::certest
