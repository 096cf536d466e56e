#include "chordfit/certest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "chordfit/chordio.hpp"
#include "chordfit/error.hpp"

namespace chordfit::certest {

namespace fs = std::filesystem;

namespace {

std::vector<std::pair<std::size_t, std::string>> fit_files(const fs::path& dir) {
  static const std::regex kName(R"(fit_([0-9]+)\.out)");
  std::vector<std::pair<std::size_t, std::string>> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, kName)) out.emplace_back(std::stoul(m[1].str()), name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string g9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Line numbers of the data (non-comment, non-blank) lines, in order.
std::vector<std::size_t> data_line_numbers(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t number = 1;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    const auto first = line.find_first_not_of(" \t\r");
    if (first != std::string_view::npos && line[first] != '#') out.push_back(number);
    ++number;
    pos = end + 1;
  }
  return out;
}

class FileComparer {
 public:
  FileComparer(CertestReport& report, const ToleranceSpec& tol, std::string file)
      : report_(report), tol_(tol), file_(std::move(file)) {}

  void number(std::size_t line, const std::string& field, double a, double b) {
    if (std::isnan(a) && std::isnan(b)) return;
    if (std::isnan(a) || std::isnan(b)) {
      violate(line, field, g9(a), g9(b));
      return;
    }
    if (a == b) {
      report_.deviations[field];
      return;
    }
    const double diff = std::fabs(a - b);
    const double scale = std::max(std::fabs(a), std::fabs(b));
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    auto& dev = report_.deviations[field];
    if (std::isfinite(diff)) {
      dev.worst_abs = std::max(dev.worst_abs, diff);
      dev.worst_rel = std::max(dev.worst_rel, rel);
    }
    const Tolerance t = tol_.for_field(field);
    if (!(diff <= t.abs + t.rel * scale)) violate(line, field, g9(a), g9(b));
  }

  void exact(std::size_t line, const std::string& field, const std::string& a, const std::string& b) {
    if (a != b) violate(line, field, a, b);
  }

  void violate(std::size_t line, const std::string& field, std::string a, std::string b) {
    report_.violations.push_back({file_, line, field, std::move(a), std::move(b)});
    failed_ = true;
  }

  bool failed() const { return failed_; }

 private:
  CertestReport& report_;
  const ToleranceSpec& tol_;
  std::string file_;
  bool failed_ = false;
};

std::string status_of(const chordio::FitOutputRecord& r) {
  return r.converged ? std::string(to_string(*r.converged)) : "failed";
}

}  // namespace

Tolerance ToleranceSpec::for_field(const std::string& field) const {
  auto it = overrides.find(field);
  return it == overrides.end() ? defaults : it->second;
}

void ToleranceSpec::validate() const {
  auto ok = [](const Tolerance& t) { return t.rel >= 0.0 && t.abs >= 0.0; };
  if (!ok(defaults)) throw Error(Errc::domain, "tolerances must be >= 0");
  for (const auto& [name, t] : overrides) {
    if (!ok(t)) throw Error(Errc::domain, "tolerance for " + name + " must be >= 0");
  }
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::io, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const fs::path& reference_dir) {
  const fs::path p = reference_dir / kManifestName;
  if (!fs::exists(p)) throw Error(Errc::io, "no manifest in " + reference_dir.string());
  std::istringstream in(chordio::read_file(p));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.name >> e.digest >> e.bytes)) throw ParseError(number, "bad manifest line");
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t generate_reference(const fs::path& run_output_dir, const fs::path& reference_dir,
                               bool overwrite) {
  const auto files = fit_files(run_output_dir);
  if (files.empty()) {
    throw Error(Errc::nothing_to_store, "no fit_<k>.out files in " + run_output_dir.string());
  }
  if (fs::exists(reference_dir / kManifestName) || !fit_files(reference_dir).empty()) {
    if (!overwrite) {
      throw Error(Errc::reference_exists, reference_dir.string() + " already holds a reference");
    }
    for (const auto& [k, name] : fit_files(reference_dir)) fs::remove(reference_dir / name);
    fs::remove(reference_dir / kManifestName);
  }
  std::error_code ec;
  fs::create_directories(reference_dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + reference_dir.string() + ": " + ec.message());

  std::string manifest;
  for (const auto& [k, name] : files) {
    const std::string content = chordio::read_file(run_output_dir / name);
    chordio::write_file(reference_dir / name, content);
    manifest += name + ' ' + sha256_hex(content) + ' ' + std::to_string(content.size()) + '\n';
  }
  chordio::write_file(reference_dir / kManifestName, manifest);
  return files.size();
}

CertestReport compare(const fs::path& reference_dir, const fs::path& test_dir, const ToleranceSpec& tol) {
  tol.validate();
  const auto manifest = read_manifest(reference_dir);
  CertestReport report;

  for (const auto& entry : manifest) {
    FileVerdict verdict{entry.name, true, {}};
    FileComparer cmp(report, tol, entry.name);
    const fs::path test_path = test_dir / entry.name;
    if (!fs::exists(test_path)) {
      report.missing.push_back(entry.name);
      verdict.pass = false;
      verdict.note = "missing from test output";
      report.files.push_back(std::move(verdict));
      continue;
    }
    ++report.compared_files;
    const std::string ref_text = chordio::read_file(reference_dir / entry.name);
    const std::string test_text = chordio::read_file(test_path);
    if (ref_text.size() != entry.bytes || sha256_hex(ref_text) != entry.digest) {
      cmp.violate(0, "digest", entry.digest, sha256_hex(ref_text));
      verdict.pass = false;
      verdict.note = "reference does not match its manifest digest";
      report.files.push_back(std::move(verdict));
      continue;
    }

    std::vector<chordio::FitOutputRecord> ref, test;
    try {
      ref = chordio::parse_fit_output(ref_text);
      test = chordio::parse_fit_output(test_text);
    } catch (const Error& e) {
      cmp.violate(0, "parse", "", e.what());
      verdict.pass = false;
      verdict.note = "unparseable";
      report.files.push_back(std::move(verdict));
      continue;
    }

    const auto lines = data_line_numbers(test_text);
    if (ref.size() != test.size()) {
      cmp.violate(0, "record_count", std::to_string(ref.size()), std::to_string(test.size()));
    }
    for (std::size_t i = 0; i < std::min(ref.size(), test.size()); ++i) {
      const auto& a = ref[i];
      const auto& b = test[i];
      const std::size_t ln = i < lines.size() ? lines[i] : 0;
      cmp.exact(ln, "chord", a.chord_id, b.chord_id);
      cmp.number(ln, "time", a.time, b.time);
      if (a.lines.size() != b.lines.size()) {
        cmp.violate(ln, "nlines", std::to_string(a.lines.size()), std::to_string(b.lines.size()));
      }
      for (std::size_t k = 0; k < std::min(a.lines.size(), b.lines.size()); ++k) {
        const auto& la = a.lines[k];
        const auto& lb = b.lines[k];
        cmp.number(ln, "A", la.amplitude, lb.amplitude);
        cmp.number(ln, "mu", la.center, lb.center);
        cmp.number(ln, "sigma", la.width, lb.width);
        cmp.number(ln, "dA", la.amplitude_err, lb.amplitude_err);
        cmp.number(ln, "dmu", la.center_err, lb.center_err);
        cmp.number(ln, "dsigma", la.width_err, lb.width_err);
      }
      cmp.number(ln, "chi2", a.chi2, b.chi2);
      cmp.exact(ln, "dof", std::to_string(a.dof), std::to_string(b.dof));
      cmp.exact(ln, "converged", status_of(a), status_of(b));
      cmp.number(ln, "velocity", a.velocity, b.velocity);
      cmp.number(ln, "temperature", a.temperature, b.temperature);
      cmp.number(ln, "radiance", a.radiance, b.radiance);
    }
    verdict.pass = !cmp.failed();
    report.files.push_back(std::move(verdict));
  }

  for (const auto& [k, name] : fit_files(test_dir)) {
    const bool known = std::any_of(manifest.begin(), manifest.end(),
                                   [&](const ManifestEntry& e) { return e.name == name; });
    if (!known) report.extra.push_back(name);
  }
  report.pass = report.missing.empty() && report.violations.empty();
  return report;
}

double CertestReport::worst_abs() const {
  double w = 0.0;
  for (const auto& [f, d] : deviations) w = std::max(w, d.worst_abs);
  return w;
}

double CertestReport::worst_rel() const {
  double w = 0.0;
  for (const auto& [f, d] : deviations) w = std::max(w, d.worst_rel);
  return w;
}

std::string report_to_json(const CertestReport& report) {
  nlohmann::ordered_json j;
  j["pass"] = report.pass;
  j["compared_files"] = report.compared_files;
  j["missing"] = report.missing;
  j["extra"] = report.extra;
  auto files = nlohmann::ordered_json::array();
  for (const auto& f : report.files) {
    files.push_back({{"name", f.name}, {"pass", f.pass}, {"note", f.note}});
  }
  j["files"] = std::move(files);
  auto dev = nlohmann::ordered_json::object();
  for (const auto& [field, d] : report.deviations) {
    dev[field] = {{"worst_abs", d.worst_abs}, {"worst_rel", d.worst_rel}};
  }
  j["deviations"] = std::move(dev);
  auto vio = nlohmann::ordered_json::array();
  for (const auto& v : report.violations) {
    vio.push_back({{"file", v.file}, {"line", v.line}, {"field", v.field},
                   {"reference", v.reference}, {"test", v.test}});
  }
  j["violations"] = std::move(vio);
  return j.dump(2) + "\n";
}

std::string report_to_table(const CertestReport& report) {
  std::ostringstream os;
  char buf[256];
  os << "certest: " << (report.pass ? "PASS" : "FAIL") << "  files compared " << report.compared_files
     << ", missing " << report.missing.size() << ", extra " << report.extra.size() << ", violations "
     << report.violations.size() << "\n";
  if (!report.deviations.empty()) {
    std::snprintf(buf, sizeof buf, "  %-12s %14s %14s\n", "field", "worst abs", "worst rel");
    os << buf;
    for (const auto& [field, d] : report.deviations) {
      std::snprintf(buf, sizeof buf, "  %-12s %14.6g %14.6g\n", field.c_str(), d.worst_abs, d.worst_rel);
      os << buf;
    }
  }
  for (const auto& m : report.missing) os << "  missing " << m << "\n";
  for (const auto& e : report.extra) os << "  extra   " << e << "\n";
  if (!report.violations.empty()) {
    std::snprintf(buf, sizeof buf, "  %-14s %6s %-12s %-20s %-20s\n", "file", "line", "field", "reference", "test");
    os << buf;
    for (const auto& v : report.violations) {
      std::snprintf(buf, sizeof buf, "  %-14s %6zu %-12s %-20s %-20s\n", v.file.c_str(), v.line,
                    v.field.c_str(), v.reference.c_str(), v.test.c_str());
      os << buf;
    }
  }
  return os.str();
}

}  // namespace chordfit::certest
