#include "chordfit/chordio.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "chordfit/error.hpp"

namespace chordfit::chordio {

namespace fs = std::filesystem;

namespace {

struct Line {
  std::size_t number;  // 1-based
  std::size_t offset;  // byte offset of first character
  std::string_view raw;
  std::vector<std::string_view> tokens;
};

std::vector<std::string_view> tokenize(std::string_view s) {
  if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  std::size_t number = 1;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    lines.push_back({number++, pos, raw, tokenize(raw)});
    pos = end + 1;
  }
  return lines;
}

double parse_double(std::string_view tok, std::size_t line, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(line, "expected a number for " + std::string(what) + ", got '" +
                               std::string(tok) + "'");
  }
  return v;
}

double parse_finite(std::string_view tok, std::size_t line, std::string_view what) {
  const double v = parse_double(tok, line, what);
  if (!std::isfinite(v)) throw ParseError(line, std::string(what) + " must be finite");
  return v;
}

template <typename Int>
Int parse_int(std::string_view tok, std::size_t line, std::string_view what) {
  Int v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(line, "expected an integer for " + std::string(what) + ", got '" +
                               std::string(tok) + "'");
  }
  return v;
}

std::vector<double> parse_list(std::string_view tok, std::size_t line, std::string_view what) {
  std::vector<double> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t comma = tok.find(',', pos);
    out.push_back(parse_finite(tok.substr(pos, comma == std::string_view::npos ? tok.size() - pos
                                                                              : comma - pos),
                               line, what));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string fmt_shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string fmt_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

bool starts_chord(const Line& l) {
  return l.raw.starts_with("CHORD") &&
         (l.raw.size() == 5 || std::isspace(static_cast<unsigned char>(l.raw[5])));
}

GenRecipe parse_gen(const Line& l, std::size_t first_kv) {
  GenRecipe g;
  std::optional<std::vector<double>> amp, mu, sig;
  std::optional<double> b0, b1;
  std::optional<std::string_view> noise, seed, grid;
  for (std::size_t t = first_kv; t < l.tokens.size(); ++t) {
    const auto tok = l.tokens[t];
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(l.number, "expected KEY=VALUE in GEN, got '" + std::string(tok) + "'");
    }
    const auto key = tok.substr(0, eq);
    const auto val = tok.substr(eq + 1);
    if (key == "A") amp = parse_list(val, l.number, "A");
    else if (key == "MU") mu = parse_list(val, l.number, "MU");
    else if (key == "SIG") sig = parse_list(val, l.number, "SIG");
    else if (key == "B0") b0 = parse_finite(val, l.number, "B0");
    else if (key == "B1") b1 = parse_finite(val, l.number, "B1");
    else if (key == "NOISE") noise = val;
    else if (key == "SEED") seed = val;
    else if (key == "GRID") grid = val;
    else throw ParseError(l.number, "unknown GEN key '" + std::string(key) + "'");
  }
  if (!amp || !mu || !sig || !b0 || !noise || !seed || !grid) {
    throw ParseError(l.number, "GEN needs A, MU, SIG, B0, NOISE, SEED and GRID");
  }
  if (amp->size() != mu->size() || amp->size() != sig->size()) {
    throw ParseError(l.number, "GEN A, MU and SIG lists differ in length");
  }
  g.truth.baseline = {*b0};
  if (b1) g.truth.baseline.push_back(*b1);
  for (std::size_t k = 0; k < amp->size(); ++k) g.truth.lines.push_back({(*amp)[k], (*mu)[k], (*sig)[k]});
  try {
    g.truth.validate();
  } catch (const Error& e) {
    throw ParseError(l.number, e.what());
  }
  if (*noise == "none") g.noise = NoiseKind::none;
  else if (*noise == "sqrt") g.noise = NoiseKind::sqrt_gaussian;
  else throw ParseError(l.number, "NOISE must be none or sqrt");
  g.seed = parse_int<std::uint64_t>(*seed, l.number, "SEED");

  const auto c1 = grid->find(',');
  const auto c2 = c1 == std::string_view::npos ? c1 : grid->find(',', c1 + 1);
  if (c2 == std::string_view::npos) throw ParseError(l.number, "GRID must be min,max,npix");
  g.grid_min = parse_finite(grid->substr(0, c1), l.number, "GRID min");
  g.grid_max = parse_finite(grid->substr(c1 + 1, c2 - c1 - 1), l.number, "GRID max");
  g.npix = parse_int<std::size_t>(grid->substr(c2 + 1), l.number, "GRID npix");
  if (!(g.grid_max > g.grid_min) || !(g.grid_min > 0.0) || g.npix < WavelengthGrid::kMinPixels) {
    throw ParseError(l.number, "GRID needs 0 < min < max and at least 4 pixels");
  }
  return g;
}

ChordBlock parse_stanza(const std::vector<Line>& lines, std::size_t begin, std::size_t end,
                        std::string_view text) {
  ChordBlock block;
  const Line& head = lines[begin];
  if (head.tokens.size() != 2) throw ParseError(head.number, "expected 'CHORD <id>'");
  block.chord_id = std::string(head.tokens[1]);
  const std::size_t stop = end < lines.size() ? lines[end].offset : text.size();
  block.text = std::string(text.substr(head.offset, stop - head.offset));

  std::optional<double> lambda0, ionrest;
  for (std::size_t i = begin + 1; i < end; ++i) {
    const Line& l = lines[i];
    if (l.tokens.empty()) continue;
    const auto kw = l.tokens[0];
    if (kw == "TIME") {
      if (l.tokens.size() < 3) throw ParseError(l.number, "expected 'TIME <s> GEN|DATA ...'");
      Timeslice ts;
      ts.time = parse_finite(l.tokens[1], l.number, "TIME");
      if (!block.timeslices.empty() && ts.time < block.timeslices.back().time) {
        throw ParseError(l.number, "timeslice times must be non-decreasing");
      }
      if (l.tokens[2] == "GEN") {
        ts.source = parse_gen(l, 3);
      } else if (l.tokens[2] == "DATA") {
        if (l.tokens.size() != 4) throw ParseError(l.number, "expected 'TIME <s> DATA <npix>'");
        const auto npix = parse_int<std::size_t>(l.tokens[3], l.number, "npix");
        std::vector<double> lam, counts, sigma;
        lam.reserve(npix);
        while (lam.size() < npix) {
          if (++i >= end) throw ParseError(l.number, "DATA block ends before " + std::to_string(npix) + " rows");
          const Line& row = lines[i];
          if (row.tokens.empty()) continue;
          if (row.tokens.size() != 3) throw ParseError(row.number, "expected '<lambda> <counts> <sigma>'");
          lam.push_back(parse_finite(row.tokens[0], row.number, "lambda"));
          counts.push_back(parse_double(row.tokens[1], row.number, "counts"));
          sigma.push_back(parse_finite(row.tokens[2], row.number, "sigma"));
        }
        try {
          ts.source = Spectrum(WavelengthGrid(std::move(lam)), std::move(counts), std::move(sigma));
        } catch (const Error& e) {
          throw ParseError(l.number, e.what());
        }
      } else {
        throw ParseError(l.number, "TIME must be followed by GEN or DATA");
      }
      block.timeslices.push_back(std::move(ts));
      continue;
    }
    if (l.tokens.size() % 2 != 0) throw ParseError(l.number, "expected KEY value pairs");
    for (std::size_t t = 0; t < l.tokens.size(); t += 2) {
      const auto key = l.tokens[t];
      const auto val = l.tokens[t + 1];
      if (key == "LAMBDA0") lambda0 = parse_finite(val, l.number, "LAMBDA0");
      else if (key == "IONREST") ionrest = parse_finite(val, l.number, "IONREST");
      else if (key == "SIGINSTR") block.line_ref.sigma_instr = parse_finite(val, l.number, "SIGINSTR");
      else if (key == "NLINES") block.n_lines = parse_int<std::size_t>(val, l.number, "NLINES");
      else if (key == "DILATE") block.dilate_seconds = parse_finite(val, l.number, "DILATE");
      else throw ParseError(l.number, "unknown keyword '" + std::string(key) + "'");
    }
  }
  if (!lambda0 || !ionrest) throw ParseError(head.number, "chord " + block.chord_id + " needs LAMBDA0 and IONREST");
  block.line_ref.lambda0 = *lambda0;
  block.line_ref.ion_rest_energy = *ionrest;
  try {
    block.line_ref.validate();
  } catch (const Error& e) {
    throw ParseError(head.number, e.what());
  }
  if (block.n_lines < 1) throw ParseError(head.number, "NLINES must be >= 1");
  if (block.dilate_seconds < 0.0) throw ParseError(head.number, "DILATE must be >= 0");
  if (block.timeslices.empty()) throw ParseError(head.number, "chord " + block.chord_id + " has no TIME entries");
  return block;
}

}  // namespace

Spectrum GenRecipe::synthesize() const {
  return chordfit::synthesize(truth, WavelengthGrid::uniform(grid_min, grid_max, npix), noise, seed);
}

Spectrum Timeslice::spectrum() const {
  if (const auto* g = std::get_if<GenRecipe>(&source)) return g->synthesize();
  return std::get<Spectrum>(source);
}

DischargeInput parse_discharge(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (starts_chord(lines[i])) starts.push_back(i);
  }
  if (starts.empty()) throw Error(Errc::empty_input, "no CHORD stanza found");

  DischargeInput input;
  input.header = std::string(text.substr(0, lines[starts.front()].offset));
  bool have_shot = false;
  for (std::size_t i = 0; i < starts.front(); ++i) {
    const Line& l = lines[i];
    if (!l.tokens.empty() && l.tokens[0] == "SHOT") {
      if (l.tokens.size() != 2) throw ParseError(l.number, "expected 'SHOT <int>'");
      input.shot = parse_int<long long>(l.tokens[1], l.number, "SHOT");
      have_shot = true;
    }
  }
  if (!have_shot) throw ParseError(1, "missing SHOT line before the first CHORD");

  std::set<std::string> seen;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const std::size_t end = s + 1 < starts.size() ? starts[s + 1] : lines.size();
    ChordBlock block = parse_stanza(lines, starts[s], end, text);
    if (!seen.insert(block.chord_id).second) {
      throw ParseError(lines[starts[s]].number, "duplicate chord id " + block.chord_id);
    }
    input.chords.push_back(std::move(block));
  }
  return input;
}

fs::path chord_input_name(std::size_t k) { return "chord_" + std::to_string(k) + ".in"; }
fs::path fit_output_name(std::size_t k) { return "fit_" + std::to_string(k) + ".out"; }

std::vector<fs::path> split_chords(const DischargeInput& input, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> paths;
  paths.reserve(input.chords.size());
  for (std::size_t k = 1; k <= input.chords.size(); ++k) {
    const fs::path p = out_dir / chord_input_name(k);
    write_file(p, input.header + input.chords[k - 1].text);
    paths.push_back(p);
  }
  return paths;
}

std::string format_header(long long shot, std::string_view comment) {
  std::string out = "SHOT " + std::to_string(shot) + "\n";
  if (!comment.empty()) out += "# " + std::string(comment) + "\n";
  return out;
}

std::string format_stanza(const ChordBlock& block) {
  std::ostringstream os;
  os << "CHORD " << block.chord_id << "\n";
  os << "  LAMBDA0 " << fmt_shortest(block.line_ref.lambda0) << "  IONREST "
     << fmt_shortest(block.line_ref.ion_rest_energy) << "  SIGINSTR "
     << fmt_shortest(block.line_ref.sigma_instr) << "  NLINES " << block.n_lines;
  if (block.dilate_seconds > 0.0) os << "  DILATE " << fmt_shortest(block.dilate_seconds);
  os << "\n";
  for (const auto& ts : block.timeslices) {
    os << "  TIME " << fmt_shortest(ts.time);
    if (const auto* g = std::get_if<GenRecipe>(&ts.source)) {
      auto join = [&](auto field) {
        std::string s;
        for (std::size_t k = 0; k < g->truth.lines.size(); ++k) {
          if (k) s += ',';
          s += fmt_shortest(field(g->truth.lines[k]));
        }
        return s;
      };
      os << " GEN A=" << join([](const GaussianLine& l) { return l.amplitude; })
         << " MU=" << join([](const GaussianLine& l) { return l.center; })
         << " SIG=" << join([](const GaussianLine& l) { return l.width; })
         << " B0=" << fmt_shortest(g->truth.baseline.at(0));
      if (g->truth.baseline.size() > 1) os << " B1=" << fmt_shortest(g->truth.baseline[1]);
      os << " NOISE=" << (g->noise == NoiseKind::none ? "none" : "sqrt") << " SEED=" << g->seed
         << " GRID=" << fmt_shortest(g->grid_min) << ',' << fmt_shortest(g->grid_max) << ','
         << g->npix << "\n";
    } else {
      const auto& sp = std::get<Spectrum>(ts.source);
      os << " DATA " << sp.size() << "\n";
      for (std::size_t i = 0; i < sp.size(); ++i) {
        os << "    " << fmt_shortest(sp.grid()[i]) << ' ' << fmt_shortest(sp.counts()[i]) << ' '
           << fmt_shortest(sp.sigma()[i]) << "\n";
      }
    }
  }
  return os.str();
}

std::string format_fit_output(std::string_view chord_id, const std::vector<FitOutputRecord>& records) {
  std::string out = "# chord " + std::string(chord_id) + "\n";
  out += "# time nlines {A mu sigma dA dmu dsigma}*nlines chi2 dof converged velocity temperature radiance\n";
  for (const auto& r : records) {
    if (r.chord_id != chord_id) {
      throw Error(Errc::mixed_chord, "record for chord " + r.chord_id + " in output for chord " +
                                         std::string(chord_id));
    }
    out += fmt_g9(r.time) + ' ' + std::to_string(r.lines.size());
    for (const auto& l : r.lines) {
      for (double v : {l.amplitude, l.center, l.width, l.amplitude_err, l.center_err, l.width_err}) {
        out += ' ' + fmt_g9(v);
      }
    }
    out += ' ' + fmt_g9(r.chi2) + ' ' + std::to_string(r.dof) + ' ' +
           std::string(r.converged ? to_string(*r.converged) : "failed");
    for (double v : {r.velocity, r.temperature, r.radiance}) out += ' ' + fmt_g9(v);
    out += '\n';
  }
  return out;
}

fs::path write_fit_output(std::string_view chord_id, const std::vector<FitOutputRecord>& records,
                          std::size_t k, const fs::path& out_dir) {
  const std::string text = format_fit_output(chord_id, records);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + out_dir.string() + ": " + ec.message());
  const fs::path p = out_dir / fit_output_name(k);
  write_file(p, text);
  return p;
}

std::vector<FitOutputRecord> parse_fit_output(std::string_view text) {
  std::vector<FitOutputRecord> records;
  std::optional<std::string> chord;
  for (const Line& l : split_lines(text)) {
    std::string_view raw = l.raw;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (raw.starts_with("#")) {
      const auto toks = tokenize(raw.substr(1));
      if (toks.size() == 2 && toks[0] == "chord") {
        if (chord) throw ParseError(l.number, "second chord header");
        chord = std::string(toks[1]);
      }
      continue;
    }
    if (l.tokens.empty()) continue;
    if (!chord) throw ParseError(l.number, "data line before '# chord <id>' header");
    const auto& t = l.tokens;
    if (t.size() < 2) throw ParseError(l.number, "truncated fit record");
    FitOutputRecord r;
    r.chord_id = *chord;
    r.time = parse_double(t[0], l.number, "time");
    const auto nl = parse_int<std::size_t>(t[1], l.number, "nlines");
    const std::size_t expect = 2 + 6 * nl + 6;
    if (t.size() != expect) {
      throw ParseError(l.number, "fit record has " + std::to_string(t.size()) + " fields, expected " +
                                     std::to_string(expect));
    }
    std::size_t p = 2;
    for (std::size_t k = 0; k < nl; ++k) {
      LineFit lf;
      lf.amplitude = parse_double(t[p++], l.number, "A");
      lf.center = parse_double(t[p++], l.number, "mu");
      lf.width = parse_double(t[p++], l.number, "sigma");
      lf.amplitude_err = parse_double(t[p++], l.number, "dA");
      lf.center_err = parse_double(t[p++], l.number, "dmu");
      lf.width_err = parse_double(t[p++], l.number, "dsigma");
      r.lines.push_back(lf);
    }
    r.chi2 = parse_double(t[p++], l.number, "chi2");
    r.dof = parse_int<std::size_t>(t[p++], l.number, "dof");
    const auto status = t[p++];
    if (status != "failed") {
      r.converged = convergence_from_string(status);
      if (!r.converged) throw ParseError(l.number, "unknown convergence '" + std::string(status) + "'");
    }
    r.velocity = parse_double(t[p++], l.number, "velocity");
    r.temperature = parse_double(t[p++], l.number, "temperature");
    r.radiance = parse_double(t[p++], l.number, "radiance");
    records.push_back(std::move(r));
  }
  return records;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

}  // namespace chordfit::chordio
