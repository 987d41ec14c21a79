#include "crm/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crm/errors.hpp"
#include "crm/rng.hpp"

namespace crm {

void LoggedDataset::validate() const {
  const Eigen::Index rows = actions.size();
  if (rows < 1) throw ValidationError("dataset is empty");
  if (contexts.rows() != rows || propensities.size() != rows || costs.size() != rows)
    throw ValidationError("dataset containers disagree on row count");
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double p = propensities[i];
    if (!(p > 0.0) || !std::isfinite(p))
      throw ValidationError("propensity must be positive and finite at row " + std::to_string(i));
    if (!std::isfinite(actions[i]) || !std::isfinite(costs[i]))
      throw ValidationError("non-finite action or cost at row " + std::to_string(i));
  }
  if (!contexts.allFinite()) throw ValidationError("non-finite context value");
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_whole_file(const std::string& path) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw ValidationError("cannot open " + path);
    std::string out;
    char buf[1 << 16];
    int got;
    while ((got = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(got));
    const bool bad = got < 0;
    gzclose(f);
    if (bad) throw ValidationError("gzip read error in " + path);
    return out;
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double parse_double(std::string_view tok, std::size_t line_no) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ValidationError("malformed number '" + std::string(tok) + "' at line " + std::to_string(line_no));
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace

LoggedDataset load_csv(const std::string& path) {
  const std::string content = read_whole_file(path);

  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    std::string_view line(content.data() + pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    pos = nl + 1;
  }
  if (lines.empty()) throw ValidationError(path + ": empty file");

  const auto header = split_fields(lines[0]);
  if (header.size() < 4) throw ValidationError(path + ": header must be x0..x{d-1},action,propensity,cost");
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 3;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j)] != "x" + std::to_string(j))
      throw ValidationError(path + ": expected column x" + std::to_string(j));
  }
  if (header[header.size() - 3] != "action" || header[header.size() - 2] != "propensity" ||
      header[header.size() - 1] != "cost")
    throw ValidationError(path + ": header must end with action,propensity,cost");

  const Eigen::Index n = static_cast<Eigen::Index>(lines.size()) - 1;
  if (n < 1) throw ValidationError(path + ": no data rows");

  LoggedDataset ds;
  ds.contexts.resize(n, d);
  ds.actions.resize(n);
  ds.propensities.resize(n);
  ds.costs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    const auto fields = split_fields(lines[static_cast<std::size_t>(i) + 1]);
    if (fields.size() != header.size())
      throw ValidationError(path + ": wrong field count at line " + std::to_string(line_no));
    for (Eigen::Index j = 0; j < d; ++j)
      ds.contexts(i, j) = parse_double(fields[static_cast<std::size_t>(j)], line_no);
    ds.actions[i] = parse_double(fields[fields.size() - 3], line_no);
    ds.propensities[i] = parse_double(fields[fields.size() - 2], line_no);
    ds.costs[i] = parse_double(fields[fields.size() - 1], line_no);
    if (!(ds.propensities[i] > 0.0))
      throw ValidationError(path + ": propensity must be > 0 at line " + std::to_string(line_no));
  }
  ds.validate();
  return ds;
}

void save_csv(const LoggedDataset& ds, const std::string& path) {
  ds.validate();
  std::string out;
  out.reserve(static_cast<std::size_t>(ds.n()) * 64);
  for (Eigen::Index j = 0; j < ds.dim(); ++j) out += "x" + std::to_string(j) + ",";
  out += "action,propensity,cost\n";
  char buf[32];
  auto append = [&](double v, char sep) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
    out += sep;
  };
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) append(ds.contexts(i, j), ',');
    append(ds.actions[i], ',');
    append(ds.propensities[i], ',');
    append(ds.costs[i], '\n');
  }
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw ValidationError("cannot open " + path + " for writing");
    const int wrote = gzwrite(f, out.data(), static_cast<unsigned>(out.size()));
    gzclose(f);
    if (wrote != static_cast<int>(out.size())) throw ValidationError("gzip write error in " + path);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ValidationError("write error in " + path);
}

LoggedDataset take_rows(const LoggedDataset& ds, const std::vector<Eigen::Index>& rows) {
  LoggedDataset out;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  out.contexts.resize(m, ds.dim());
  out.actions.resize(m);
  out.propensities.resize(m);
  out.costs.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    out.contexts.row(i) = ds.contexts.row(r);
    out.actions[i] = ds.actions[r];
    out.propensities[i] = ds.propensities[r];
    out.costs[i] = ds.costs[r];
  }
  return out;
}

DataSplit split(const LoggedDataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  ds.validate();
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  const Eigen::Index n = ds.n();
  const Eigen::Index n_train = static_cast<Eigen::Index>(std::llround(fractions[0] * static_cast<double>(n)));
  const Eigen::Index n_valid = static_cast<Eigen::Index>(std::llround(fractions[1] * static_cast<double>(n)));
  const Eigen::Index n_test = n - n_train - n_valid;
  if (n_train < 1 || n_valid < 1 || n_test < 1)
    throw ValidationError("dataset too small for the requested split");

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  shuffle(perm, rng);

  DataSplit out;
  out.seed = seed;
  out.train = take_rows(ds, {perm.begin(), perm.begin() + n_train});
  out.valid = take_rows(ds, {perm.begin() + n_train, perm.begin() + n_train + n_valid});
  out.test = take_rows(ds, {perm.begin() + n_train + n_valid, perm.end()});
  return out;
}

}  // namespace crm
