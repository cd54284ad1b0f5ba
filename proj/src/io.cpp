#include "sfpca/io.hpp"

#include "sfpca/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <unordered_map>

namespace sfpca {

namespace {

constexpr const char* kModelTag = "sfpca-model";
constexpr int kModelVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE && std::isfinite(out);
}

[[noreturn]] void csv_error(const std::string& source, std::size_t line, const std::string& what) {
  std::ostringstream msg;
  msg << source << ":" << line << ": " << what;
  throw DataError(msg.str());
}

struct Row {
  double t, y, sd;
};

// --- model file helpers ---------------------------------------------------

void write_values(std::ostringstream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out << ' ' << format_double(data[i]);
}

void write_basis(std::ostringstream& out, const std::string& name, const SplineBasis& b) {
  out << "basis " << name << ' ' << b.degree() << ' ' << b.n_interior_knots() << ' '
      << format_double(b.domain().lo) << ' ' << format_double(b.domain().hi) << ' '
      << (b.has_transform() ? 1 : 0) << '\n';
  if (b.has_transform()) {
    const Mat& T = b.transform();
    out << "transform " << T.rows() << ' ' << T.cols();
    for (Eigen::Index i = 0; i < T.rows(); ++i)
      for (Eigen::Index j = 0; j < T.cols(); ++j) out << ' ' << format_double(T(i, j));
    out << '\n';
  }
}

class LineReader {
public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::istringstream next(const std::string& keyword) {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file, expected '" + keyword + "'");
    ++line_no_;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key != keyword) fail("expected '" + keyword + "', found '" + key + "'");
    return ls;
  }

  template <class T>
  T read(std::istringstream& ls, const std::string& what) {
    std::string tok;
    if (!(ls >> tok)) fail("missing " + what);
    if constexpr (std::is_same_v<T, double>) {
      double v;
      if (!parse_double(tok, v)) fail("bad number for " + what + ": '" + tok + "'");
      return v;
    } else {
      char* end = nullptr;
      const long long v = std::strtoll(tok.c_str(), &end, 10);
      if (end != tok.c_str() + tok.size()) fail("bad integer for " + what + ": '" + tok + "'");
      return static_cast<T>(v);
    }
  }

  void finish(std::istringstream& ls) {
    std::string extra;
    if (ls >> extra) fail("trailing data '" + extra + "'");
  }

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream msg;
    msg << "model file line " << line_no_ << ": " << what;
    throw DataError(msg.str());
  }

private:
  std::istringstream in_;
  int line_no_ = 0;
};

SplineBasis read_basis(LineReader& rd, const std::string& name) {
  auto ls = rd.next("basis");
  std::string got;
  ls >> got;
  if (got != name) rd.fail("expected basis '" + name + "', found '" + got + "'");
  const int degree = rd.read<int>(ls, "degree");
  const int n_interior = rd.read<int>(ls, "interior knot count");
  const double lo = rd.read<double>(ls, "domain start");
  const double hi = rd.read<double>(ls, "domain end");
  const int has_t = rd.read<int>(ls, "transform flag");
  rd.finish(ls);
  SplineBasis b = make_bspline(degree, n_interior, {lo, hi});
  if (has_t) {
    auto ts = rd.next("transform");
    const auto rows = rd.read<Eigen::Index>(ts, "rows");
    const auto cols = rd.read<Eigen::Index>(ts, "cols");
    if (rows != b.size() || cols != b.size()) rd.fail("transform size does not match the basis");
    Mat T(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) T(i, j) = rd.read<double>(ts, "transform entry");
    rd.finish(ts);
    b = b.with_transform(T);
  }
  return b;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << content;
  if (!out) throw DataError("write failed for '" + path + "'");
}

} // namespace

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<FunctionalSample> read_samples_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  // Header, skipping leading blank lines and a UTF-8 byte-order mark.
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!trim(line).empty()) break;
  }
  const std::vector<std::string> header = split_csv(line);
  const bool with_sd = header == std::vector<std::string>{"id", "t", "y", "z", "sd"};
  if (!with_sd && header != std::vector<std::string>{"id", "t", "y", "z"})
    csv_error(source, line_no, "header must be id,t,y,z or id,t,y,z,sd");
  const std::size_t n_fields = with_sd ? 5 : 4;

  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<Row>> rows;
  std::vector<double> covariates;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != n_fields) {
      std::ostringstream msg;
      msg << "expected " << n_fields << " fields, found " << f.size();
      csv_error(source, line_no, msg.str());
    }
    if (f[0].empty()) csv_error(source, line_no, "empty id");
    Row row{0.0, 0.0, 0.0};
    double z = 0.0;
    if (!parse_double(f[1], row.t)) csv_error(source, line_no, "bad time '" + f[1] + "'");
    if (!parse_double(f[2], row.y)) csv_error(source, line_no, "bad value '" + f[2] + "'");
    if (!parse_double(f[3], z)) csv_error(source, line_no, "bad covariate '" + f[3] + "'");
    if (with_sd) {
      if (f[4].empty()) csv_error(source, line_no, "missing sd; the sd column must be filled on every row");
      if (!parse_double(f[4], row.sd) || !(row.sd > 0.0))
        csv_error(source, line_no, "sd must be a positive number, found '" + f[4] + "'");
    }
    auto [it, inserted] = index.try_emplace(f[0], ids.size());
    if (inserted) {
      ids.push_back(f[0]);
      rows.emplace_back();
      covariates.push_back(z);
    } else if (covariates[it->second] != z) {
      csv_error(source, line_no, "covariate of '" + f[0] + "' differs from its first row");
    }
    rows[it->second].push_back(row);
  }
  if (ids.empty()) throw DataError(source + ": no data rows");

  std::vector<FunctionalSample> out(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto& r = rows[k];
    std::stable_sort(r.begin(), r.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    FunctionalSample& s = out[k];
    s.id = ids[k];
    s.covariate = covariates[k];
    const auto n = static_cast<Eigen::Index>(r.size());
    s.times.resize(n);
    s.values.resize(n);
    if (with_sd) s.noise_sd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      s.times(i) = r[i].t;
      s.values(i) = r[i].y;
      if (with_sd) s.noise_sd(i) = r[i].sd;
    }
  }
  return out;
}

std::vector<FunctionalSample> read_samples_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_samples_csv(in, path);
}

void write_samples_csv(std::ostream& out, const std::vector<FunctionalSample>& samples,
                       double fill_sd) {
  const bool all_sd = std::all_of(samples.begin(), samples.end(),
                                  [](const FunctionalSample& s) { return s.has_noise_sd(); });
  const bool with_sd = fill_sd > 0.0 || (all_sd && !samples.empty());
  out << (with_sd ? "id,t,y,z,sd\n" : "id,t,y,z\n");
  for (const auto& s : samples) {
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      out << s.id << ',' << format_double(s.times(i)) << ',' << format_double(s.values(i)) << ','
          << format_double(s.covariate);
      if (with_sd) out << ',' << format_double(s.has_noise_sd() ? s.noise_sd(i) : fill_sd);
      out << '\n';
    }
  }
}

void write_samples_csv_file(const std::string& path, const std::vector<FunctionalSample>& samples,
                            double fill_sd) {
  std::ostringstream ss;
  write_samples_csv(ss, samples, fill_sd);
  write_file(path, ss.str());
}

std::string serialize_model(const FittedModel& model) {
  const ModelBases& b = model.bases;
  const ModelParams& p = model.params;
  std::ostringstream out;
  out << kModelTag << ' ' << kModelVersion << '\n';
  write_basis(out, "a", b.a);
  write_basis(out, "u", b.u);
  write_basis(out, "b", b.b);
  write_basis(out, "v", b.v);
  out << "theta " << p.theta.size();
  write_values(out, p.theta.data(), p.theta.size());
  out << '\n';
  out << "gamma " << b.m() << ' ' << b.q() << ' ' << p.r();
  for (Eigen::Index i = 0; i < p.gamma.rows(); ++i)
    for (Eigen::Index j = 0; j < p.gamma.cols(); ++j) out << ' ' << format_double(p.gamma(i, j));
  out << '\n';
  out << "log_sigma2 " << format_double(p.log_sigma2) << '\n';
  const Lambdas& l = model.lambdas;
  out << "lambdas " << format_double(l.t_cov) << ' ' << format_double(l.z_cov) << ' '
      << format_double(l.t_mean) << ' ' << format_double(l.z_mean) << '\n';
  const TrainingInfo& t = model.training;
  out << "training " << t.n_curves << ' ' << t.n_observations << ' ' << format_double(t.t_range.lo)
      << ' ' << format_double(t.t_range.hi) << ' ' << format_double(t.z_range.lo) << ' '
      << format_double(t.z_range.hi) << '\n';
  std::string body = out.str();
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
  body += "checksum ";
  body += sum;
  body += '\n';
  return body;
}

FittedModel deserialize_model(const std::string& text) {
  const auto pos = text.rfind("checksum ");
  if (pos == std::string::npos || (pos > 0 && text[pos - 1] != '\n'))
    throw DataError("model file has no checksum line");
  const std::string body = text.substr(0, pos);
  const std::string stated = trim(std::string_view(text).substr(pos + 9));
  char expect[32];
  std::snprintf(expect, sizeof expect, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
  if (stated != expect) throw DataError("model file checksum mismatch; the file is corrupt or edited");

  LineReader rd(body);
  auto head = rd.next(kModelTag);
  const int version = rd.read<int>(head, "version");
  if (version != kModelVersion)
    rd.fail("unsupported model format version " + std::to_string(version));

  FittedModel model{ModelBases{read_basis(rd, "a"), read_basis(rd, "u"), read_basis(rd, "b"),
                               read_basis(rd, "v")},
                    {}, {}, {}, {}};
  const ModelBases& b = model.bases;
  ModelParams& p = model.params;

  auto th = rd.next("theta");
  const auto n_theta = rd.read<Eigen::Index>(th, "theta length");
  if (n_theta != b.l() * b.p()) rd.fail("theta length does not match the mean bases");
  p.theta.resize(n_theta);
  for (Eigen::Index i = 0; i < n_theta; ++i) p.theta(i) = rd.read<double>(th, "theta entry");
  rd.finish(th);

  auto gs = rd.next("gamma");
  const int m = rd.read<int>(gs, "m"), q = rd.read<int>(gs, "q"), r = rd.read<int>(gs, "r");
  if (m != b.m() || q != b.q()) rd.fail("Gamma dimensions do not match the covariance bases");
  if (r < 1 || r > m) rd.fail("rank out of range");
  p.gamma.resize(static_cast<Eigen::Index>(m) * q, r);
  for (Eigen::Index i = 0; i < p.gamma.rows(); ++i)
    for (Eigen::Index j = 0; j < r; ++j) p.gamma(i, j) = rd.read<double>(gs, "Gamma entry");
  rd.finish(gs);

  auto ss = rd.next("log_sigma2");
  p.log_sigma2 = rd.read<double>(ss, "log_sigma2");
  rd.finish(ss);

  auto ls = rd.next("lambdas");
  Lambdas& l = model.lambdas;
  l.t_cov = rd.read<double>(ls, "lambda");
  l.z_cov = rd.read<double>(ls, "lambda");
  l.t_mean = rd.read<double>(ls, "lambda");
  l.z_mean = rd.read<double>(ls, "lambda");
  rd.finish(ls);

  auto ts = rd.next("training");
  TrainingInfo& t = model.training;
  t.n_curves = rd.read<std::size_t>(ts, "curve count");
  t.n_observations = rd.read<std::size_t>(ts, "observation count");
  t.t_range.lo = rd.read<double>(ts, "time range");
  t.t_range.hi = rd.read<double>(ts, "time range");
  t.z_range.lo = rd.read<double>(ts, "covariate range");
  t.z_range.hi = rd.read<double>(ts, "covariate range");
  rd.finish(ts);
  return model;
}

void save_model(const std::string& path, const FittedModel& model) {
  write_file(path, serialize_model(model));
}

FittedModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    out[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

void write_trace_csv(const std::string& path, const FitDiagnostics& diagnostics) {
  std::ostringstream out;
  out << "iter,block,objective\n";
  for (const auto& e : diagnostics.trace)
    out << e.iter << ',' << e.block << ',' << format_double(e.objective) << '\n';
  write_file(path, out.str());
}

} // namespace sfpca
