#include "causalstream/io.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace causalstream {

namespace {

using nlohmann::json;

std::string_view trim_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

double parse_double(std::string_view field, long line, const char* what) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw CsvError(std::string("cannot parse ") + what + " '" + std::string(field) +
                           "' at line " + std::to_string(line),
                       line);
    }
    if (!std::isfinite(v)) {
        throw CsvError(std::string(what) + " is not finite at line " + std::to_string(line), line);
    }
    return v;
}

std::vector<std::string_view> split_fields(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = s.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

// FNV-1a 64 over the canonical byte stream of the numeric payload.
class Checksum {
public:
    void add_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001B3ULL;
        }
    }
    void add(double v) { add_bytes(&v, sizeof(v)); }
    void add(std::int64_t v) { add_bytes(&v, sizeof(v)); }
    void add(const std::string& s) { add_bytes(s.data(), s.size()); }
    void add(const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) add(v[i]);
    }
    void add(const Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) add(m(i, j));
        }
    }

    std::string hex() const {
        char buf[20];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_));
        return buf;
    }

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

std::string state_checksum(const OnlineState& engine, const std::optional<MonitorState>& monitor) {
    Checksum c;
    c.add(to_string(engine.spec.family));
    c.add(to_string(engine.spec.outcome));
    c.add(static_cast<std::int64_t>(engine.spec.p));
    c.add(engine.theta);
    c.add(engine.s_cum);
    c.add(engine.m_cum);
    c.add(static_cast<std::int64_t>(engine.n_total));
    c.add(static_cast<std::int64_t>(engine.batch_count));
    if (monitor) {
        c.add(static_cast<std::int64_t>(monitor->config.total_analyses));
        c.add(monitor->config.alpha);
        c.add(to_string(monitor->config.spending));
        c.add(monitor->config.null_delta);
        for (double t : monitor->config.info_fractions) c.add(t);
        for (double z : monitor->boundaries) c.add(z);
        for (double z : monitor->z_history) c.add(z);
        c.add(to_string(monitor->decision));
    }
    return c.hex();
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index d, const char* what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != d) {
        throw StateError(std::string("state file: bad ") + what);
    }
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d) {
            throw StateError(std::string("state file: bad ") + what);
        }
        for (Eigen::Index k = 0; k < d; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
    return m;
}

void atomic_write(const std::string& path, const std::string& payload) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw StateError("cannot open temporary state file " + tmp);
    const bool wrote = std::fwrite(payload.data(), 1, payload.size(), f) == payload.size() &&
                       std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
    std::fclose(f);
    if (!wrote) {
        std::remove(tmp.c_str());
        throw StateError("failed writing temporary state file " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw StateError("failed to move temporary state file into place at " + path);
    }
}

}  // namespace

DataBatch read_batch_csv(const std::string& path, std::optional<OutcomeType> outcome,
                         long batch_index) {
    std::ifstream in(path);
    if (!in) throw CsvError("cannot open batch file " + path, 0);

    std::string line;
    if (!std::getline(in, line)) throw CsvError("empty batch file " + path, 1);
    const auto header = split_fields(trim_cr(line));
    if (header.size() < 3 || header[0] != "y" || header[1] != "a") {
        throw CsvError("header must be y,a,x1,...,xp (got '" + line + "')", 1);
    }
    const int q = static_cast<int>(header.size()) - 2;
    for (int k = 0; k < q; ++k) {
        const std::string expected = "x" + std::to_string(k + 1);
        if (header[static_cast<std::size_t>(k + 2)] != expected) {
            throw CsvError("header column " + std::to_string(k + 3) + " must be " + expected, 1);
        }
    }

    std::vector<double> ys;
    std::vector<int> as;
    std::vector<double> xs;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view row = trim_cr(line);
        if (row.empty()) continue;
        const auto fields = split_fields(row);
        if (static_cast<int>(fields.size()) != q + 2) {
            throw CsvError("expected " + std::to_string(q + 2) + " fields, got " +
                               std::to_string(fields.size()) + " at line " + std::to_string(lineno),
                           lineno);
        }
        const double y = parse_double(fields[0], lineno, "outcome y");
        if (fields[1] != "0" && fields[1] != "1") {
            throw CsvError("treatment a must be 0 or 1 at line " + std::to_string(lineno), lineno);
        }
        if (outcome && *outcome == OutcomeType::Binary && y != 0.0 && y != 1.0) {
            throw CsvError("binary outcome y must be 0 or 1 at line " + std::to_string(lineno),
                           lineno);
        }
        ys.push_back(y);
        as.push_back(fields[1] == "1" ? 1 : 0);
        for (int k = 0; k < q; ++k) {
            xs.push_back(parse_double(fields[static_cast<std::size_t>(k + 2)], lineno, "covariate"));
        }
    }
    if (ys.empty()) throw CsvError("batch file " + path + " has no data rows", lineno);

    const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
    Eigen::VectorXd y(n);
    Eigen::VectorXi a(n);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(n, q + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = ys[static_cast<std::size_t>(i)];
        a[i] = as[static_cast<std::size_t>(i)];
        x(i, 0) = 1.0;
        for (int k = 0; k < q; ++k) {
            x(i, k + 1) = xs[static_cast<std::size_t>(i) * static_cast<std::size_t>(q) +
                             static_cast<std::size_t>(k)];
        }
    }
    return DataBatch(batch_index, std::move(y), std::move(a), std::move(x));
}

void save_state(const std::string& path, const OnlineState& engine,
                const std::optional<MonitorState>& monitor) {
    json j;
    j["format_version"] = 1;
    j["spec"] = {{"family", to_string(engine.spec.family)},
                 {"outcome", to_string(engine.spec.outcome)},
                 {"p", engine.spec.p}};
    json theta = json::array();
    for (Eigen::Index i = 0; i < engine.theta.size(); ++i) theta.push_back(engine.theta[i]);
    j["theta"] = std::move(theta);
    j["s_cum"] = matrix_to_json(engine.s_cum);
    j["m_cum"] = matrix_to_json(engine.m_cum);
    j["n_total"] = engine.n_total;
    j["batch_count"] = engine.batch_count;
    if (monitor) {
        j["monitor"] = {{"config",
                         {{"total_analyses", monitor->config.total_analyses},
                          {"alpha", monitor->config.alpha},
                          {"spending", to_string(monitor->config.spending)},
                          {"null_delta", monitor->config.null_delta},
                          {"info_fractions", monitor->config.info_fractions}}},
                        {"boundaries", monitor->boundaries},
                        {"z_history", monitor->z_history},
                        {"decision", to_string(monitor->decision)}};
    }
    j["checksum"] = state_checksum(engine, monitor);
    atomic_write(path, j.dump(2) + "\n");
}

PersistedState load_state(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StateError("cannot open state file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw StateError("state file " + path + " is not valid JSON: " + e.what());
    }

    try {
        PersistedState out;
        out.format_version = j.at("format_version").get<int>();
        if (out.format_version != 1) {
            throw StateError("unsupported state format version " +
                             std::to_string(out.format_version));
        }
        const json& spec = j.at("spec");
        out.engine.spec.family = family_from_string(spec.at("family").get<std::string>());
        out.engine.spec.outcome = outcome_from_string(spec.at("outcome").get<std::string>());
        out.engine.spec.p = spec.at("p").get<int>();
        out.engine.spec.validate();
        const Eigen::Index d = out.engine.spec.dim();

        const json& theta = j.at("theta");
        if (static_cast<Eigen::Index>(theta.size()) != d) {
            throw StateError("state file: theta length does not match spec");
        }
        out.engine.theta.resize(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            out.engine.theta[i] = theta[static_cast<std::size_t>(i)].get<double>();
        }
        out.engine.s_cum = matrix_from_json(j.at("s_cum"), d, "s_cum");
        out.engine.m_cum = matrix_from_json(j.at("m_cum"), d, "m_cum");
        out.engine.n_total = j.at("n_total").get<long>();
        out.engine.batch_count = j.at("batch_count").get<long>();

        if (j.contains("monitor")) {
            const json& jm = j.at("monitor");
            MonitorState m;
            const json& cfg = jm.at("config");
            m.config.total_analyses = cfg.at("total_analyses").get<int>();
            m.config.alpha = cfg.at("alpha").get<double>();
            m.config.spending = spending_from_string(cfg.at("spending").get<std::string>());
            m.config.null_delta = cfg.at("null_delta").get<double>();
            m.config.info_fractions = cfg.at("info_fractions").get<std::vector<double>>();
            m.config.validate();
            m.boundaries = jm.at("boundaries").get<std::vector<double>>();
            m.z_history = jm.at("z_history").get<std::vector<double>>();
            m.decision = decision_from_string(jm.at("decision").get<std::string>());
            if (m.boundaries.size() != static_cast<std::size_t>(m.config.total_analyses)) {
                throw StateError("state file: boundary count does not match total_analyses");
            }
            out.monitor = std::move(m);
        }

        const std::string stored = j.at("checksum").get<std::string>();
        const std::string computed = state_checksum(out.engine, out.monitor);
        if (stored != computed) {
            throw StateError("state file " + path + " failed its checksum (stored " + stored +
                             ", computed " + computed + "); refusing to load");
        }
        return out;
    } catch (const json::exception& e) {
        throw StateError("state file " + path + " is malformed: " + e.what());
    }
}

FileLock::FileLock(const std::string& state_path) {
    const std::string lock_path = state_path + ".lock";
    fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw StateError("cannot open lock file " + lock_path);
    if (::flock(fd_, LOCK_EX) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw StateError("cannot lock " + lock_path);
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}  // namespace causalstream
