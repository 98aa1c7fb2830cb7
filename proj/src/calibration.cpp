#include "seqread/calibration.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "seqread/error.hpp"
#include "seqread/montecarlo.hpp"
#include "seqread/parallel.hpp"
#include "seqread/random.hpp"

namespace seqread {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

struct ParsedFile {
    std::optional<Trajectory> traj;
    std::optional<State> label;
};

ParsedFile parse_file(const fs::path& path, std::vector<std::string>& warnings) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    ParsedFile out;
    Trajectory traj;
    bool have_dt = false;
    std::string line;
    std::int64_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            const std::string body = trim(std::string_view(t).substr(1));
            const auto eq = body.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = trim(std::string_view(body).substr(0, eq));
            const std::string value = trim(std::string_view(body).substr(eq + 1));
            if (key == "dt_seconds") {
                char* end = nullptr;
                const double dt = std::strtod(value.c_str(), &end);
                if (end == value.c_str() || *end != '\0' || !(dt > 0.0) || !std::isfinite(dt)) fail("bad dt_seconds value");
                traj.dt = dt;
                have_dt = true;
            } else if (key == "prepared") {
                if (value == "plus") out.label = State::plus;
                else if (value == "minus") out.label = State::minus;
                else fail("prepared must be plus or minus");
            }
            continue;
        }
        if (!have_dt) fail("count before '# dt_seconds=' header");
        if (t[0] == '-') fail("negative count");
        std::uint32_t v = 0;
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc() || ptr != t.data() + t.size()) fail("malformed count '" + t + "'");
        traj.counts.push_back(v);
    }
    if (line_no == 0) {
        warnings.push_back(path.string() + ": empty file");
        return out;
    }
    if (!have_dt) throw DataError(path.string() + ": missing '# dt_seconds=' header");
    if (traj.counts.empty()) {
        warnings.push_back(path.string() + ": no counts");
        return out;
    }
    out.traj = std::move(traj);
    return out;
}

}  // namespace

IngestResult ingest_trajectories(const fs::path& source) {
    std::vector<fs::path> files;
    if (fs::is_directory(source)) {
        for (const auto& e : fs::directory_iterator(source)) {
            if (e.is_regular_file() && e.path().extension() == ".counts") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
    } else if (fs::exists(source)) {
        files.push_back(source);
    } else {
        throw DataError("no such file or directory: " + source.string());
    }
    IngestResult result;
    for (const auto& f : files) {
        ParsedFile parsed = parse_file(f, result.warnings);
        if (!parsed.traj) continue;
        if (result.trajectories.empty()) {
            result.dt = parsed.traj->dt;
        } else if (std::abs(parsed.traj->dt - result.dt) > 1e-12 * result.dt) {
            throw DataError(f.string() + ": dt differs from earlier files");
        }
        result.trajectories.push_back(std::move(*parsed.traj));
        result.labels.push_back(parsed.label);
        result.sources.push_back(f.string());
    }
    return result;
}

void write_trajectory(std::ostream& out, const Trajectory& traj, std::optional<State> label) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", traj.dt);
    out << "# dt_seconds=" << buf << '\n';
    if (label) out << "# prepared=" << to_string(*label) << '\n';
    std::string chunk;
    chunk.reserve(1 << 16);
    for (const std::uint32_t c : traj.counts) {
        char num[16];
        const auto [ptr, ec] = std::to_chars(num, num + sizeof num, c);
        chunk.append(num, ptr);
        chunk.push_back('\n');
        if (chunk.size() > (1 << 15)) {
            out << chunk;
            chunk.clear();
        }
    }
    out << chunk;
}

Trajectory rebin(const Trajectory& traj, int factor) {
    if (factor < 1) throw std::invalid_argument("rebin factor must be positive");
    Trajectory out;
    out.dt = traj.dt * factor;
    const std::size_t n = traj.counts.size() / static_cast<std::size_t>(factor);
    out.counts.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t s = 0;
        for (int j = 0; j < factor; ++j) s += traj.counts[i * static_cast<std::size_t>(factor) + static_cast<std::size_t>(j)];
        out.counts[i] = s;
    }
    return out;
}

std::vector<Trajectory> simulate_dataset(const UpdateMatrixSet& matrices, int n_traj, double duration,
                                         std::uint64_t seed, unsigned threads) {
    if (n_traj < 0) throw std::invalid_argument("n_traj must be nonnegative");
    if (!(duration > 0.0)) throw std::invalid_argument("duration must be positive");
    const auto n_bins = static_cast<std::int64_t>(std::llround(duration / matrices.rates().dt));
    const StateVector start = stationary_state(matrices.rates());
    std::vector<Trajectory> out(static_cast<std::size_t>(n_traj));
    // One trajectory per task; chunking only groups indices.
    parallel_chunks(n_traj, resolve_threads(threads), [&](std::int64_t begin, std::int64_t end, std::int64_t) {
        for (std::int64_t i = begin; i < end; ++i) {
            CounterStream rng(seed, StreamDomain::calibration, 0, static_cast<std::uint64_t>(i));
            out[static_cast<std::size_t>(i)] = generate_trajectory(matrices, start, n_bins, rng);
        }
    });
    return out;
}

void CountHistogram::add(std::uint32_t count, std::int64_t times) {
    frequency[count] += times;
    total_bins += times;
}

CountHistogram CountHistogram::from_counts(std::span<const std::uint32_t> counts, double bin_width) {
    CountHistogram h;
    h.bin_width = bin_width;
    for (const std::uint32_t c : counts) h.add(c);
    return h;
}

namespace {

double log_poisson(double k, double mean) {
    if (mean <= 0.0) return k == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    return k * std::log(mean) - mean - std::lgamma(k + 1.0);
}

}  // namespace

MixtureFit fit_poisson_mixture(const CountHistogram& hist, int max_iterations) {
    if (hist.frequency.size() < 2) throw std::invalid_argument("histogram needs at least two distinct counts");
    if (!(hist.bin_width > 0.0)) throw std::invalid_argument("histogram bin width must be positive");
    const double n_total = static_cast<double>(hist.total_bins);

    // Quartile means from the sorted sample implied by the histogram.
    auto tail_mean = [&](bool upper) {
        const double quota = 0.25 * n_total;
        double taken = 0.0, sum = 0.0;
        auto take = [&](std::uint32_t c, std::int64_t f) {
            const double t = std::min(static_cast<double>(f), quota - taken);
            if (t <= 0.0) return;
            taken += t;
            sum += t * c;
        };
        if (upper) {
            for (auto it = hist.frequency.rbegin(); it != hist.frequency.rend(); ++it) take(it->first, it->second);
        } else {
            for (const auto& [c, f] : hist.frequency) take(c, f);
        }
        return sum / taken;
    };
    double overall = 0.0;
    for (const auto& [c, f] : hist.frequency) overall += static_cast<double>(c) * static_cast<double>(f);
    overall /= n_total;
    // A zero start is a fixed point of EM, so keep the lower mean off zero.
    double m_lo = std::max(tail_mean(false), 0.1 * overall);
    double m_hi = tail_mean(true);
    if (m_hi <= m_lo) m_hi = m_lo + 1.0;
    double w = 0.5;

    MixtureFit fit;
    auto degenerate = [&] { return w < 1e-9 || w > 1.0 - 1e-9 || m_lo <= 0.0 || std::abs(m_hi - m_lo) < 1e-9 * (1.0 + m_hi); };
    for (int it = 1; it <= max_iterations; ++it) {
        double r_sum = 0.0, r_k = 0.0, s_sum = 0.0, s_k = 0.0, ll = 0.0;
        for (const auto& [c, f] : hist.frequency) {
            const double k = c;
            const double la = std::log(w) + log_poisson(k, m_hi);
            const double lb = std::log1p(-w) + log_poisson(k, m_lo);
            const double top = std::max(la, lb);
            const double lse = top + std::log(std::exp(la - top) + std::exp(lb - top));
            const double r = std::exp(la - lse);
            const double ff = static_cast<double>(f);
            r_sum += ff * r;
            r_k += ff * r * k;
            s_sum += ff * (1.0 - r);
            s_k += ff * (1.0 - r) * k;
            ll += ff * lse;
        }
        const double w_new = r_sum / n_total;
        const double hi_new = r_sum > 0.0 ? r_k / r_sum : m_hi;
        const double lo_new = s_sum > 0.0 ? s_k / s_sum : m_lo;
        const double change = std::max({std::abs(w_new - w), std::abs(hi_new - m_hi) / (1.0 + m_hi),
                                        std::abs(lo_new - m_lo) / (1.0 + m_lo)});
        w = w_new;
        m_hi = hi_new;
        m_lo = lo_new;
        fit.log_likelihood = ll;
        fit.iterations = it;
        if (degenerate()) {
            fit.warning = "degenerate second mixture component";
            break;
        }
        if (change < 1e-12) {
            fit.converged = true;
            break;
        }
    }
    // A second component that barely beats one Poisson is not identifiable.
    double ll_single = 0.0;
    for (const auto& [c, f] : hist.frequency) ll_single += static_cast<double>(f) * log_poisson(c, overall);
    if (fit.warning.empty() && fit.log_likelihood - ll_single < 5.0) {
        fit.converged = false;
        fit.warning = "degenerate second mixture component";
    }
    if (!fit.converged && fit.warning.empty()) {
        throw NumericalError("mixture fit did not converge in " + std::to_string(max_iterations) +
                             " iterations (means " + std::to_string(m_lo) + ", " + std::to_string(m_hi) +
                             ", weight " + std::to_string(w) + ")");
    }
    if (m_lo > m_hi) {
        std::swap(m_lo, m_hi);
        w = 1.0 - w;
    }
    fit.mean_plus = m_hi;
    fit.mean_minus = m_lo;
    fit.weight_plus = w;
    fit.gamma_plus = m_hi / hist.bin_width;
    fit.gamma_minus = m_lo / hist.bin_width;
    // Poisson standard error of each component mean given its share of bins.
    const double n_plus = std::max(w * n_total, 1.0);
    const double n_minus = std::max((1.0 - w) * n_total, 1.0);
    fit.gamma_plus_se = std::sqrt(m_hi / n_plus) / hist.bin_width;
    fit.gamma_minus_se = std::sqrt(m_lo / n_minus) / hist.bin_width;
    return fit;
}

PoissonThreshold poisson_threshold(double gamma_plus, double gamma_minus, double bin_width) {
    if (!(gamma_minus > 0.0) || !(gamma_plus > 0.0)) throw std::invalid_argument("rates must be positive");
    if (gamma_plus == gamma_minus) throw std::invalid_argument("equal rates have no threshold");
    if (gamma_plus < gamma_minus) throw std::invalid_argument("gamma_plus must exceed gamma_minus");
    if (!(bin_width > 0.0)) throw std::invalid_argument("bin width must be positive");
    const double nu = (gamma_plus - gamma_minus) * bin_width / std::log(gamma_plus / gamma_minus);
    return {nu, static_cast<std::uint32_t>(std::floor(nu))};
}

RelaxationCurves postselect_and_average(std::span<const Trajectory> trajs, std::uint32_t rule,
                                        std::int64_t subtraj_bins, int rebin_factor) {
    if (rebin_factor < 1 || subtraj_bins < 1 || subtraj_bins % rebin_factor != 0) {
        throw std::invalid_argument("subtrajectory length must be a positive multiple of the rebin factor");
    }
    const std::int64_t k_bins = subtraj_bins / rebin_factor;
    if (k_bins < 2) throw std::invalid_argument("subtrajectory needs at least two rebinned bins");
    const auto lags = static_cast<std::size_t>(k_bins - 1);
    std::vector<double> sum[2] = {std::vector<double>(lags), std::vector<double>(lags)};
    std::vector<double> sq[2] = {std::vector<double>(lags), std::vector<double>(lags)};
    std::int64_t n[2] = {0, 0};
    double dt = 0.0;
    for (const Trajectory& tr : trajs) {
        dt = tr.dt;
        const std::size_t n_sub = tr.counts.size() / static_cast<std::size_t>(subtraj_bins);
        for (std::size_t s = 0; s < n_sub; ++s) {
            const std::uint32_t* base = tr.counts.data() + s * static_cast<std::size_t>(subtraj_bins);
            auto rebinned = [&](std::int64_t k) {
                std::uint32_t acc = 0;
                for (int j = 0; j < rebin_factor; ++j) acc += base[k * rebin_factor + j];
                return static_cast<double>(acc);
            };
            const int cls = rebinned(0) > rule ? 0 : 1;
            ++n[cls];
            for (std::size_t k = 0; k < lags; ++k) {
                const double v = rebinned(static_cast<std::int64_t>(k) + 1);
                sum[cls][k] += v;
                sq[cls][k] += v * v;
            }
        }
    }
    if (n[0] == 0) throw DataError("no subtrajectories classified as plus");
    if (n[1] == 0) throw DataError("no subtrajectories classified as minus");
    RelaxationCurves out;
    out.bin_width = dt * rebin_factor;
    out.n_plus = n[0];
    out.n_minus = n[1];
    for (std::size_t k = 0; k < lags; ++k) {
        out.time.push_back(static_cast<double>(k + 1) * out.bin_width);
        for (int c = 0; c < 2; ++c) {
            const double nn = static_cast<double>(n[c]);
            const double mean = sum[c][k] / nn;
            const double var = nn > 1.0 ? std::max(0.0, (sq[c][k] - nn * mean * mean) / (nn - 1.0)) : 0.0;
            (c == 0 ? out.rho_plus : out.rho_minus).push_back(mean);
            (c == 0 ? out.sem_plus : out.sem_minus).push_back(std::sqrt(var / nn));
        }
    }
    return out;
}

namespace {

// Residuals of both curves against A_+- e^{-G t} + B; x = (G, B, A+, A-).
struct RelaxationFunctor {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    const RelaxationCurves* c;
    std::vector<double> w_plus, w_minus;  // sqrt weights

    int inputs() const { return 4; }
    int values() const { return static_cast<int>(2 * c->time.size()); }

    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
        const std::size_t n = c->time.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::exp(-x[0] * c->time[i]);
            f[static_cast<Eigen::Index>(i)] = w_plus[i] * (x[2] * e + x[1] - c->rho_plus[i]);
            f[static_cast<Eigen::Index>(n + i)] = w_minus[i] * (x[3] * e + x[1] - c->rho_minus[i]);
        }
        return 0;
    }

    int df(const Eigen::VectorXd& x, Eigen::MatrixXd& j) const {
        const std::size_t n = c->time.size();
        j.setZero();
        for (std::size_t i = 0; i < n; ++i) {
            const double t = c->time[i];
            const double e = std::exp(-x[0] * t);
            const auto a = static_cast<Eigen::Index>(i);
            const auto b = static_cast<Eigen::Index>(n + i);
            j(a, 0) = -w_plus[i] * x[2] * t * e;
            j(a, 1) = w_plus[i];
            j(a, 2) = w_plus[i] * e;
            j(b, 0) = -w_minus[i] * x[3] * t * e;
            j(b, 1) = w_minus[i];
            j(b, 3) = w_minus[i] * e;
        }
        return 0;
    }
};

// Slope and intercept of log|y - b0| vs t over the leading points that stay
// clearly above zero.
bool log_linear(const std::vector<double>& t, const std::vector<double>& y, double b0, double floor, double& slope,
                double& intercept, double& sign) {
    double st = 0, sy = 0, stt = 0, sty = 0;
    int n = 0;
    sign = y.front() >= b0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double d = sign * (y[i] - b0);
        if (d <= floor) break;
        const double ly = std::log(d);
        st += t[i];
        sy += ly;
        stt += t[i] * t[i];
        sty += t[i] * ly;
        ++n;
    }
    if (n < 2) return false;
    const double den = n * stt - st * st;
    if (den <= 0.0) return false;
    slope = (n * sty - st * sy) / den;
    intercept = (sy - slope * st) / n;
    return true;
}

}  // namespace

RelaxationFit fit_relaxation(const RelaxationCurves& curves, double mean_plus, double mean_minus) {
    const std::size_t n = curves.time.size();
    if (n < 10 || curves.rho_plus.size() != n || curves.rho_minus.size() != n) {
        throw std::invalid_argument("relaxation fit needs both curves with at least 10 lags");
    }
    if (!(mean_plus > mean_minus)) throw std::invalid_argument("mean_plus must exceed mean_minus");

    // Late-time level from the last quarter of both curves.
    const std::size_t tail_start = n - std::max<std::size_t>(n / 4, 1);
    double b0 = 0.0;
    for (std::size_t i = tail_start; i < n; ++i) b0 += curves.rho_plus[i] + curves.rho_minus[i];
    b0 /= 2.0 * static_cast<double>(n - tail_start);

    double spread = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        spread = std::max({spread, std::abs(curves.rho_plus[i] - b0), std::abs(curves.rho_minus[i] - b0)});
    }
    if (spread <= 1e-12 * std::max(1.0, std::abs(b0))) {
        throw NumericalError("curves are flat; relaxation rate unidentifiable");
    }

    // Log-linear starting values on whichever curve deviates clearly.
    double gamma0 = 0.0, a_plus0 = curves.rho_plus.front() - b0, a_minus0 = curves.rho_minus.front() - b0;
    int n_slopes = 0;
    const double floor = 0.1 * spread;
    for (int c = 0; c < 2; ++c) {
        const auto& y = c == 0 ? curves.rho_plus : curves.rho_minus;
        double slope, intercept, sign;
        if (log_linear(curves.time, y, b0, floor, slope, intercept, sign) && slope < 0.0) {
            gamma0 += -slope;
            ++n_slopes;
            (c == 0 ? a_plus0 : a_minus0) = sign * std::exp(intercept);
        }
    }
    gamma0 = n_slopes > 0 ? gamma0 / n_slopes : 1.0 / (curves.time.back() - curves.time.front());

    RelaxationFunctor fn{&curves, {}, {}};
    bool any_zero = false;
    for (std::size_t i = 0; i < n; ++i) any_zero = any_zero || curves.sem_plus[i] <= 0.0 || curves.sem_minus[i] <= 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        fn.w_plus.push_back(any_zero ? 1.0 : 1.0 / curves.sem_plus[i]);
        fn.w_minus.push_back(any_zero ? 1.0 : 1.0 / curves.sem_minus[i]);
    }

    Eigen::VectorXd x(4);
    x << gamma0, b0, a_plus0, a_minus0;
    Eigen::LevenbergMarquardt<RelaxationFunctor> lm(fn);
    lm.parameters.ftol = 1e-15;
    lm.parameters.xtol = 1e-15;
    lm.parameters.gtol = 0.0;
    lm.parameters.maxfev = 20000;
    const auto status = lm.minimize(x);
    using namespace Eigen::LevenbergMarquardtSpace;
    if (status == ImproperInputParameters || status == TooManyFunctionEvaluation || status == NotStarted) {
        Eigen::VectorXd f(fn.values());
        fn(x, f);
        throw NumericalError("relaxation fit did not converge (status " + std::to_string(static_cast<int>(status)) +
                             ", residual norm " + std::to_string(f.norm()) + ")");
    }

    RelaxationFit fit;
    fit.total_rate = x[0];
    fit.b = x[1];
    fit.a_plus = x[2];
    fit.a_minus = x[3];
    Eigen::VectorXd f(fn.values());
    fn(x, f);
    fit.chi_square = f.squaredNorm();
    fit.dof = fn.values() - 4;
    Eigen::MatrixXd j(fn.values(), 4);
    fn.df(x, j);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    if (!lu.isInvertible()) throw NumericalError("relaxation fit is singular; rate unidentifiable");
    // Uniform weights carry no noise scale, so rescale by the residual variance.
    const double scale = any_zero ? (fit.dof > 0 ? fit.chi_square / fit.dof : 0.0) : 1.0;
    const Eigen::MatrixXd cov = lu.inverse() * scale;
    fit.covariance.assign(cov.data(), cov.data() + 16);

    const double g = fit.total_rate;
    const double span = mean_plus - mean_minus;
    fit.big_gamma_minus = g * (fit.b - mean_minus) / span;
    fit.big_gamma_plus = g - fit.big_gamma_minus;
    if (!(fit.big_gamma_plus > 0.0) || !(fit.big_gamma_minus > 0.0) || !std::isfinite(g)) {
        throw NumericalError("fitted switching rates outside (0, inf): Gamma_+ = " + std::to_string(fit.big_gamma_plus) +
                             ", Gamma_- = " + std::to_string(fit.big_gamma_minus));
    }
    // Delta method on (Gamma, B).
    const double dgm_dg = (fit.b - mean_minus) / span;
    const double dgm_db = g / span;
    const double var_g = cov(0, 0), var_b = cov(1, 1), cov_gb = cov(0, 1);
    const double var_gm = dgm_dg * dgm_dg * var_g + dgm_db * dgm_db * var_b + 2.0 * dgm_dg * dgm_db * cov_gb;
    const double dgp_dg = 1.0 - dgm_dg, dgp_db = -dgm_db;
    const double var_gp = dgp_dg * dgp_dg * var_g + dgp_db * dgp_db * var_b + 2.0 * dgp_dg * dgp_db * cov_gb;
    fit.big_gamma_minus_se = std::sqrt(std::max(0.0, var_gm));
    fit.big_gamma_plus_se = std::sqrt(std::max(0.0, var_gp));
    return fit;
}

Priors stationary_priors(double big_gamma_plus, double big_gamma_minus) {
    if (!(big_gamma_plus >= 0.0) || !(big_gamma_minus >= 0.0)) throw std::invalid_argument("rates must be nonnegative");
    const double total = big_gamma_plus + big_gamma_minus;
    if (!(total > 0.0)) throw std::invalid_argument("stationary priors need a nonzero switching rate");
    return Priors(big_gamma_minus / total);
}

double correct_preparation_error(double eps_measured, double eta) {
    if (!(eta >= 0.0) || !(eta < 0.5)) throw std::invalid_argument("eta must lie in [0, 1/2)");
    return (eps_measured - eta) / (1.0 - 2.0 * eta);
}

double apply_preparation_error(double eps, double eta) {
    if (!(eta >= 0.0) || !(eta < 0.5)) throw std::invalid_argument("eta must lie in [0, 1/2)");
    return eta * (1.0 - eps) + (1.0 - eta) * eps;
}

double fit_preparation_error(std::span<const double> measured, std::span<const double> model) {
    if (measured.size() != model.size() || measured.empty()) throw std::invalid_argument("curves must match and be nonempty");
    // measured - model = eta (1 - 2 model): linear in eta.
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        const double x = 1.0 - 2.0 * model[i];
        num += (measured[i] - model[i]) * x;
        den += x * x;
    }
    if (!(den > 0.0)) throw NumericalError("model curve carries no information on eta");
    const double eta = num / den;
    if (!(eta < 0.5)) throw NumericalError("fitted eta is not below 1/2");
    return std::max(0.0, eta);
}

std::vector<LabeledReadout> prepare_by_posterior(std::span<const Trajectory> trajs, const UpdateMatrixSet& matrices,
                                                 std::int64_t prep_bins, std::int64_t readout_bins) {
    if (prep_bins < 1 || readout_bins < 1) throw std::invalid_argument("window lengths must be positive");
    const auto window = static_cast<std::size_t>(prep_bins + readout_bins);
    std::vector<LabeledReadout> out;
    for (const Trajectory& tr : trajs) {
        for (std::size_t start = 0; start + window <= tr.counts.size(); start += window) {
            StateVector rho{0.5, 0.5, 0.0};
            for (std::int64_t k = 0; k < prep_bins; ++k) {
                rho = posterior_propagate(rho, tr.counts[start + static_cast<std::size_t>(k)], matrices).state;
            }
            LabeledReadout r;
            r.prepared = rho.rho_plus > 0.5 ? State::plus : State::minus;
            r.traj.dt = tr.dt;
            r.traj.counts.assign(tr.counts.begin() + static_cast<std::ptrdiff_t>(start + static_cast<std::size_t>(prep_bins)),
                                 tr.counts.begin() + static_cast<std::ptrdiff_t>(start + window));
            out.push_back(std::move(r));
        }
    }
    return out;
}

ErrorCurve measure_error_curve(std::span<const LabeledReadout> readouts, const UpdateMatrixSet& matrices,
                               std::span<const std::int64_t> t_f_bins) {
    if (t_f_bins.empty()) throw std::invalid_argument("empty readout-time grid");
    const std::int64_t k_max = *std::max_element(t_f_bins.begin(), t_f_bins.end());
    if (*std::min_element(t_f_bins.begin(), t_f_bins.end()) < 1) throw std::invalid_argument("readout times must be positive");
    std::vector<std::int64_t> errors[2] = {std::vector<std::int64_t>(t_f_bins.size()), std::vector<std::int64_t>(t_f_bins.size())};
    std::int64_t n[2] = {0, 0};
    std::vector<std::uint8_t> says_plus(static_cast<std::size_t>(k_max) + 1);
    for (const LabeledReadout& r : readouts) {
        if (static_cast<std::int64_t>(r.traj.counts.size()) < k_max) throw DataError("readout record shorter than the grid");
        LikelihoodTracker tracker(matrices);
        for (std::int64_t k = 1; k <= k_max; ++k) {
            says_plus[static_cast<std::size_t>(k)] =
                decide(tracker.push(r.traj.counts[static_cast<std::size_t>(k - 1)]), 0.0) == State::plus;
        }
        const int s = r.prepared == State::plus ? 0 : 1;
        ++n[s];
        for (std::size_t i = 0; i < t_f_bins.size(); ++i) {
            errors[s][i] += (says_plus[static_cast<std::size_t>(t_f_bins[i])] != 0) != (s == 0);
        }
    }
    if (n[0] == 0 || n[1] == 0) throw DataError("readout set lacks one of the prepared states");
    ErrorCurve c;
    c.n_plus = n[0];
    c.n_minus = n[1];
    for (std::size_t i = 0; i < t_f_bins.size(); ++i) {
        c.t_f.push_back(static_cast<double>(t_f_bins[i]) * matrices.rates().dt);
        c.eps_plus.push_back(static_cast<double>(errors[0][i]) / static_cast<double>(n[0]));
        c.eps_minus.push_back(static_cast<double>(errors[1][i]) / static_cast<double>(n[1]));
        c.eps.push_back(0.5 * (c.eps_plus.back() + c.eps_minus.back()));
    }
    return c;
}

CalibrationResult calibrate(std::span<const Trajectory> trajs, const CalibrationOptions& options) {
    if (trajs.empty()) throw DataError("no trajectories found");
    const double dt = trajs.front().dt;
    const int rebin_factor = static_cast<int>(std::llround(options.rebin_seconds / dt));
    const auto subtraj_bins = static_cast<std::int64_t>(std::llround(options.subtraj_seconds / dt));
    if (rebin_factor < 1 || std::abs(rebin_factor * dt - options.rebin_seconds) > 1e-9 * options.rebin_seconds) {
        throw std::invalid_argument("rebin width must be a whole number of bins");
    }
    if (subtraj_bins % rebin_factor != 0) throw std::invalid_argument("subtrajectory length must be a multiple of the rebin width");

    CalibrationResult res;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const bool calib = options.calibration_count ? static_cast<int>(i) < *options.calibration_count : i % 2 == 0;
        (calib ? res.calibration_indices : res.test_indices).push_back(i);
    }
    if (res.calibration_indices.empty()) throw DataError("calibration split is empty");
    std::vector<Trajectory> calib;
    for (std::size_t i : res.calibration_indices) calib.push_back(trajs[i]);

    // Histogram over every rebinned bin of every whole subtrajectory.
    CountHistogram hist;
    hist.bin_width = rebin_factor * dt;
    for (const Trajectory& tr : calib) {
        const std::size_t usable = tr.counts.size() / static_cast<std::size_t>(subtraj_bins) * static_cast<std::size_t>(subtraj_bins);
        Trajectory cut{std::vector<std::uint32_t>(tr.counts.begin(), tr.counts.begin() + static_cast<std::ptrdiff_t>(usable)), tr.dt};
        for (const std::uint32_t c : rebin(cut, rebin_factor).counts) hist.add(c);
    }
    res.mixture = fit_poisson_mixture(hist);
    if (!res.mixture.converged) throw NumericalError("mixture fit degenerate: " + res.mixture.warning);
    res.threshold = poisson_threshold(res.mixture.gamma_plus, res.mixture.gamma_minus, hist.bin_width);
    res.curves = postselect_and_average(calib, res.threshold.rule, subtraj_bins, rebin_factor);
    res.relaxation = fit_relaxation(res.curves, res.mixture.mean_plus, res.mixture.mean_minus);
    res.priors = stationary_priors(res.relaxation.big_gamma_plus, res.relaxation.big_gamma_minus);
    res.rates = {res.mixture.gamma_plus, res.mixture.gamma_minus, res.relaxation.big_gamma_plus,
                 res.relaxation.big_gamma_minus, dt};
    res.regime_valid = res.rates.regime_valid();
    return res;
}

}  // namespace seqread
