#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pwaid/divergence.hpp"
#include "pwaid/errors.hpp"
#include "pwaid/localid.hpp"
#include "pwaid/oda.hpp"
#include "pwaid/simulate.hpp"

namespace pwaid {

struct IdentifierConfig {
    double lambda_max = 0.99;
    double lambda_min = 0.2;
    double gamma = 0.8;
    // Merge threshold; when unset it is eps_n_factor times the squared data radius at merge time.
    std::optional<double> eps_n;
    double eps_n_factor = 0.01;
    // Mode insertion threshold on the parameter divergence. With eps_s_adaptive it
    // becomes eps_s_factor times the median pairwise divergence once two modes exist.
    double eps_s = 0.5;
    bool eps_s_adaptive = true;
    double eps_s_factor = 0.25;
    // Split perturbation; when unset it is delta_factor times the data radius at split time.
    std::optional<double> delta;
    double delta_factor = 0.01;
    std::size_t K_max = 16;
    StepSchedule alpha = StepSchedule::harmonic(0.01);
    StepSchedule beta = StepSchedule::harmonic_log(0.9);
    // Divides the fast gain by 1 + |phi|^2 so the recursion stays stable for any regressor scale.
    bool normalized_gain = true;
    // The slow counter restarts every level; this offset keeps its first step below 1.
    double beta_offset = 5.0;
    double tol_conv_factor = 1e-4;
    long conv_window = 50;
    long max_iters_per_level = 900;
    UpdateOrder update_order = UpdateOrder::Synchronous;
    long slow_every = 1;  // update codevectors only every n-th sample, holding them in between
    // A candidate must win at least this fraction of the level's samples to be confirmed.
    double min_candidate_support = 0.05;
    Divergence div = Divergence::SquaredEuclidean;
    std::uint64_t seed = 0;
    std::optional<Eigen::MatrixXd> theta_init;  // zeros when unset

    // Rejects values outside their domains and stepsize pairs whose ratio
    // beta/alpha fails to decay on a logarithmic grid.
    void validate() const {
        if (!(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max < 1.0))
            throw ConfigError("lambda_min/lambda_max", "need 0 < lambda_min < lambda_max < 1");
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma", "must lie in (0, 1)");
        if (eps_n && !(*eps_n > 0.0)) throw ConfigError("eps_n", "must be positive");
        if (!(eps_n_factor > 0.0)) throw ConfigError("eps_n_factor", "must be positive");
        if (!(eps_s > 0.0)) throw ConfigError("eps_s", "must be positive");
        if (!(eps_s_factor > 0.0)) throw ConfigError("eps_s_factor", "must be positive");
        if (delta && !(*delta >= 0.0)) throw ConfigError("delta", "must be nonnegative");
        if (!(delta_factor >= 0.0)) throw ConfigError("delta_factor", "must be nonnegative");
        if (K_max < 1) throw ConfigError("K_max", "must be at least 1");
        if (!(beta_offset >= 0.0)) throw ConfigError("beta_offset", "must be nonnegative");
        if (!(tol_conv_factor >= 0.0)) throw ConfigError("tol_conv_factor", "must be nonnegative");
        if (conv_window < 1) throw ConfigError("conv_window", "must be at least 1");
        if (max_iters_per_level < 1) throw ConfigError("max_iters_per_level", "must be at least 1");
        if (slow_every < 1) throw ConfigError("slow_every", "must be at least 1");
        if (!(min_candidate_support >= 0.0 && min_candidate_support <= 1.0))
            throw ConfigError("min_candidate_support", "must lie in [0, 1]");
        alpha.validate("alpha");
        beta.validate("beta");
        double prev = std::numeric_limits<double>::infinity();
        for (double t = 1e2; t <= 1e8; t *= 10.0) {
            const double r = beta_at(t) / alpha(t);
            if (r > prev * (1.0 + 1e-12))
                throw ConfigError("alpha/beta", "beta(t)/alpha(t) must be nonincreasing (slow timescale)");
            prev = r;
        }
        if (!(prev < 1e-2)) throw ConfigError("alpha/beta", "beta(t)/alpha(t) must decay towards zero");
    }

    double beta_at(double level_t) const { return beta(level_t + beta_offset); }

    // Number of temperature levels from lambda_max down to lambda_min.
    long level_count() const {
        long n = 0;
        for (double l = lambda_max; l > lambda_min; l *= gamma) ++n;
        return n;
    }
};

// Sequential stream of observations with strictly increasing timestamps.
class ObservationSource {
public:
    virtual ~ObservationSource() = default;
    virtual std::optional<Sample> next() = 0;
};

// Replays a recorded trajectory, optionally cycling; timestamps keep increasing across cycles.
class ReplaySource : public ObservationSource {
public:
    ReplaySource(Trajectory traj, bool cycle, long limit = -1) : traj_(std::move(traj)), cycle_(cycle), limit_(limit) {
        if (traj_.samples.empty()) throw InvalidInput("ReplaySource: empty trajectory");
    }

    std::optional<Sample> next() override {
        if (limit_ >= 0 && pos_ >= limit_) return std::nullopt;
        const auto n = static_cast<long>(traj_.samples.size());
        if (!cycle_ && pos_ >= n) return std::nullopt;
        Sample s = traj_.samples[static_cast<std::size_t>(pos_ % n)];
        s.t = pos_++;
        return s;
    }

    void seek(long pos) { pos_ = pos; }
    long position() const { return pos_; }

private:
    Trajectory traj_;
    bool cycle_;
    long limit_;
    long pos_ = 0;
};

// Steps a simulator on demand for at most `limit` samples.
class LiveSource : public ObservationSource {
public:
    LiveSource(const SwitchedSystemSpec& spec, std::uint64_t seed, long limit) : sim_(spec, seed), limit_(limit) {}

    std::optional<Sample> next() override {
        if (emitted_ >= limit_) return std::nullopt;
        ++emitted_;
        return sim_.next();
    }

    void skip(long n) {
        for (long k = 0; k < n; ++k) next();
    }

private:
    Simulator sim_;
    long limit_;
    long emitted_ = 0;
};

// Parameter vector slot. Confirmed slots are modes; the others are candidates
// cloned at a split and awaiting the end-of-level insertion test.
struct ParamSlot {
    bool confirmed = false;
    long updates = 0;     // fast-step counter driving alpha
    long level_wins = 0;  // samples routed here during the current level
};

struct SampleRecord {
    long t = 0;
    double lambda = 0.0;
    std::size_t K = 0;
    std::size_t s_hat = 0;
    std::size_t winner = 0;
    double err_norm = 0.0;
    std::vector<Eigen::MatrixXd> mode_thetas;
    std::vector<Eigen::VectorXd> phi_hats;
};

struct LevelSummary {
    double lambda = 0.0;
    std::size_t K = 0;
    std::size_t s_hat = 0;
    long iterations = 0;
    bool converged = false;
};

struct EstimatedHybridModel {
    std::vector<Eigen::MatrixXd> modes;     // confirmed parameter matrices
    std::vector<Eigen::VectorXd> phi_hats;  // cell prototypes
    std::vector<int> cell_mode;             // mode index of each cell
    Divergence div = Divergence::SquaredEuclidean;

    std::size_t s_hat() const { return modes.size(); }
    std::size_t K() const { return phi_hats.size(); }
};

// Index of the confirmed mode closest to `theta`; ties resolve to the lowest index.
inline std::size_t theta_rule(const Eigen::MatrixXd& theta, const std::vector<Eigen::MatrixXd>& modes,
                              Divergence div = Divergence::SquaredEuclidean) {
    if (modes.empty()) throw InvalidInput("theta_rule: empty mode set");
    std::vector<Eigen::VectorXd> flat;
    flat.reserve(modes.size());
    for (const auto& m : modes) flat.push_back(vec(m));
    return nearest(div, vec(theta), flat);
}

// True when the candidate differs from every confirmed mode by more than eps_s.
inline bool mode_insert_check(const Eigen::MatrixXd& candidate, const std::vector<Eigen::MatrixXd>& modes, double eps_s,
                              Divergence div = Divergence::SquaredEuclidean) {
    if (!(eps_s > 0.0)) throw ContractViolation("mode_insert_check: eps_s must be positive");
    for (const auto& m : modes)
        if (!(eval(div, vec(candidate), vec(m)) > eps_s)) return false;
    return true;
}

inline std::size_t cell_of(const EstimatedHybridModel& model, const Eigen::VectorXd& phi) {
    return nearest(model.div, phi, model.phi_hats);
}

inline int mode_of(const EstimatedHybridModel& model, const Eigen::VectorXd& phi) {
    return model.cell_mode[cell_of(model, phi)];
}

inline Eigen::VectorXd predict_hard(const EstimatedHybridModel& model, const Eigen::VectorXd& phi) {
    return model.modes[static_cast<std::size_t>(mode_of(model, phi))] * phi;
}

// Gibbs mixture of the cell predictions with uniform cell priors.
inline Eigen::VectorXd predict_smooth(const EstimatedHybridModel& model, const Eigen::VectorXd& phi, double lambda_eval) {
    if (model.phi_hats.empty()) throw InvalidInput("predict_smooth: empty model");
    const double f = temperature_factor(lambda_eval);
    Eigen::VectorXd d(static_cast<Eigen::Index>(model.K()));
    for (std::size_t j = 0; j < model.K(); ++j) d(static_cast<Eigen::Index>(j)) = eval(model.div, phi, model.phi_hats[j]);
    Eigen::VectorXd w = (-f * (d.array() - d.minCoeff())).exp();
    w /= w.sum();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(model.modes.front().rows());
    for (std::size_t j = 0; j < model.K(); ++j)
        out += w(static_cast<Eigen::Index>(j)) * (model.modes[static_cast<std::size_t>(model.cell_mode[j])] * phi);
    return out;
}

inline nlohmann::json to_json(const IdentifierConfig& c);
inline IdentifierConfig identifier_config_from_json(const nlohmann::json& j, IdentifierConfig base = {});

// Two-timescale identifier: a fast stochastic-gradient recursion on the
// winning cell's parameters and a slow annealed update of all prototypes,
// with splits, merges and mode insertion at the end of each temperature level.
class Identifier {
public:
    using RecordSink = std::function<void(const SampleRecord&)>;

    Identifier(IdentifierConfig config, int m, int d) : cfg_(std::move(config)), m_(m), d_(d), rng_(cfg_.seed) {
        cfg_.validate();
        if (m < 1 || d < 1) throw ContractViolation("Identifier: dimensions must be positive");
        Eigen::MatrixXd init = cfg_.theta_init ? *cfg_.theta_init : Eigen::MatrixXd::Zero(m, d);
        if (init.rows() != m || init.cols() != d) throw ConfigError("theta_init", "must be m x d");
        thetas_.push_back(init);
        slots_.push_back({true, 0, 0});
        modes_.push_back(0);
        lambda_ = cfg_.lambda_max;
        eps_s_ = cfg_.eps_s;
    }

    void set_record_sink(RecordSink sink) { sink_ = std::move(sink); }

    // Called once per level after the sample loop and before merging, for diagnostics.
    void set_level_hook(std::function<void(const Identifier&)> hook) { level_hook_ = std::move(hook); }

    const IdentifierConfig& config() const { return cfg_; }
    double lambda() const { return lambda_; }
    long samples_seen() const { return t_; }
    long level() const { return level_; }
    std::size_t K() const { return cvs_.size(); }
    std::size_t s_hat() const { return modes_.size(); }
    double eps_s() const { return eps_s_; }
    const std::vector<Codevector>& codevectors() const { return cvs_; }
    const std::vector<Eigen::MatrixXd>& thetas() const { return thetas_; }
    const std::vector<ParamSlot>& slots() const { return slots_; }
    const std::vector<int>& mode_slots() const { return modes_; }
    bool can_run_level() const { return lambda_ > cfg_.lambda_min; }

    std::vector<Eigen::MatrixXd> mode_thetas() const {
        std::vector<Eigen::MatrixXd> out;
        out.reserve(modes_.size());
        for (int s : modes_) out.push_back(thetas_[static_cast<std::size_t>(s)]);
        return out;
    }

    // Root-mean-square spread of the regressors seen so far.
    double data_radius() const {
        if (n_seen_ < 2) return 0.0;
        return std::sqrt(m2_.sum() / static_cast<double>(n_seen_));
    }

    // Routes one observation through the fast and slow updates.
    SampleRecord process_sample(const Sample& s) {
        if (s.phi.size() != d_ || s.psi.size() != m_) throw ContractViolation("process_sample: dimension mismatch");
        if (!s.phi.allFinite() || !s.psi.allFinite()) throw InvalidInput("process_sample: non-finite observation");
        if (last_t_ && s.t <= *last_t_)
            throw InvalidInput("process_sample: timestamps must be strictly increasing (got " + std::to_string(s.t) +
                               " after " + std::to_string(*last_t_) + ")");
        last_t_ = s.t;
        observe(s.phi);
        if (cvs_.empty()) cvs_.push_back(Codevector::at(s.phi, 1.0, modes_.front()));

        const std::size_t w = winner(s.phi);
        const auto slot = static_cast<std::size_t>(cvs_[w].theta_index);
        double alpha = cfg_.alpha(static_cast<double>(slots_[slot].updates));
        if (cfg_.normalized_gain) alpha /= 1.0 + s.phi.squaredNorm();
        LocalModel local{thetas_[slot]};
        const Eigen::VectorXd eps = sgd_update(local, s.phi, s.psi, alpha);
        thetas_[slot] = std::move(local.theta);
        ++slots_[slot].updates;
        ++slots_[slot].level_wins;

        if (level_t_ % cfg_.slow_every == 0) {
            const double beta = std::min(1.0, cfg_.beta_at(static_cast<double>(level_t_ / cfg_.slow_every)));
            oda_update(cvs_, augmented_point(s.psi, s.phi), s.phi, thetas_, lambda_, beta, cfg_.div, cfg_.update_order);
            for (const auto& cv : cvs_)
                if (!cv.phi_hat.allFinite()) throw NumericalDivergence("process_sample: prototype became non-finite");
        }
        ++level_t_;
        ++t_;

        SampleRecord rec{s.t, lambda_, cvs_.size(), modes_.size(), w, eps.norm(), {}, {}};
        if (sink_) {
            snapshot(rec);
            // Inside a level the latest row is held back so that the row closing
            // the level can show the state after merging and mode insertion.
            if (in_level_) {
                if (pending_) sink_(*pending_);
                pending_ = rec;
            } else {
                sink_(rec);
            }
        }
        return rec;
    }

    // One temperature level: split, stream until the prototypes settle or the
    // budget runs out, merge, test candidates, then cool.
    LevelSummary run_level(ObservationSource& source) {
        if (!can_run_level()) throw ContractViolation("run_level: minimum temperature reached; call finalize");
        split();
        in_level_ = true;
        level_t_ = 0;
        for (auto& sl : slots_) sl.level_wins = 0;

        LevelSummary sum;
        const double tol = cfg_.tol_conv_factor * data_radius();
        std::vector<Eigen::VectorXd> anchor;
        while (level_t_ < cfg_.max_iters_per_level) {
            auto obs = source.next();
            if (!obs) break;
            process_sample(*obs);
            if (level_t_ % cfg_.conv_window == 0) {
                if (settled(anchor, tol)) {
                    sum.converged = true;
                    break;
                }
                anchor.clear();
                for (const auto& cv : cvs_) anchor.push_back(cv.phi_hat);
            }
        }
        sum.iterations = level_t_;
        if (level_hook_) level_hook_(*this);
        merge_cells();
        resolve_candidates(sum.iterations);
        in_level_ = false;
        if (pending_) {
            pending_->K = cvs_.size();
            pending_->s_hat = modes_.size();
            snapshot(*pending_);
            if (sink_) sink_(*pending_);
            pending_.reset();
        }
        sum.lambda = lambda_;
        sum.K = cvs_.size();
        sum.s_hat = modes_.size();
        lambda_ *= cfg_.gamma;
        ++level_;
        return sum;
    }

    // Runs levels until the minimum temperature or the end of the stream.
    std::vector<LevelSummary> run(ObservationSource& source) {
        std::vector<LevelSummary> out;
        while (can_run_level()) {
            const long before = t_;
            out.push_back(run_level(source));
            if (t_ == before) break;
        }
        return out;
    }

    EstimatedHybridModel finalize() const {
        if (cvs_.empty()) throw ContractViolation("finalize: no observations processed");
        EstimatedHybridModel model;
        model.div = cfg_.div;
        model.modes = mode_thetas();
        for (const auto& cv : cvs_) {
            model.phi_hats.push_back(cv.phi_hat);
            model.cell_mode.push_back(static_cast<int>(
                theta_rule(thetas_[static_cast<std::size_t>(cv.theta_index)], model.modes, cfg_.div)));
        }
        return model;
    }

    nlohmann::json checkpoint() const {
        nlohmann::json cvs = nlohmann::json::array();
        for (const auto& cv : cvs_) cvs.push_back(to_json(cv));
        nlohmann::json slots = nlohmann::json::array();
        for (std::size_t i = 0; i < slots_.size(); ++i)
            slots.push_back({{"theta", detail::mat_to_json(thetas_[i])},
                             {"confirmed", slots_[i].confirmed},
                             {"updates", slots_[i].updates},
                             {"level_wins", slots_[i].level_wins}});
        nlohmann::json modes = nlohmann::json::array();
        for (int s : modes_) modes.push_back({{"slot", s}, {"theta", detail::mat_to_json(thetas_[static_cast<std::size_t>(s)])}});
        std::ostringstream rng;
        rng << rng_;
        return {{"config", to_json(cfg_)},
                {"m", m_},
                {"d", d_},
                {"lambda", lambda_},
                {"t", t_},
                {"level", level_},
                {"level_t", level_t_},
                {"last_t", last_t_ ? nlohmann::json(*last_t_) : nlohmann::json(nullptr)},
                {"eps_s", eps_s_},
                {"stats", {{"n", n_seen_}, {"mean", detail::vec_to_json(mean_)}, {"m2", detail::vec_to_json(m2_)}}},
                {"rng", rng.str()},
                {"codevectors", cvs},
                {"candidate_thetas", slots},
                {"mode_set", modes}};
    }

    static Identifier restore(const nlohmann::json& j) {
        try {
            Identifier id(identifier_config_from_json(j.at("config")), j.at("m").get<int>(), j.at("d").get<int>());
            id.lambda_ = j.at("lambda").get<double>();
            id.t_ = j.at("t").get<long>();
            id.level_ = j.at("level").get<long>();
            id.level_t_ = j.at("level_t").get<long>();
            if (!j.at("last_t").is_null()) id.last_t_ = j.at("last_t").get<long>();
            id.eps_s_ = j.at("eps_s").get<double>();
            id.n_seen_ = j.at("stats").at("n").get<long>();
            id.mean_ = detail::vec_from_json(j.at("stats").at("mean"));
            id.m2_ = detail::vec_from_json(j.at("stats").at("m2"));
            std::istringstream rng(j.at("rng").get<std::string>());
            rng >> id.rng_;
            id.cvs_.clear();
            for (const auto& jc : j.at("codevectors")) id.cvs_.push_back(codevector_from_json(jc));
            id.thetas_.clear();
            id.slots_.clear();
            for (const auto& js : j.at("candidate_thetas")) {
                id.thetas_.push_back(detail::mat_from_json(js.at("theta")));
                id.slots_.push_back({js.at("confirmed").get<bool>(), js.at("updates").get<long>(), js.at("level_wins").get<long>()});
            }
            id.modes_.clear();
            for (const auto& jm : j.at("mode_set")) id.modes_.push_back(jm.at("slot").get<int>());
            return id;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput(std::string("checkpoint: ") + e.what());
        }
    }

private:
    void observe(const Eigen::VectorXd& phi) {
        if (n_seen_ == 0) {
            mean_ = Eigen::VectorXd::Zero(phi.size());
            m2_ = Eigen::VectorXd::Zero(phi.size());
        }
        ++n_seen_;
        const Eigen::VectorXd delta = phi - mean_;
        mean_ += delta / static_cast<double>(n_seen_);
        m2_ += delta.cwiseProduct(phi - mean_);
    }

    std::size_t winner(const Eigen::VectorXd& phi) const {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cvs_.size(); ++j) {
            const double dj = detail::eval_unchecked(cfg_.div, phi, cvs_[j].phi_hat);
            if (dj < best_d) {
                best_d = dj;
                best = j;
            }
        }
        return best;
    }

    void snapshot(SampleRecord& rec) const {
        rec.mode_thetas = mode_thetas();
        rec.phi_hats.clear();
        for (const auto& cv : cvs_) rec.phi_hats.push_back(cv.phi_hat);
    }

    bool settled(const std::vector<Eigen::VectorXd>& anchor, double tol) const {
        if (anchor.size() != cvs_.size()) return false;
        double worst = 0.0;
        for (std::size_t i = 0; i < cvs_.size(); ++i) worst = std::max(worst, (cvs_[i].phi_hat - anchor[i]).norm());
        return worst < tol;
    }

    void split() {
        if (cvs_.empty() || cvs_.size() >= cfg_.K_max) return;
        const double delta = cfg_.delta ? *cfg_.delta : cfg_.delta_factor * data_radius();
        cvs_ = perturb_split(cvs_, delta, cfg_.K_max, rng_, [this](int parent) {
            thetas_.push_back(thetas_[static_cast<std::size_t>(parent)]);
            slots_.push_back({false, 0, 0});
            return static_cast<int>(thetas_.size()) - 1;
        });
    }

    bool is_mode(int slot) const { return slots_[static_cast<std::size_t>(slot)].confirmed; }

    void merge_cells() {
        const double r = data_radius();
        const double eps_n = cfg_.eps_n ? *cfg_.eps_n : cfg_.eps_n_factor * r * r;
        if (!(eps_n > 0.0)) return;
        cvs_ = merge(std::move(cvs_), lambda_, eps_n, cfg_.div, [this](const Codevector& a, const Codevector& b) {
            return !(is_mode(a.theta_index) && is_mode(b.theta_index) && a.theta_index != b.theta_index);
        });
    }

    void resolve_candidates(long iterations) {
        const double min_wins = cfg_.min_candidate_support * static_cast<double>(iterations);
        for (auto& cv : cvs_) {
            if (!cv.candidate) continue;
            cv.candidate = false;
            if (is_mode(cv.theta_index)) continue;
            const auto slot = static_cast<std::size_t>(cv.theta_index);
            const auto modes = mode_thetas();
            if (static_cast<double>(slots_[slot].level_wins) >= min_wins &&
                mode_insert_check(thetas_[slot], modes, eps_s_, cfg_.div)) {
                slots_[slot].confirmed = true;
                modes_.push_back(cv.theta_index);
                update_eps_s();
            } else {
                cv.theta_index = modes_[theta_rule(thetas_[slot], modes, cfg_.div)];
            }
        }
    }

    void update_eps_s() {
        if (!cfg_.eps_s_adaptive || modes_.size() < 2) return;
        std::vector<double> pair;
        const auto modes = mode_thetas();
        for (std::size_t i = 0; i < modes.size(); ++i)
            for (std::size_t j = i + 1; j < modes.size(); ++j) pair.push_back(eval(cfg_.div, vec(modes[i]), vec(modes[j])));
        std::sort(pair.begin(), pair.end());
        const std::size_t n = pair.size();
        const double median = n % 2 ? pair[n / 2] : 0.5 * (pair[n / 2 - 1] + pair[n / 2]);
        eps_s_ = cfg_.eps_s_factor * median;
    }

    IdentifierConfig cfg_;
    int m_;
    int d_;
    Rng rng_;
    double lambda_ = 0.0;
    double eps_s_ = 0.0;
    long t_ = 0;
    long level_ = 0;
    long level_t_ = 0;
    std::optional<long> last_t_;
    long n_seen_ = 0;
    Eigen::VectorXd mean_;
    Eigen::VectorXd m2_;
    std::vector<Codevector> cvs_;
    std::vector<Eigen::MatrixXd> thetas_;
    std::vector<ParamSlot> slots_;
    std::vector<int> modes_;
    RecordSink sink_;
    std::function<void(const Identifier&)> level_hook_;
    bool in_level_ = false;
    std::optional<SampleRecord> pending_;
};

// --- configuration JSON ------------------------------------------------------

inline nlohmann::json to_json(const StepSchedule& s) { return {{"kind", to_string(s.kind)}, {"c", s.c}}; }

inline StepSchedule schedule_from_json(const nlohmann::json& j) {
    return {schedule_kind_from_string(j.at("kind").get<std::string>()), j.at("c").get<double>()};
}

inline nlohmann::json to_json(const IdentifierConfig& c) {
    nlohmann::json j = {{"lambda_max", c.lambda_max},
                        {"lambda_min", c.lambda_min},
                        {"gamma", c.gamma},
                        {"eps_n_factor", c.eps_n_factor},
                        {"eps_s", c.eps_s},
                        {"eps_s_adaptive", c.eps_s_adaptive},
                        {"eps_s_factor", c.eps_s_factor},
                        {"delta_factor", c.delta_factor},
                        {"K_max", c.K_max},
                        {"alpha", to_json(c.alpha)},
                        {"beta", to_json(c.beta)},
                        {"normalized_gain", c.normalized_gain},
                        {"beta_offset", c.beta_offset},
                        {"tol_conv_factor", c.tol_conv_factor},
                        {"conv_window", c.conv_window},
                        {"max_iters_per_level", c.max_iters_per_level},
                        {"update_order", c.update_order == UpdateOrder::Synchronous ? "synchronous" : "sequential"},
                        {"slow_every", c.slow_every},
                        {"min_candidate_support", c.min_candidate_support},
                        {"divergence", to_string(c.div)},
                        {"seed", c.seed}};
    if (c.eps_n) j["eps_n"] = *c.eps_n;
    if (c.delta) j["delta"] = *c.delta;
    if (c.theta_init) j["theta_init"] = detail::mat_to_json(*c.theta_init);
    return j;
}

// Overlays the keys present in `j` on `base` and validates the result.
inline IdentifierConfig identifier_config_from_json(const nlohmann::json& j, IdentifierConfig base) {
    IdentifierConfig c = std::move(base);
    std::string field;
    auto num = [&](const char* key, double& out) {
        field = key;
        if (j.contains(key)) out = j.at(key).get<double>();
    };
    auto integer = [&](const char* key, long& out) {
        field = key;
        if (j.contains(key)) out = j.at(key).get<long>();
    };
    auto flag = [&](const char* key, bool& out) {
        field = key;
        if (j.contains(key)) out = j.at(key).get<bool>();
    };
    try {
        if (!j.is_object()) throw ConfigError("identifier", "must be a JSON object");
        num("lambda_max", c.lambda_max);
        num("lambda_min", c.lambda_min);
        num("gamma", c.gamma);
        num("eps_n_factor", c.eps_n_factor);
        num("eps_s", c.eps_s);
        flag("eps_s_adaptive", c.eps_s_adaptive);
        num("eps_s_factor", c.eps_s_factor);
        num("delta_factor", c.delta_factor);
        num("beta_offset", c.beta_offset);
        num("tol_conv_factor", c.tol_conv_factor);
        integer("conv_window", c.conv_window);
        integer("max_iters_per_level", c.max_iters_per_level);
        integer("slow_every", c.slow_every);
        num("min_candidate_support", c.min_candidate_support);
        flag("normalized_gain", c.normalized_gain);
        field = "K_max";
        if (j.contains("K_max")) c.K_max = j.at("K_max").get<std::size_t>();
        field = "eps_n";
        if (j.contains("eps_n")) c.eps_n = j.at("eps_n").is_null() ? std::nullopt : std::optional(j.at("eps_n").get<double>());
        field = "delta";
        if (j.contains("delta")) c.delta = j.at("delta").is_null() ? std::nullopt : std::optional(j.at("delta").get<double>());
        field = "alpha";
        if (j.contains("alpha")) c.alpha = schedule_from_json(j.at("alpha"));
        field = "beta";
        if (j.contains("beta")) c.beta = schedule_from_json(j.at("beta"));
        field = "update_order";
        if (j.contains("update_order")) {
            const auto s = j.at("update_order").get<std::string>();
            if (s == "synchronous") c.update_order = UpdateOrder::Synchronous;
            else if (s == "sequential") c.update_order = UpdateOrder::Sequential;
            else throw ConfigError("update_order", "must be 'synchronous' or 'sequential'");
        }
        field = "divergence";
        if (j.contains("divergence")) c.div = divergence_from_string(j.at("divergence").get<std::string>());
        field = "seed";
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        field = "theta_init";
        if (j.contains("theta_init")) c.theta_init = detail::mat_from_json(j.at("theta_init"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(field, e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(field, e.what());
    }
    c.validate();
    return c;
}

}  // namespace pwaid
