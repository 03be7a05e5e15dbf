#include "submeta/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace submeta {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& msg) {
    throw InputError(source + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& s, const std::string& source, int line, const char* field) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        fail(source, line, std::string("malformed number in ") + field + ": '" + s + "'");
    return v;
}

std::int64_t parse_int(const std::string& s, const std::string& source, int line, const char* field) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        fail(source, line, std::string("malformed integer in ") + field + ": '" + s + "'");
    return v;
}

SubgroupEstimate parse_arm(const std::string& n_s, const std::string& y_s, const std::string& se_s,
                           const std::string& source, int line, char arm) {
    const std::string tag(1, arm);
    const std::int64_t n = parse_int(n_s, source, line, ("n_" + tag).c_str());
    if (n < 0) fail(source, line, "n_" + tag + " is negative");
    const bool blank_y = y_s.empty(), blank_se = se_s.empty();
    if (blank_y != blank_se) fail(source, line, "y_" + tag + " and se_" + tag + " must be both blank or both set");
    if (blank_y != (n == 0)) fail(source, line, "arm " + tag + " must be blank exactly when n_" + tag + " = 0");
    if (blank_y) return SubgroupEstimate::absent();
    const double y = parse_double(y_s, source, line, ("y_" + tag).c_str());
    const double se = parse_double(se_s, source, line, ("se_" + tag).c_str());
    if (!(se > 0.0)) fail(source, line, "se_" + tag + " must be positive");
    return SubgroupEstimate::make(y, se, n);
}

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

json ratio(double log_value) {
    if (!std::isfinite(log_value)) return nullptr;
    return round_sig(std::exp(log_value));
}

json ratio_ci(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) return nullptr;
    return json::array({round_sig(std::exp(lo)), round_sig(std::exp(hi))});
}

json weight_json(const std::optional<WeightVector>& w) {
    if (!w) return nullptr;
    return {{"scheme", to_string(w->scheme)}, {"tau2", w->tau2_used}, {"weights", w->weights}};
}

}  // namespace

MetaDataset parse_csv(std::istream& in, const std::string& source) {
    static const std::vector<std::string> kHeader = {"study_id", "n_a", "n_b", "y_a", "se_a", "y_b", "se_b"};
    MetaDataset data;
    std::map<std::string, int> line_of;
    std::string raw;
    int line = 0;
    bool header_seen = false;
    while (std::getline(in, raw)) {
        ++line;
        const std::string t = trim(raw);
        if (t.empty()) continue;
        if (t[0] == '#') {
            const std::string body = trim(std::string_view(t).substr(1));
            const auto colon = body.find(':');
            if (colon != std::string::npos) {
                const std::string key = lower(trim(std::string_view(body).substr(0, colon)));
                const std::string val = trim(std::string_view(body).substr(colon + 1));
                if (key == "label_a") data.label_a = val;
                if (key == "label_b") data.label_b = val;
            }
            continue;
        }
        auto fields = split(t);
        if (!header_seen) {
            for (auto& f : fields) f = lower(f);
            if (fields != kHeader) fail(source, line, "header must be study_id,n_a,n_b,y_a,se_a,y_b,se_b");
            header_seen = true;
            continue;
        }
        if (fields.size() != kHeader.size())
            fail(source, line, "expected 7 fields, found " + std::to_string(fields.size()));
        if (fields[0].empty()) fail(source, line, "study_id is blank");
        const auto a = parse_arm(fields[1], fields[3], fields[4], source, line, 'a');
        const auto b = parse_arm(fields[2], fields[5], fields[6], source, line, 'b');
        data.studies.push_back(StudyRecord::make(fields[0], a, b));
        line_of.emplace(fields[0], line);
    }
    if (!header_seen) throw InputError(source + ": missing header row");
    const auto violations = validate_dataset(data);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << source << ": invalid dataset";
        for (const auto& v : violations) {
            msg << "\n  ";
            const auto it = line_of.find(v.study_id);
            if (it != line_of.end()) msg << "line " << it->second << " [" << v.study_id << "]: ";
            msg << v.rule;
        }
        throw InputError(msg.str());
    }
    return data;
}

MetaDataset read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return parse_csv(in, path);
}

std::string serialize_csv(const MetaDataset& data) {
    std::ostringstream out;
    out << "# label_a: " << data.label_a << "\n# label_b: " << data.label_b << "\n";
    out << "study_id,n_a,n_b,y_a,se_a,y_b,se_b\n";
    for (const auto& s : data.studies) {
        out << s.study_id << ',' << s.arm_a.n << ',' << s.arm_b.n;
        for (const auto* e : {&s.arm_a, &s.arm_b}) {
            if (e->present()) out << ',' << fmt17(e->effect) << ',' << fmt17(e->std_err);
            else out << ",,";
        }
        out << '\n';
    }
    return out.str();
}

double round_sig(double x, int digits) {
    if (x == 0.0 || !std::isfinite(x)) return x;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*e", digits - 1, x);
    return std::strtod(buf, nullptr);
}

json to_json(const Estimate& e) {
    return {{"point", e.point}, {"std_err", e.std_err}, {"ci_lower", e.ci_lower}, {"ci_upper", e.ci_upper}};
}

json to_json(const AnalysisResult& r) {
    json j;
    j["method"] = to_string(r.method);
    j["label"] = r.label;
    j["collapsible"] = r.collapsible;
    j["beta_a"] = r.has_betas ? to_json(r.beta_a) : json(nullptr);
    j["beta_b"] = r.has_betas ? to_json(r.beta_b) : json(nullptr);
    j["gamma_a_minus_b"] = to_json(r.gamma);
    j["ror"] = ratio(r.gamma.point);
    j["ror_ci"] = ratio_ci(r.gamma.ci_lower, r.gamma.ci_upper);
    j["tau_estimates"] = r.tau_estimates;
    j["weights_a"] = weight_json(r.weights_a);
    j["weights_b"] = weight_json(r.weights_b);
    j["weights_gamma"] = weight_json(r.weights_gamma);
    return j;
}

json to_json(const MismatchReport& r, const MetaDataset& data) {
    json rows = json::array();
    for (std::size_t j = 0; j < data.size(); ++j)
        rows.push_back({{"study_id", data.studies[j].study_id},
                        {"d_a", r.d_matrix[2 * j]},
                        {"d_b", r.d_matrix[2 * j + 1]},
                        {"contribution", r.per_study_contribution[j]}});
    return {{"delta_hat", r.delta_hat},
            {"var_delta", r.var_delta},
            {"variance_model", r.variance_model},
            {"studies", rows}};
}

json to_json(const InfluenceReport& r) {
    json rows = json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"study_id", x.study_id}, {"variance_ratio", x.variance_ratio}, {"delta_shift", x.delta_shift}});
    return rows;
}

json forest_payload(const MetaDataset& data, const std::vector<AnalysisResult>& results,
                    const std::vector<WeightVector>& scheme_weights) {
    json studies = json::array();
    for (std::size_t j = 0; j < data.size(); ++j) {
        const auto& s = data.studies[j];
        json row;
        row["id"] = s.study_id;
        for (const auto& [arm, key] : {std::pair{&s.arm_a, std::string("a")}, std::pair{&s.arm_b, std::string("b")}}) {
            if (arm->present()) {
                row["or_" + key] = ratio(arm->effect);
                row["ci_" + key] = ratio_ci(arm->effect - kZ975 * arm->std_err, arm->effect + kZ975 * arm->std_err);
            } else {
                row["or_" + key] = nullptr;
                row["ci_" + key] = nullptr;
            }
        }
        const auto c = contrast(s);
        if (c.present()) {
            row["ror"] = ratio(c.g);
            row["ci_ror"] = ratio_ci(c.g - kZ975 * c.std_err, c.g + kZ975 * c.std_err);
        } else {
            row["ror"] = nullptr;
            row["ci_ror"] = nullptr;
        }
        json w = json::object();
        for (const auto& sw : scheme_weights) w[to_string(sw.scheme)] = round_sig(sw.weights[j]);
        row["weights"] = w;
        studies.push_back(row);
    }
    json summary = json::array();
    for (const auto& r : results) {
        json row;
        row["label"] = r.label;
        row["method"] = to_string(r.method);
        row["or_a"] = r.has_betas ? ratio(r.beta_a.point) : json(nullptr);
        row["ci_a"] = r.has_betas ? ratio_ci(r.beta_a.ci_lower, r.beta_a.ci_upper) : json(nullptr);
        row["or_b"] = r.has_betas ? ratio(r.beta_b.point) : json(nullptr);
        row["ci_b"] = r.has_betas ? ratio_ci(r.beta_b.ci_lower, r.beta_b.ci_upper) : json(nullptr);
        row["ror"] = ratio(r.gamma.point);
        row["ci_ror"] = ratio_ci(r.gamma.ci_lower, r.gamma.ci_upper);
        summary.push_back(row);
    }
    return {{"label_a", data.label_a}, {"label_b", data.label_b}, {"studies", studies}, {"summary", summary}};
}

// ---------------------------------------------------------------------------

json to_json(const ScenarioConfig& c) {
    return {{"k", c.k},
            {"prevalence_scheme", to_string(c.prevalence_scheme)},
            {"tau1", c.tau1},
            {"tau2", c.tau2_value()},
            {"delta", c.delta},
            {"reps", c.reps},
            {"seed", c.seed},
            {"uisd", c.uisd},
            {"size_mu", c.size_mu},
            {"size_sigma", c.size_sigma},
            {"size_rho", c.size_rho},
            {"phi", c.phi},
            {"gamma_w", c.gamma_w},
            {"target", to_string(c.target)}};
}

json to_json(const ScenarioMetrics& m) {
    json methods = json::array();
    for (const auto& x : m.methods)
        methods.push_back({{"method", x.method},
                           {"n_ok", x.n_ok},
                           {"n_failed", x.n_failed},
                           {"coverage_gamma", x.coverage_gamma},
                           {"coverage_gamma_mcse", x.coverage_gamma_mcse},
                           {"coverage_beta", x.coverage_beta},
                           {"coverage_beta_mcse", x.coverage_beta_mcse},
                           {"width_ratio_gamma", x.width_ratio_gamma},
                           {"width_ratio_beta", x.width_ratio_beta},
                           {"mean_gamma_error", x.mean_gamma_error},
                           {"sd_gamma_error", x.sd_gamma_error},
                           {"mean_mismatch", x.mean_mismatch},
                           {"sd_mismatch", x.sd_mismatch}});
    return {{"config", to_json(m.config)},
            {"methods", methods},
            {"diagnostics",
             {{"replicates", m.diagnostics_ok},
              {"mean_delta_ce", m.mean_delta_ce},
              {"sd_delta_ce", m.sd_delta_ce},
              {"max_abs_delta_ce", m.max_abs_delta_ce},
              {"mean_delta_re", m.mean_delta_re},
              {"sd_delta_re", m.sd_delta_re},
              {"mean_aggbias_expected", m.mean_aggbias_expected},
              {"mean_da_error", m.mean_da_error},
              {"sd_da_error_minus_expected", m.sd_da_error_minus_expected}}}};
}

ScenarioConfig scenario_from_json(const json& j, ScenarioConfig c) {
    if (!j.is_object()) throw InputError("scenario must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "k") c.k = v.get<int>();
            else if (key == "prevalence_scheme") c.prevalence_scheme = parse_prevalence_scheme(v.get<std::string>());
            else if (key == "tau1") c.tau1 = v.get<double>();
            else if (key == "tau2") c.tau2 = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
            else if (key == "delta") c.delta = v.get<double>();
            else if (key == "reps") c.reps = v.get<int>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "uisd") c.uisd = v.get<double>();
            else if (key == "size_mu") c.size_mu = v.get<double>();
            else if (key == "size_sigma") c.size_sigma = v.get<double>();
            else if (key == "size_rho") c.size_rho = v.get<double>();
            else if (key == "phi") c.phi = v.get<double>();
            else if (key == "gamma_w") c.gamma_w = v.get<double>();
            else if (key == "target") c.target = parse_beta_target(v.get<std::string>());
            else throw InputError("unknown scenario field '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("bad scenario value: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<ScenarioConfig> expand_scenarios(const json& config, const ScenarioConfig& base) {
    if (!config.is_object()) throw InputError("config must be a JSON object");
    json shared = json::object();
    for (const auto& [key, v] : config.items())
        if (key != "grid" && key != "scenarios" && key != "methods") shared[key] = v;
    const ScenarioConfig common = scenario_from_json(shared, base);
    if (config.contains("grid") && config.contains("scenarios"))
        throw InputError("config may hold either 'grid' or 'scenarios', not both");

    std::vector<ScenarioConfig> out;
    if (config.contains("scenarios")) {
        for (const auto& s : config.at("scenarios")) out.push_back(scenario_from_json(s, common));
    } else if (config.contains("grid")) {
        std::vector<json> partial = {json::object()};
        for (const auto& [key, values] : config.at("grid").items()) {
            if (!values.is_array() || values.empty()) throw InputError("grid entry '" + key + "' must be a nonempty list");
            std::vector<json> next;
            for (const auto& p : partial)
                for (const auto& v : values) {
                    json q = p;
                    q[key] = v;
                    next.push_back(q);
                }
            partial = std::move(next);
        }
        for (const auto& p : partial) out.push_back(scenario_from_json(p, common));
    } else {
        out.push_back(common);
    }
    return out;
}

std::string metrics_csv_header() {
    return "k,prevalence_scheme,tau1,tau2,delta,reps,seed,method,n_ok,n_failed,coverage_gamma,coverage_gamma_mcse,"
           "coverage_beta,coverage_beta_mcse,width_ratio_gamma,width_ratio_beta,mean_gamma_error,sd_gamma_error,"
           "mean_mismatch,sd_mismatch\n";
}

std::string metrics_csv_rows(const ScenarioMetrics& m) {
    std::ostringstream out;
    const auto& c = m.config;
    for (const auto& x : m.methods) {
        out << c.k << ',' << to_string(c.prevalence_scheme) << ',' << fmt17(c.tau1) << ',' << fmt17(c.tau2_value())
            << ',' << fmt17(c.delta) << ',' << c.reps << ',' << c.seed << ',' << x.method << ',' << x.n_ok << ','
            << x.n_failed;
        for (double v : {x.coverage_gamma, x.coverage_gamma_mcse, x.coverage_beta, x.coverage_beta_mcse,
                         x.width_ratio_gamma, x.width_ratio_beta, x.mean_gamma_error, x.sd_gamma_error,
                         x.mean_mismatch, x.sd_mismatch})
            out << ',' << (std::isfinite(v) ? fmt17(v) : std::string());
        out << '\n';
    }
    return out.str();
}

std::uint64_t fnv1a_digest(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace submeta
