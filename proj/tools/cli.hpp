#pragma once

// Command-line front end. run() is the whole program minus process setup, so
// tests can drive it with string streams.

#include "balmatch/balmatch.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace balmatch::cli {

inline constexpr const char* kVersion = "0.1.0";

using nlohmann::json;

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

inline std::string read_source(const std::string& path, std::istream& stdin_stream) {
    if (path == "-") return {std::istreambuf_iterator<char>(stdin_stream), std::istreambuf_iterator<char>()};
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Minimal fixed-width text table.
class TextTable {
public:
    explicit TextTable(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
    void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

    std::string render() const {
        std::vector<std::size_t> width;
        for (const auto& r : rows_)
            for (std::size_t c = 0; c < r.size(); ++c) {
                if (width.size() <= c) width.push_back(0);
                width[c] = std::max(width[c], r[c].size());
            }
        std::string out;
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            for (std::size_t c = 0; c < rows_[i].size(); ++c) {
                if (c) out += " | ";
                out += rows_[i][c];
                if (c + 1 < rows_[i].size()) out.append(width[c] - rows_[i][c].size(), ' ');
            }
            out += '\n';
            if (i == 0) {
                std::size_t total = 0;
                for (auto w : width) total += w;
                out.append(total + 3 * (width.size() - 1), '-');
                out += '\n';
            }
        }
        return out;
    }

private:
    std::vector<std::vector<std::string>> rows_;
};

inline std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

inline std::string percent(const Rational& r) { return to_decimal_string(r * 100, 1) + "%"; }

inline std::string p_value_text(const TestReport& t) {
    if (t.p_value < 0.0001) return "<0.0001";
    return fixed(t.p_value, 4);
}

struct Options {
    std::string input;
    int precision = kDefaultPrecision;
    std::string format = "json";
    std::optional<std::uint64_t> seed;
    std::size_t iterations = 0;
    std::string mode;
    std::size_t guard = kDefaultOracleGuard;
    std::string sort_key;
    bool reverse = false;
    std::string equality = "covariate";
    double epsilon = 1e-12;
    std::string model_path;
    std::string output;
    double tolerance = 1e-8;
    int max_iterations = 100;
    double collision_tolerance = 1e-9;
    unsigned threads = 1;
    std::string path = "indexed";
    std::string test;
    std::vector<double> counts;
    std::string kind;
};

class Runner {
public:
    Runner(const Options& o, std::istream& in, std::ostream& out) : o_(o), in_(in), out_(out) {}

    int dispatch(const std::string& command) {
        command_ = command;
        if (o_.format != "json" && o_.format != "csv" && o_.format != "table")
            throw ValidationError("--format must be json, csv or table");
        if (command == "fit") return fit();
        if (command == "psm") return psm();
        if (command == "extreme") return extreme();
        if (command == "bootstrap") return bootstrap();
        if (command == "dbsem") return run_dbsem();
        if (command == "oracle") return oracle();
        if (command == "stats") return stats();
        if (command == "pitfall") return pitfall();
        if (command == "synth") return synth();
        throw ValidationError("unknown command '" + command + "'");
    }

private:
    const Options& o_;
    std::istream& in_;
    std::ostream& out_;
    std::string command_;
    std::string digest_;
    json flags_ = json::object();

    Cohort load() {
        const std::string bytes = read_source(o_.input, in_);
        digest_ = sha256_hex(bytes);
        Cohort c = parse_cohort(std::string_view(bytes), o_.precision);
        if (!o_.sort_key.empty()) c = permute(c, parse_sort_key(o_.sort_key));
        if (o_.reverse) c = reversed(c);
        flags_["precision"] = o_.precision;
        flags_["sort_key"] = o_.sort_key;
        flags_["reverse"] = o_.reverse;
        return c;
    }

    json provenance() const {
        json p = {{"tool", "balmatch"}, {"version", kVersion}, {"command", command_}, {"flags", flags_}};
        p["input_sha256"] = digest_.empty() ? json(nullptr) : json(digest_);
        p["seed"] = o_.seed ? json(*o_.seed) : json(nullptr);
        return p;
    }

    std::string provenance_comment() const {
        std::string s = "# balmatch " + std::string(kVersion) + " " + command_ + "\n";
        if (!digest_.empty()) s += "# input_sha256 " + digest_ + "\n";
        s += "# flags " + flags_.dump() + "\n";
        if (o_.seed) s += "# seed " + std::to_string(*o_.seed) + "\n";
        return s;
    }

    int emit_json(const json& result) {
        out_ << json{{"provenance", provenance()}, {"result", result}}.dump(2) << '\n';
        return 0;
    }

    int emit_text(const std::string& body) {
        out_ << provenance_comment() << body;
        return 0;
    }

    PropensityModel load_model(const Cohort& c) {
        if (o_.model_path.empty()) {
            flags_["model"] = "fit";
            return fit_logistic(c, FitOptions{o_.tolerance, o_.max_iterations});
        }
        flags_["model"] = o_.model_path;
        json j;
        try {
            j = json::parse(read_source(o_.model_path, in_));
        } catch (const json::parse_error& e) {
            throw ValidationError(std::string("model file: ") + e.what());
        }
        return model_from_json(j);
    }

    static json rate_row(const std::string& label, const RateSummary& s, const TestReport& t) {
        return {{"label", label}, {"rates", to_json(s)}, {"test", to_json(t)}};
    }

    static void table_row(TextTable& t, const std::string& label, const RateSummary& s, const TestReport& test) {
        t.add({label, to_decimal_string(s.deaths_a, 2), percent(s.rate_a), to_decimal_string(s.deaths_b, 2),
               percent(s.rate_b), p_value_text(test)});
    }

    static TextTable rate_table(const std::string& title, const std::string& test_name) {
        return TextTable({title, "A count", "A %", "B count", "B %", test_name + " p-value"});
    }

    int fit() {
        const Cohort c = load();
        flags_["tolerance"] = o_.tolerance;
        flags_["max_iterations"] = o_.max_iterations;
        flags_["collision_tolerance"] = o_.collision_tolerance;
        const PropensityModel m = fit_logistic(c, FitOptions{o_.tolerance, o_.max_iterations});
        const CollisionReport col = detect_coefficient_collisions(m, o_.collision_tolerance);
        if (o_.format == "json") return emit_json({{"model", to_json(m)}, {"collisions", to_json(col)}});
        if (o_.format == "csv") {
            std::string body = "term,coefficient\nintercept," + fixed(m.coefficients[0], 12) + "\n";
            for (std::size_t k = 0; k < m.kept_columns.size(); ++k)
                body += "cv_" + std::to_string(m.kept_columns[k] + 1) + "," + fixed(m.coefficients[k + 1], 12) + "\n";
            return emit_text(body);
        }
        TextTable t({"term", "coefficient"});
        t.add({"intercept", fixed(m.coefficients[0], 8)});
        for (std::size_t k = 0; k < m.kept_columns.size(); ++k)
            t.add({"cv_" + std::to_string(m.kept_columns[k] + 1), fixed(m.coefficients[k + 1], 8)});
        std::string body = t.render();
        body += "converged: " + std::string(m.converged ? "yes" : "no") + ", separation: " +
                (m.separation ? "yes" : "no") + ", iterations: " + std::to_string(m.iterations) +
                ", gradient norm: " + fixed(m.gradient_norm, 12) + "\n";
        body += "coefficient collisions: " + std::to_string(col.total) + (col.complete ? "" : " (sampled search)") + "\n";
        return emit_text(body);
    }

    Equality equality(const Cohort& c) {
        flags_["equality"] = o_.equality;
        if (o_.equality == "covariate") return Equality::covariates();
        if (o_.equality != "propensity") throw ValidationError("--equality must be covariate or propensity");
        flags_["epsilon"] = o_.epsilon;
        return Equality::propensity(load_model(c), o_.epsilon);
    }

    void write_export(const Matching& m, const Cohort& c) {
        std::ofstream csv(o_.output, std::ios::binary);
        if (!csv) throw ValidationError("cannot write '" + o_.output + "'");
        csv << to_csv(m, c);
        std::ofstream side(o_.output + ".json", std::ios::binary);
        json sc = sidecar_json(m);
        sc["provenance"] = provenance();
        side << sc.dump(2) << '\n';
    }

    int psm() {
        const Cohort c = load();
        const std::string mode = o_.mode.empty() ? "greedy" : o_.mode;
        flags_["mode"] = mode;
        if (mode == "greedy") {
            const Matching m = greedy_exact_psm(c, equality(c), o_.seed);
            if (!o_.output.empty()) {
                flags_["output"] = o_.output;
                write_export(m, c);
            }
            if (o_.format == "csv") return emit_text(to_csv(m, c));
            json result = to_json(m, c);
            std::optional<RateSummary> rates;
            if (c.binary_outcomes()) {
                rates = rate_summary(m, c);
                result["rates"] = to_json(*rates);
                result["chi_square"] = to_json(chi_square(*rates));
            }
            if (o_.format == "json") return emit_json(result);
            std::string body = "pairs: " + std::to_string(m.pairs.size()) + "\n";
            if (rates) {
                auto t = rate_table(std::to_string(m.pairs.size()) + " exact matchings", "chi2");
                table_row(t, "greedy", *rates, chi_square(*rates));
                body += t.render();
            }
            return emit_text(body);
        }
        if (mode != "replacement") throw ValidationError("psm --mode must be greedy or replacement");
        const ReplacementMatching r = exact_psm_with_replacement(c);
        if (o_.format == "csv") {
            std::string body = "direction,a_id,b_id\n";
            for (const auto& p : r.a_to_b.pairs) body += "a_to_b," + c[p.a].id + "," + c[p.b].id + "\n";
            for (const auto& p : r.b_to_a.pairs) body += "b_to_a," + c[p.a].id + "," + c[p.b].id + "\n";
            return emit_text(body);
        }
        json result = {{"a_to_b", to_json(r.a_to_b, c)}, {"b_to_a", to_json(r.b_to_a, c)}, {"total_matches", r.total()}};
        if (c.binary_outcomes()) {
            result["a_to_b"]["rates"] = to_json(rate_summary(r.a_to_b, c));
            result["b_to_a"]["rates"] = to_json(rate_summary(r.b_to_a, c));
        }
        if (o_.format == "json") return emit_json(result);
        std::string body = "matches A->B: " + std::to_string(r.a_to_b.pairs.size()) +
                           ", B->A: " + std::to_string(r.b_to_a.pairs.size()) +
                           ", total: " + std::to_string(r.total()) + "\n";
        return emit_text(body);
    }

    int extreme() {
        const Cohort c = load();
        std::vector<std::pair<std::string, ExtremeMode>> modes;
        const std::string mode = o_.mode.empty() ? "all" : o_.mode;
        flags_["mode"] = mode;
        const std::pair<std::string, ExtremeMode> all[] = {{"best_best", ExtremeMode::best_best},
                                                           {"worst_worst", ExtremeMode::worst_worst},
                                                           {"best_a_worst_b", ExtremeMode::best_a_worst_b},
                                                           {"worst_a_best_b", ExtremeMode::worst_a_best_b}};
        if (mode == "all") modes.assign(std::begin(all), std::end(all));
        else modes.emplace_back(mode, parse_extreme_mode(mode));

        json rows = json::array();
        std::string csv = "mode,a_id,b_id\n";
        auto table = rate_table("exact matchings", "chi2");
        for (const auto& [name, m] : modes) {
            const Matching match = extreme_matching(c, m);
            const RateSummary s = rate_summary(match, c);
            const TestReport t = chi_square(s);
            json row = rate_row(name, s, t);
            if (modes.size() == 1) row["matching"] = to_json(match, c);
            rows.push_back(row);
            for (const auto& p : match.pairs) csv += name + "," + c[p.a].id + "," + c[p.b].id + "\n";
            table_row(table, name, s, t);
        }
        if (o_.format == "json") return emit_json({{"rows", rows}});
        if (o_.format == "csv") return emit_text(csv);
        return emit_text(table.render());
    }

    int bootstrap() {
        if (!o_.seed) throw ValidationError("seed required for bootstrap (--seed or BALMATCH_SEED)");
        if (o_.iterations < 1) throw ValidationError("bootstrap: --iterations must be >= 1");
        const Cohort c = load();
        flags_["iterations"] = o_.iterations;
        const BootstrapReport r = uniform_bootstrap_psm(c, o_.iterations, *o_.seed, o_.threads);
        json result = to_json(r);
        std::optional<TestReport> t;
        if (r.pairs_per_iteration > 0) {
            const double n = static_cast<double>(r.pairs_per_iteration);
            t = t_test_two_sample(WeightedMoments::binary(r.mean_deaths_a, n), WeightedMoments::binary(r.mean_deaths_b, n));
            result["t_test"] = to_json(*t);
        }
        if (o_.format == "json") return emit_json(result);
        if (o_.format == "csv") {
            std::string body = "iteration,deaths_a,deaths_b\n";
            for (std::size_t i = 0; i < r.iterations; ++i)
                body += std::to_string(i) + "," + format_fixed(r.deaths_a[i], c.precision()) + "," +
                        format_fixed(r.deaths_b[i], c.precision()) + "\n";
            return emit_text(body);
        }
        TextTable table({"uniform bootstrap (" + std::to_string(r.iterations) + " samples)", "A count", "A %", "B count",
                         "B %", "t-test p-value"});
        table.add({std::to_string(r.pairs_per_iteration) + " pairs per sample", fixed(r.mean_deaths_a, 2),
                   fixed(100 * r.mean_rate_a, 2) + "%", fixed(r.mean_deaths_b, 2), fixed(100 * r.mean_rate_b, 2) + "%",
                   t ? p_value_text(*t) : "-"});
        return emit_text(table.render());
    }

    int run_dbsem() {
        const Cohort c = load();
        flags_["path"] = o_.path;
        ClusteringPath path = ClusteringPath::indexed;
        if (o_.path == "quadratic") path = ClusteringPath::quadratic;
        else if (o_.path != "indexed") throw ValidationError("--path must be indexed or quadratic");
        const DbsemResult r = dbsem(c, path);
        json result = to_json(r);
        std::optional<TestReport> t;
        if (c.binary_outcomes() && r.result.matched_pairs_total > 0) {
            const auto [ma, mb] = weighted_moments(r);
            t = t_test_two_sample(ma, mb);
            result["t_test"] = to_json(*t);
        }
        if (o_.format == "json") return emit_json(result);
        if (o_.format == "csv") {
            std::string body = "cv,size_a,size_b,S,w_a,w_b,deaths_a,deaths_b\n";
            for (const auto& m : r.matching.matched) {
                std::string cv;
                for (std::size_t i = 0; i < m.a.cv.size(); ++i)
                    cv += (i ? ";" : "") + format_fixed(m.a.cv[i], c.precision());
                body += cv + "," + std::to_string(m.a.size()) + "," + std::to_string(m.b.size()) + "," +
                        std::to_string(m.pairs) + "," + to_fraction_string(m.w_a) + "," + to_fraction_string(m.w_b) +
                        "," + to_fraction_string(m.a.outcome_sum) + "," + to_fraction_string(m.b.outcome_sum) + "\n";
            }
            return emit_text(body);
        }
        TextTable table({std::to_string(r.result.matched_pairs_total) + " matched pairs", "A count", "A %", "B count",
                         "B %", "t-test p-value"});
        table.add({"min-weighted DBSeM", to_decimal_string(r.result.r_a, 2), percent(r.result.rate_a),
                   to_decimal_string(r.result.r_b, 2), percent(r.result.rate_b), t ? p_value_text(*t) : "-"});
        std::string body = table.render();
        body += "clusters: k=" + std::to_string(r.matching.k) + " l=" + std::to_string(r.matching.l) +
                ", matched: " + std::to_string(r.matching.matched.size()) + "\n";
        body += "usage A: " + percent(r.usage.member_fraction_a) + " of patients in matched clusters, " +
                percent(r.usage.pairs_fraction_a) + " as 1:1 pairs\n";
        body += "usage B: " + percent(r.usage.member_fraction_b) + " of patients in matched clusters, " +
                percent(r.usage.pairs_fraction_b) + " as 1:1 pairs\n";
        return emit_text(body);
    }

    int oracle() {
        const Cohort c = load();
        flags_["guard"] = o_.guard;
        const ExactExpectation e = enumerate_expectation(c, o_.guard);
        const DbsemResult d = dbsem(c);
        const bool agree = e.feasible && e.e_a == d.result.r_a && e.e_b == d.result.r_b;
        json result = to_json(e);
        result["dbsem_r_a"] = to_fraction_string(d.result.r_a);
        result["dbsem_r_b"] = to_fraction_string(d.result.r_b);
        result["agrees_with_dbsem"] = agree;
        if (o_.format == "json") return emit_json(result);
        if (o_.format == "csv")
            return emit_text("e_a,e_b,r_a,r_b,feasible,agrees\n" + to_fraction_string(e.e_a) + "," +
                             to_fraction_string(e.e_b) + "," + to_fraction_string(d.result.r_a) + "," +
                             to_fraction_string(d.result.r_b) + "," + (e.feasible ? "1" : "0") + "," +
                             (agree ? "1" : "0") + "\n");
        TextTable t({"", "A", "B"});
        t.add({"enumerated expectation", to_fraction_string(e.e_a), to_fraction_string(e.e_b)});
        t.add({"min-weighted DBSeM", to_fraction_string(d.result.r_a), to_fraction_string(d.result.r_b)});
        return emit_text(t.render() + "feasible: " + (e.feasible ? "yes" : "no") +
                         ", agree: " + (agree ? "yes" : "no") + "\n");
    }

    int stats() {
        flags_["test"] = o_.test;
        flags_["counts"] = o_.counts;
        if (o_.counts.size() != 4) throw ValidationError("stats: --counts needs deaths_a,n_a,deaths_b,n_b");
        const double da = o_.counts[0], na = o_.counts[1], db = o_.counts[2], nb = o_.counts[3];
        TestReport r;
        if (o_.test == "chi_square") r = chi_square_2x2(da, na, db, nb);
        else if (o_.test == "t_test") r = t_test_two_sample(WeightedMoments::binary(da, na), WeightedMoments::binary(db, nb));
        else throw ValidationError("stats: test must be chi_square or t_test");
        if (o_.format == "json") return emit_json(to_json(r));
        if (o_.format == "csv")
            return emit_text("test,statistic,df,p_value\n" + o_.test + "," + fixed(r.statistic, 8) + "," +
                             fixed(r.df, 4) + "," + fixed(r.p_value, 8) + "\n");
        TextTable t({"test", "statistic", "df", "p-value"});
        t.add({o_.test, fixed(r.statistic, 4), fixed(r.df, 1), p_value_text(r)});
        return emit_text(t.render());
    }

    json sort_order_demo(const Cohort& c, std::string& text) {
        const Cohort other_order = o_.sort_key.empty() ? reversed(c) : permute(c, parse_sort_key(o_.sort_key));
        const std::string other_label = o_.sort_key.empty() ? "reversed rows" : "sorted by " + o_.sort_key;
        json orders = json::array();
        auto table = rate_table("greedy exact PSM", "chi2");
        std::vector<RateSummary> sums;
        std::vector<std::string> reports;
        for (const auto& [label, cohort] : {std::pair<std::string, const Cohort*>{"input order", &c},
                                            std::pair<std::string, const Cohort*>{other_label, &other_order}}) {
            const RateSummary s = rate_summary(greedy_exact_psm(*cohort), *cohort);
            const DbsemResult d = dbsem(*cohort);
            reports.push_back(to_json(d).dump());
            orders.push_back({{"order", label},
                              {"greedy", to_json(s)},
                              {"dbsem_r_a", rational_json(d.result.r_a)},
                              {"dbsem_r_b", rational_json(d.result.r_b)}});
            table_row(table, label, s, chi_square(s));
            sums.push_back(s);
        }
        const bool greedy_differs = sums[0].deaths_a != sums[1].deaths_a || sums[0].deaths_b != sums[1].deaths_b;
        const bool dbsem_identical = reports[0] == reports[1];
        text += "== sort order ==\n" + table.render();
        text += "greedy results differ: " + std::string(greedy_differs ? "yes" : "no") +
                "; DBSeM report identical: " + (dbsem_identical ? "yes" : "no") + "\n";
        const DbsemResult d = dbsem(c);
        text += "DBSeM: A " + to_decimal_string(d.result.r_a, 2) + ", B " + to_decimal_string(d.result.r_b, 2) + "\n";
        return {{"orders", orders}, {"greedy_differs", greedy_differs}, {"dbsem_identical", dbsem_identical}};
    }

    json randomness_demo(const Cohort& c, std::string& text) {
        const std::uint64_t base = o_.seed.value_or(1);
        json runs = json::array();
        auto table = rate_table("seeded greedy PSM", "chi2");
        std::set<std::pair<Rational, Rational>> distinct;
        for (std::uint64_t k = 0; k < 5; ++k) {
            const RateSummary s = rate_summary(greedy_exact_psm(c, Equality::covariates(), base + k), c);
            runs.push_back({{"seed", base + k}, {"rates", to_json(s)}});
            table_row(table, "seed " + std::to_string(base + k), s, chi_square(s));
            distinct.emplace(s.deaths_a, s.deaths_b);
        }
        text += "== randomness of choice ==\n" + table.render();
        text += "distinct outcomes over 5 seeds: " + std::to_string(distinct.size()) + "\n";
        return {{"runs", runs}, {"distinct_outcomes", distinct.size()}};
    }

    json usage_demo(const Cohort& c, std::string& text) {
        const Matching g = greedy_exact_psm(c);
        const ReplacementMatching r = exact_psm_with_replacement(c);
        const DbsemResult d = dbsem(c);
        const Rational used_a = c.count_a() ? Rational(g.pairs.size(), c.count_a()) : Rational(0);
        const Rational used_b = c.count_b() ? Rational(g.pairs.size(), c.count_b()) : Rational(0);
        text += "== incomplete data usage ==\n";
        text += "greedy 1:1 pairs: " + std::to_string(g.pairs.size()) + " (A " + percent(used_a) + ", B " +
                percent(used_b) + " of patients)\n";
        text += "patients in matched clusters: A " + percent(d.usage.member_fraction_a) + ", B " +
                percent(d.usage.member_fraction_b) + "\n";
        text += "with replacement: " + std::to_string(r.a_to_b.pairs.size()) + " A->B + " +
                std::to_string(r.b_to_a.pairs.size()) + " B->A = " + std::to_string(r.total()) + " matches\n";
        return {{"greedy_pairs", g.pairs.size()},
                {"greedy_fraction_a", rational_json(used_a)},
                {"greedy_fraction_b", rational_json(used_b)},
                {"dbsem_usage",
                 {{"member_fraction_a", rational_json(d.usage.member_fraction_a)},
                  {"member_fraction_b", rational_json(d.usage.member_fraction_b)},
                  {"pairs_fraction_a", rational_json(d.usage.pairs_fraction_a)},
                  {"pairs_fraction_b", rational_json(d.usage.pairs_fraction_b)}}},
                {"replacement_a_to_b", r.a_to_b.pairs.size()},
                {"replacement_b_to_a", r.b_to_a.pairs.size()}};
    }

    json collision_demo(const Cohort& c, std::string& text) {
        const PropensityModel m = load_model(c);
        flags_["epsilon"] = o_.epsilon;
        flags_["collision_tolerance"] = o_.collision_tolerance;
        const CollisionReport col = detect_coefficient_collisions(m, o_.collision_tolerance);
        const Matching by_ps = greedy_exact_psm(c, Equality::propensity(m, o_.epsilon));
        const Matching by_cv = greedy_exact_psm(c);
        std::size_t spurious = 0;
        for (const auto& p : by_ps.pairs)
            if (manhattan(c[p.a], c[p.b]) != 0) ++spurious;
        text += "== coefficient collisions ==\n";
        text += "colliding index-set pairs: " + std::to_string(col.total) + (col.complete ? "" : " (sampled search)") + "\n";
        text += "PS-equality pairs: " + std::to_string(by_ps.pairs.size()) + " (" + std::to_string(spurious) +
                " with unequal covariates); covariate-equality pairs: " + std::to_string(by_cv.pairs.size()) + "\n";
        return {{"collisions", to_json(col)},
                {"ps_pairs", by_ps.pairs.size()},
                {"spurious_pairs", spurious},
                {"covariate_pairs", by_cv.pairs.size()}};
    }

    int pitfall() {
        const Cohort c = load();
        const std::string kind = o_.kind.empty() ? "all" : o_.kind;
        flags_["kind"] = kind;
        const bool all = kind == "all";
        if (!all && kind != "sort-order" && kind != "randomness" && kind != "incomplete-usage" && kind != "collision")
            throw ValidationError("pitfall: kind must be sort-order, randomness, incomplete-usage, collision or all");
        const bool binary = c.binary_outcomes();
        if (!binary && (all || kind == "sort-order" || kind == "randomness"))
            throw ValidationError("pitfall: sort-order and randomness demonstrations need binary outcomes");
        json result = json::object();
        std::string text;
        if (all || kind == "sort-order") result["sort_order"] = sort_order_demo(c, text);
        if (all || kind == "randomness") result["randomness"] = randomness_demo(c, text);
        if (all || kind == "incomplete-usage") result["incomplete_usage"] = usage_demo(c, text);
        if (all || kind == "collision") result["collision"] = collision_demo(c, text);
        if (o_.format == "json") return emit_json(result);
        return emit_text(text);
    }

    int synth() {
        const std::string bytes = read_source(o_.input, in_);
        digest_ = sha256_hex(bytes);
        json j;
        try {
            j = json::parse(bytes);
        } catch (const json::parse_error& e) {
            throw ValidationError(std::string("synth spec: ") + e.what());
        }
        SynthSpec spec = synth_spec_from_json(j);
        if (o_.seed) spec.seed = *o_.seed;
        const Cohort c = synthesize(spec);
        if (o_.format == "json") {
            return emit_json({{"patients", c.size()}, {"a", c.count_a()}, {"b", c.count_b()},
                              {"cohort", serialize_cohort(c)}});
        }
        return emit_text(serialize_cohort(c));
    }
};

/// Exit status: 0 success, 1 validation error, 2 internal error.
inline int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"balmatch: exact statistical matching toolkit", "balmatch"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto common = [&](CLI::App* sub, bool needs_input = true) {
        if (needs_input) sub->add_option("input", o.input, "Cohort file (- for stdin)")->required();
        sub->add_option("--precision", o.precision, "Decimal places of fixed-point values")->envname("BALMATCH_PRECISION");
        sub->add_option("--format", o.format, "json, csv or table")->envname("BALMATCH_FORMAT");
        sub->add_option("--seed", o.seed, "64-bit seed")->envname("BALMATCH_SEED");
        sub->add_option("--sort-key", o.sort_key, "Reorder rows first, e.g. cv_1:desc");
        sub->add_flag("--reverse", o.reverse, "Reverse row order first");
    };

    auto* fit = app.add_subcommand("fit", "Fit the logistic propensity model and check coefficient collisions");
    common(fit);
    fit->add_option("--tolerance", o.tolerance, "Gradient-norm tolerance");
    fit->add_option("--max-iterations", o.max_iterations);
    fit->add_option("--collision-tolerance", o.collision_tolerance);

    auto* psm = app.add_subcommand("psm", "Greedy or with-replacement exact 1:1 matching");
    common(psm);
    psm->add_option("--mode", o.mode, "greedy or replacement")->envname("BALMATCH_MODE");
    psm->add_option("--equality", o.equality, "covariate or propensity");
    psm->add_option("--epsilon", o.epsilon, "PS tolerance for --equality propensity");
    psm->add_option("--model", o.model_path, "Model JSON (default: fit on the input)");
    psm->add_option("--output", o.output, "Write a_id,b_id CSV here plus a .json sidecar");
    psm->add_option("--tolerance", o.tolerance);
    psm->add_option("--max-iterations", o.max_iterations);

    auto* extreme = app.add_subcommand("extreme", "Best/worst-case exact matchings");
    common(extreme);
    extreme->add_option("--mode", o.mode, "best_best, worst_worst, best_a_worst_b, worst_a_best_b or all")
        ->envname("BALMATCH_MODE");

    auto* boot = app.add_subcommand("bootstrap", "Uniformly bootstrapped exact matching");
    common(boot);
    boot->add_option("--iterations", o.iterations)->envname("BALMATCH_ITERATIONS");
    boot->add_option("--threads", o.threads)->envname("BALMATCH_THREADS");

    auto* db = app.add_subcommand("dbsem", "Cluster-based exact matching with min-weighting");
    common(db);
    db->add_option("--path", o.path, "indexed or quadratic");

    auto* orc = app.add_subcommand("oracle", "Enumerated bootstrap expectation vs DBSeM");
    common(orc);
    orc->add_option("--guard", o.guard, "Largest stratum side to enumerate")->envname("BALMATCH_GUARD");

    auto* st = app.add_subcommand("stats", "Chi-square or t-test from counts");
    common(st, false);
    st->add_option("test", o.test, "chi_square or t_test")->required();
    st->add_option("--counts", o.counts, "deaths_a,n_a,deaths_b,n_b")->delimiter(',')->required();

    auto* pit = app.add_subcommand("pitfall", "Demonstrate matching pitfalls");
    pit->add_option("kind", o.kind, "sort-order, randomness, incomplete-usage, collision or all")->required();
    common(pit);
    pit->add_option("--model", o.model_path);
    pit->add_option("--epsilon", o.epsilon);
    pit->add_option("--collision-tolerance", o.collision_tolerance);

    auto* syn = app.add_subcommand("synth", "Generate a synthetic cohort from a JSON spec");
    common(syn);

    std::vector<std::string> reversed_args(args.rbegin(), args.rend());
    try {
        app.parse(reversed_args);
    } catch (const CLI::ParseError& e) {
        // Help and version requests exit 0; every other parse failure is a usage error.
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        Runner runner(o, in, out);
        return runner.dispatch(command);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace balmatch::cli
