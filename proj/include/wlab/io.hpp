#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "wlab/cylindrical.hpp"
#include "wlab/doubling.hpp"
#include "wlab/errors.hpp"
#include "wlab/measure.hpp"
#include "wlab/model.hpp"

namespace wlab::io {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.3.0";

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// object keys are kept sorted by json, so dump() is canonical
inline std::string config_hash(const json& cfg) { return hex64(fnv1a(cfg.dump())); }

struct Header {
    std::string version = kVersion;
    std::uint64_t seed = 0;
    std::string config_hash;

    json to_json() const { return {{"version", version}, {"seed", seed}, {"config_hash", config_hash}}; }
    std::string csv_line() const {
        return "# lab version=" + version + " seed=" + std::to_string(seed) + " config_hash=" + config_hash + "\n";
    }
};

/// Writes via a sibling temp file and rename.
inline void atomic_write(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidInput("cannot open output file " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw InvalidInput("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw InvalidInput("cannot move output into place: " + ec.message());
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

// ---- strict field access

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
    if (!j.is_object()) throw InvalidInput(what + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw InvalidInput(what + ": unknown key '" + k + "'");
    }
}

inline const json& field(const json& j, const char* key, const std::string& what) {
    if (!j.contains(key)) throw InvalidInput(what + ": missing key '" + std::string(key) + "'");
    return j.at(key);
}

inline double num(const json& j, const std::string& what) {
    if (!j.is_number()) throw InvalidInput(what + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw InvalidInput(what + " must be finite");
    return v;
}

inline double num_or(const json& j, const char* key, double dflt, const std::string& what) {
    return j.contains(key) ? num(j.at(key), what + "." + key) : dflt;
}

inline Vec vec_of(const json& j, const std::string& what) {
    if (j.is_number()) return Vec::Constant(1, num(j, what));
    if (!j.is_array()) throw InvalidInput(what + " must be an array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = num(j[i], what);
    return v;
}

inline Mat mat_of(const json& j, const std::string& what) {
    if (j.is_number()) return Mat::Constant(1, 1, num(j, what));
    if (!j.is_array() || j.empty()) throw InvalidInput(what + " must be a nonempty array of rows");
    const auto rows = j.size();
    const auto cols = j[0].is_array() ? j[0].size() : 0;
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw InvalidInput(what + " rows must have equal length");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = num(j[r][c], what);
    }
    return m;
}

inline json to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json to_json(const Mat& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(row);
    }
    return a;
}

// ---- measures

inline json measure_to_json(const DiscreteMeasure& mu) {
    json pts = json::array();
    for (const auto& x : mu.points()) pts.push_back(to_json(x));
    return {{"dim", mu.dim()}, {"points", pts}, {"weights", mu.weights()}};
}

inline DiscreteMeasure measure_from_json(const json& j) {
    only_keys(j, {"dim", "points", "weights"}, "measure");
    const json& pts = field(j, "points", "measure");
    const json& w = field(j, "weights", "measure");
    if (!pts.is_array() || !w.is_array()) throw InvalidInput("measure: points and weights must be arrays");
    std::vector<Vec> points;
    for (const auto& p : pts) points.push_back(vec_of(p, "measure point"));
    std::vector<double> weights;
    for (const auto& x : w) weights.push_back(num(x, "measure weight"));
    DiscreteMeasure mu(std::move(points), std::move(weights));
    if (j.contains("dim") && num(j.at("dim"), "measure.dim") != mu.dim())
        throw InvalidInput("measure: dim does not match the point length");
    return mu;
}

inline DiscreteMeasure read_measure(const std::string& path) { return measure_from_json(read_json_file(path)); }

inline std::string measure_to_csv(const DiscreteMeasure& mu) {
    std::ostringstream os;
    os.precision(17);
    for (int k = 0; k < mu.dim(); ++k) os << "x" << (k + 1) << ",";
    os << "w\n";
    for (std::size_t i = 0; i < mu.size(); ++i) {
        for (int k = 0; k < mu.dim(); ++k) os << mu.point(i)[k] << ",";
        os << mu.weight(i) << "\n";
    }
    return os.str();
}

// ---- models

inline FilterModel model_from_json(const json& j) {
    const std::string kind = field(j, "kind", "model").get<std::string>();
    if (kind == "scalar_linear") {
        only_keys(j, {"kind", "a", "c", "g2", "eta", "bu", "control"}, "model");
        const double a = num(field(j, "a", "model"), "model.a"), c = num(field(j, "c", "model"), "model.c");
        const double g2 = num_or(j, "g2", 0.0, "model"), eta = num(field(j, "eta", "model"), "model.eta");
        if (j.contains("control")) {
            const Vec box = vec_of(j.at("control"), "model.control");
            if (box.size() != 2) throw InvalidInput("model.control must be [lo, hi]");
            return scalar_linear_model(a, c, g2, eta, num_or(j, "bu", 1.0, "model"), box[0], box[1], true);
        }
        return scalar_linear_model(a, c, g2, eta);
    }
    if (kind == "linear") {
        only_keys(j, {"kind", "A", "B", "c", "S1", "S2", "H", "control_lo", "control_hi"}, "model");
        LinearParts p;
        p.A = mat_of(field(j, "A", "model"), "model.A");
        const auto d = p.A.rows();
        p.c = j.contains("c") ? vec_of(j.at("c"), "model.c") : Vec::Zero(d);
        p.S1 = mat_of(field(j, "S1", "model"), "model.S1");
        p.S2 = mat_of(field(j, "S2", "model"), "model.S2");
        p.H = mat_of(field(j, "H", "model"), "model.H");
        Vec lo = j.contains("control_lo") ? vec_of(j.at("control_lo"), "model.control_lo") : Vec::Zero(0);
        Vec hi = j.contains("control_hi") ? vec_of(j.at("control_hi"), "model.control_hi") : Vec::Zero(0);
        p.B = j.contains("B") ? mat_of(j.at("B"), "model.B") : Mat::Zero(d, lo.size());
        return linear_model(p, lo, hi);
    }
    if (kind == "tanh") {
        only_keys(j, {"kind", "b0", "b1", "bu", "s10", "s11", "s20", "s21", "h0", "h1", "control_lo", "control_hi"},
                  "model");
        TanhParts p;
        p.b0 = vec_of(field(j, "b0", "model"), "model.b0");
        p.s10 = mat_of(field(j, "s10", "model"), "model.s10");
        p.s20 = mat_of(field(j, "s20", "model"), "model.s20");
        p.h0 = vec_of(field(j, "h0", "model"), "model.h0");
        for (const auto& x : field(j, "b1", "model")) p.b1.push_back(vec_of(x, "model.b1"));
        for (const auto& x : field(j, "s11", "model")) p.s11.push_back(mat_of(x, "model.s11"));
        for (const auto& x : field(j, "s21", "model")) p.s21.push_back(mat_of(x, "model.s21"));
        for (const auto& x : field(j, "h1", "model")) p.h1.push_back(vec_of(x, "model.h1"));
        Vec lo = j.contains("control_lo") ? vec_of(j.at("control_lo"), "model.control_lo") : Vec::Zero(0);
        Vec hi = j.contains("control_hi") ? vec_of(j.at("control_hi"), "model.control_hi") : Vec::Zero(0);
        p.bu = j.contains("bu") ? mat_of(j.at("bu"), "model.bu") : Mat::Zero(p.b0.size(), lo.size());
        return tanh_model(p, lo, hi);
    }
    throw InvalidInput("model: unknown kind '" + kind + "'");
}

inline Policy policy_from_json(const json& j) {
    const std::string kind = field(j, "kind", "policy").get<std::string>();
    if (kind == "none") {
        only_keys(j, {"kind"}, "policy");
        return no_control();
    }
    if (kind == "constant") {
        only_keys(j, {"kind", "g", "name"}, "policy");
        return constant_policy(vec_of(field(j, "g", "policy"), "policy.g"), j.value("name", "constant"));
    }
    if (kind == "mean_feedback") {
        only_keys(j, {"kind", "gain", "offset"}, "policy");
        return mean_feedback_policy(num(field(j, "gain", "policy"), "policy.gain"), num_or(j, "offset", 0.0, "policy"));
    }
    throw InvalidInput("policy: unknown kind '" + kind + "'");
}

inline RunningCost cost_from_json(const json& j) {
    const std::string kind = field(j, "kind", "cost").get<std::string>();
    if (kind == "constant") {
        only_keys(j, {"kind", "c"}, "cost");
        return constant_cost(num(field(j, "c", "cost"), "cost.c"));
    }
    if (kind == "linear_state") {
        only_keys(j, {"kind", "kappa", "bound"}, "cost");
        return linear_state_cost(num_or(j, "kappa", 0.0, "cost"), num(field(j, "bound", "cost"), "cost.bound"));
    }
    if (kind == "tanh") {
        only_keys(j, {"kind", "kappa", "target", "diam"}, "cost");
        return tanh_cost(num_or(j, "kappa", 0.5, "cost"), num_or(j, "target", 0.0, "cost"),
                         num_or(j, "diam", 2.0, "cost"));
    }
    throw InvalidInput("cost: unknown kind '" + kind + "'");
}

inline InnerFn inner_from_json(const json& j, int dim) {
    const std::string kind = field(j, "kind", "inner").get<std::string>();
    auto axis = [&] {
        const int a = static_cast<int>(num_or(j, "axis", 0.0, "inner"));
        if (a < 0 || a >= dim) throw InvalidInput("inner.axis out of range");
        return a;
    };
    if (kind == "sin") {
        only_keys(j, {"kind", "axis", "freq", "phase"}, "inner");
        return sin_inner(axis(), num_or(j, "freq", 1.0, "inner"), num_or(j, "phase", 0.0, "inner"));
    }
    if (kind == "tanh") {
        only_keys(j, {"kind", "axis", "scale"}, "inner");
        return tanh_inner(axis(), num_or(j, "scale", 1.0, "inner"));
    }
    if (kind == "bump") {
        only_keys(j, {"kind", "center", "width"}, "inner");
        const Vec c = vec_of(field(j, "center", "inner"), "inner.center");
        if (c.size() != dim) throw InvalidInput("inner.center has the wrong dimension");
        return bump_inner(c, num(field(j, "width", "inner"), "inner.width"));
    }
    if (kind == "linear") {
        only_keys(j, {"kind", "a", "c"}, "inner");
        const Vec a = vec_of(field(j, "a", "inner"), "inner.a");
        if (a.size() != dim) throw InvalidInput("inner.a has the wrong dimension");
        return linear_inner(a, num_or(j, "c", 0.0, "inner"));
    }
    if (kind == "square") {
        only_keys(j, {"kind"}, "inner");
        return square_inner();
    }
    if (kind == "constant") {
        only_keys(j, {"kind", "c"}, "inner");
        return constant_inner(num(field(j, "c", "inner"), "inner.c"));
    }
    throw InvalidInput("inner: unknown kind '" + kind + "'");
}

inline CylindricalFn cylindrical_from_json(const json& j, int dim) {
    const std::string kind = field(j, "kind", "cylindrical").get<std::string>();
    auto inners = [&] {
        std::vector<InnerFn> out;
        for (const auto& x : field(j, "inner", "cylindrical")) out.push_back(inner_from_json(x, dim));
        if (out.empty()) throw InvalidInput("cylindrical.inner must be nonempty");
        return out;
    };
    if (kind == "linear" || kind == "square") {
        only_keys(j, {"kind", "inner"}, "cylindrical");
        const auto in = inners();
        if (in.size() != 1) throw InvalidInput("cylindrical: " + kind + " takes exactly one inner function");
        return kind == "linear" ? linear_cylindrical(in[0]) : square_cylindrical(in[0]);
    }
    if (kind == "expcos") {
        only_keys(j, {"kind", "inner"}, "cylindrical");
        const auto in = inners();
        if (in.size() != 2) throw InvalidInput("cylindrical: expcos takes two inner functions");
        return expcos_cylindrical(in[0], in[1]);
    }
    if (kind == "quadratic") {
        only_keys(j, {"kind", "inner", "c", "Q", "k"}, "cylindrical");
        auto in = inners();
        const auto n = static_cast<Eigen::Index>(in.size());
        const Vec c = j.contains("c") ? vec_of(j.at("c"), "cylindrical.c") : Vec::Zero(n);
        const Mat Q = j.contains("Q") ? mat_of(j.at("Q"), "cylindrical.Q") : Mat::Zero(n, n);
        if (c.size() != n || Q.rows() != n || Q.cols() != n) throw InvalidInput("cylindrical: c/Q shape mismatch");
        return quadratic_cylindrical(std::move(in), c, Q, num_or(j, "k", 0.0, "cylindrical"));
    }
    if (kind == "constant") {
        only_keys(j, {"kind", "k"}, "cylindrical");
        return constant_cylindrical(num(field(j, "k", "cylindrical"), "cylindrical.k"), dim);
    }
    throw InvalidInput("cylindrical: unknown kind '" + kind + "'");
}

/// Functionals u1, u2 of the doubling problem.
inline MeasureFunctional functional_from_json(const json& j) {
    const std::string kind = field(j, "kind", "functional").get<std::string>();
    if (kind == "tanh") {
        only_keys(j, {"kind", "shift", "scale"}, "functional");
        return tanh_functional(num_or(j, "shift", 0.0, "functional"), num_or(j, "scale", 1.0, "functional"));
    }
    if (kind == "zero") {
        only_keys(j, {"kind"}, "functional");
        return zero_functional();
    }
    if (kind == "bump") {
        only_keys(j, {"kind", "center", "width"}, "functional");
        return bump_functional(vec_of(field(j, "center", "functional"), "functional.center"),
                               num(field(j, "width", "functional"), "functional.width"));
    }
    throw InvalidInput("functional: unknown kind '" + kind + "'");
}

// ---- derivative bundles

inline json bundle_to_json(const DerivativeBundle& b) {
    json out;
    json xs = json::array(), ys = json::array(), lions = json::array(), lg = json::array();
    for (const auto& x : b.x) xs.push_back(to_json(x));
    for (const auto& y : b.y) ys.push_back(to_json(y));
    for (const auto& v : b.lions) lions.push_back(to_json(v));
    for (const auto& m : b.lions_grad) lg.push_back(to_json(m));
    out["x"] = xs;
    out["y"] = ys;
    out["first_var"] = b.first_var;
    out["second_var"] = b.second_var;
    out["lions"] = lions;
    out["lions_grad"] = lg;
    return out;
}

/// Splits "a,b,c" into doubles.
inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw InvalidInput(what + ": cannot parse '" + tok + "'");
        }
    }
    if (out.empty()) throw InvalidInput(what + " is empty");
    return out;
}

}  // namespace wlab::io
