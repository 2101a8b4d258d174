#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "slotlab/errors.hpp"
#include "slotlab/multi_index.hpp"
#include "slotlab/network.hpp"
#include "slotlab/slots.hpp"

namespace slotlab {

// Multivariate polynomial map R^in -> R^out with a dense coefficient table over
// an explicit monomial list. Derivatives are exact up to order 3.
struct PolyMap {
    int in_dim = 1;
    int out_dim = 1;
    std::vector<MultiIndex> alphas; // each of length in_dim
    Eigen::MatrixXd coef;           // out_dim x alphas.size()

    static PolyMap zero(int in, int out) {
        PolyMap p;
        p.in_dim = in;
        p.out_dim = out;
        p.alphas = {MultiIndex(static_cast<std::size_t>(in), 0)};
        p.coef = Eigen::MatrixXd::Zero(out, 1);
        return p;
    }

    void validate() const {
        if (coef.rows() != out_dim || coef.cols() != static_cast<Eigen::Index>(alphas.size()))
            throw DimensionError("PolyMap: coefficient table shape mismatch");
        for (const auto& a : alphas)
            if (static_cast<int>(a.size()) != in_dim)
                throw DimensionError("PolyMap: multi-index length mismatch");
    }

    Eigen::VectorXd eval(const Eigen::VectorXd& u) const {
        if (u.size() != in_dim) throw DimensionError("PolyMap::eval: input size mismatch");
        return coef * monomial_basis(alphas, u);
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& u) const {
        Eigen::MatrixXd D(static_cast<Eigen::Index>(alphas.size()), in_dim);
        for (std::size_t a = 0; a < alphas.size(); ++a)
            for (int j = 0; j < in_dim; ++j)
                D(static_cast<Eigen::Index>(a), j) = monomial_partial(alphas[a], {j}, u);
        return coef * D;
    }

    // Mixed partial of every output along the coordinate list `dirs` (repeats allowed).
    Eigen::VectorXd partial(const std::vector<int>& dirs, const Eigen::VectorXd& u) const {
        Eigen::VectorXd basis(static_cast<Eigen::Index>(alphas.size()));
        for (std::size_t a = 0; a < alphas.size(); ++a)
            basis[static_cast<Eigen::Index>(a)] = monomial_partial(alphas[a], dirs, u);
        return coef * basis;
    }
};

// A slot component map: explicit polynomial or small dense network, R^m -> R^{d_x}.
using SlotComponent = std::variant<PolyMap, Network>;

inline int component_in_dim(const SlotComponent& c) {
    return std::holds_alternative<PolyMap>(c) ? std::get<PolyMap>(c).in_dim
                                              : std::get<Network>(c).in_dim();
}

inline int component_out_dim(const SlotComponent& c) {
    return std::holds_alternative<PolyMap>(c) ? std::get<PolyMap>(c).out_dim
                                              : std::get<Network>(c).out_dim();
}

inline Eigen::VectorXd component_eval(const SlotComponent& c, const Eigen::VectorXd& u) {
    return std::holds_alternative<PolyMap>(c) ? std::get<PolyMap>(c).eval(u)
                                              : std::get<Network>(c).forward(u);
}

inline Eigen::MatrixXd component_jacobian(const SlotComponent& c, const Eigen::VectorXd& u) {
    return std::holds_alternative<PolyMap>(c) ? std::get<PolyMap>(c).jacobian(u)
                                              : std::get<Network>(c).input_jacobian(u);
}

// Generator with K slot-wise components plus a polynomial interaction term of
// total degree <= n over the full latent vector:
//   f(z) = sum_k f^k(z_k) + sum_{|alpha| <= n} c_alpha z^alpha.
// The interaction table is dense over the graded-lex enumeration, so the
// coefficient layout is reproducible and serializable.
struct InteractionGenerator {
    SlotStructure slots;
    int d_x = 1;
    int n = 0; // interaction degree
    std::vector<SlotComponent> components;
    std::vector<MultiIndex> alphas; // enumerate_multi_indices(d_z, n)
    Eigen::MatrixXd coef;           // d_x x alphas.size()

    // Diffeomorphism-on-image witness recorded by construction-time checks.
    double witness_min_sigma = -1.0; // negative: no witness stored
    int witness_samples = 0;

    static InteractionGenerator make(const SlotStructure& s, int d_x, int n,
                                     std::vector<SlotComponent> comps) {
        InteractionGenerator g;
        g.slots = s;
        g.d_x = d_x;
        g.n = n;
        g.components = std::move(comps);
        g.alphas = enumerate_multi_indices(s.d_z(), n);
        g.coef = Eigen::MatrixXd::Zero(d_x, static_cast<Eigen::Index>(g.alphas.size()));
        g.validate();
        return g;
    }

    void validate() const {
        if (static_cast<int>(components.size()) != slots.K)
            throw DimensionError("InteractionGenerator: need one component per slot");
        for (const auto& c : components) {
            if (component_in_dim(c) != slots.m)
                throw DimensionError("InteractionGenerator: component input dim != m");
            if (component_out_dim(c) != d_x)
                throw DimensionError("InteractionGenerator: component output dim != d_x");
        }
        if (coef.rows() != d_x || coef.cols() != static_cast<Eigen::Index>(alphas.size()))
            throw DimensionError("InteractionGenerator: interaction table shape mismatch");
        for (const auto& a : alphas)
            if (order(a) > n)
                throw PreconditionError("InteractionGenerator: stored alpha exceeds degree n");
    }

    int d_z() const { return slots.d_z(); }

    // Set the coefficient vector for one multi-index in the dense table.
    void set_coef(const MultiIndex& a, const Eigen::VectorXd& c) {
        if (c.size() != d_x) throw DimensionError("set_coef: coefficient vector size mismatch");
        for (std::size_t i = 0; i < alphas.size(); ++i) {
            if (alphas[i] == a) {
                coef.col(static_cast<Eigen::Index>(i)) = c;
                return;
            }
        }
        throw PreconditionError("set_coef: multi-index not in table (order > n?)");
    }

    Eigen::VectorXd slot_part(const Eigen::VectorXd& z) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(d_x);
        for (int k = 0; k < slots.K; ++k)
            out += component_eval(components[static_cast<std::size_t>(k)],
                                  z.segment(slots.slot_begin(k), slots.m));
        return out;
    }

    Eigen::VectorXd interaction_part(const Eigen::VectorXd& z) const {
        return coef * monomial_basis(alphas, z);
    }

    Eigen::VectorXd eval(const Eigen::VectorXd& z) const {
        if (z.size() != d_z()) throw DimensionError("generator_eval: latent size mismatch");
        Eigen::VectorXd out = slot_part(z) + interaction_part(z);
        if (!out.allFinite()) throw NumericError("generator_eval: non-finite output");
        return out;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const {
        if (z.size() != d_z()) throw DimensionError("generator jacobian: latent size mismatch");
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d_x, d_z());
        for (int k = 0; k < slots.K; ++k) {
            J.middleCols(slots.slot_begin(k), slots.m) += component_jacobian(
                components[static_cast<std::size_t>(k)], z.segment(slots.slot_begin(k), slots.m));
        }
        for (std::size_t a = 0; a < alphas.size(); ++a)
            for (int j = 0; j < d_z(); ++j)
                J.col(j) += coef.col(static_cast<Eigen::Index>(a)) *
                            monomial_partial(alphas[a], {j}, z);
        return J;
    }

    bool components_polynomial() const {
        for (const auto& c : components)
            if (!std::holds_alternative<PolyMap>(c)) return false;
        return true;
    }

    // Analytic mixed partial of every output along `dirs`. Exact when all
    // components are polynomial; otherwise only available for direction tuples
    // spanning at least two slots (where components contribute nothing).
    Eigen::VectorXd partial(const std::vector<int>& dirs, const Eigen::VectorXd& z) const {
        bool single_slot = true;
        for (std::size_t i = 1; i < dirs.size(); ++i)
            if (slots.slot_of(dirs[i]) != slots.slot_of(dirs[0])) single_slot = false;
        Eigen::VectorXd out = Eigen::VectorXd::Zero(d_x);
        if (single_slot && !dirs.empty()) {
            int k = slots.slot_of(dirs[0]);
            const SlotComponent& c = components[static_cast<std::size_t>(k)];
            std::vector<int> local;
            for (int d : dirs) local.push_back(d - slots.slot_begin(k));
            if (std::holds_alternative<PolyMap>(c)) {
                out += std::get<PolyMap>(c).partial(local, z.segment(slots.slot_begin(k), slots.m));
            } else if (dirs.size() == 1) {
                out += std::get<Network>(c)
                           .input_jacobian(z.segment(slots.slot_begin(k), slots.m))
                           .col(local[0]);
            } else {
                throw CapabilityError(
                    "analytic high-order partial unavailable for network components");
            }
        }
        for (std::size_t a = 0; a < alphas.size(); ++a) {
            double v = monomial_partial(alphas[a], dirs, z);
            if (v != 0.0) out += coef.col(static_cast<Eigen::Index>(a)) * v;
        }
        return out;
    }

    // Per-output Hessians (analytic; requires polynomial components).
    std::vector<Eigen::MatrixXd> hessians(const Eigen::VectorXd& z) const {
        if (!components_polynomial())
            throw CapabilityError("analytic Hessians require polynomial components");
        std::vector<Eigen::MatrixXd> H(static_cast<std::size_t>(d_x),
                                       Eigen::MatrixXd::Zero(d_z(), d_z()));
        for (int i = 0; i < d_z(); ++i)
            for (int j = i; j < d_z(); ++j) {
                Eigen::VectorXd p = partial({i, j}, z);
                for (int o = 0; o < d_x; ++o) {
                    H[static_cast<std::size_t>(o)](i, j) = p[o];
                    H[static_cast<std::size_t>(o)](j, i) = p[o];
                }
            }
        return H;
    }
};

// Additive specialization: scalar slots (m = 1) and no genuine interaction
// terms (n <= 1), so every output's cross-coordinate Hessian entries vanish.
struct AdditiveGenerator : InteractionGenerator {
    explicit AdditiveGenerator(InteractionGenerator g) : InteractionGenerator(std::move(g)) {
        if (slots.m != 1)
            throw PreconditionError("AdditiveGenerator: requires m = 1");
        if (n > 1)
            throw PreconditionError("AdditiveGenerator: requires interaction degree <= 1");
    }
};

// ---- Serialization -----------------------------------------------------------

inline constexpr int kGeneratorFormatVersion = 1;

namespace detail {

inline nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& M) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw IoError("matrix: expected array of rows");
    Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd M(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j.at(r).size()) != cols)
            throw IoError("matrix: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = j.at(r).at(c).get<double>();
    }
    return M;
}

inline nlohmann::ordered_json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
    return v;
}

inline nlohmann::ordered_json alphas_to_json(const std::vector<MultiIndex>& as) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& mi : as) a.push_back(mi);
    return a;
}

inline std::vector<MultiIndex> alphas_from_json(const nlohmann::json& j) {
    std::vector<MultiIndex> out;
    for (const auto& e : j) out.push_back(e.get<MultiIndex>());
    return out;
}

inline nlohmann::ordered_json component_to_json(const SlotComponent& c) {
    nlohmann::ordered_json j;
    if (std::holds_alternative<PolyMap>(c)) {
        const PolyMap& p = std::get<PolyMap>(c);
        j["kind"] = "poly";
        j["in_dim"] = p.in_dim;
        j["out_dim"] = p.out_dim;
        j["alphas"] = alphas_to_json(p.alphas);
        j["coef"] = matrix_to_json(p.coef);
    } else {
        const Network& n = std::get<Network>(c);
        j["kind"] = "net";
        j["activation"] = activation_name(n.act);
        j["widths"] = n.widths();
        nlohmann::ordered_json Ws = nlohmann::ordered_json::array();
        nlohmann::ordered_json bs = nlohmann::ordered_json::array();
        for (const auto& W : n.W) Ws.push_back(matrix_to_json(W));
        for (const auto& b : n.b) bs.push_back(vector_to_json(b));
        j["W"] = Ws;
        j["b"] = bs;
    }
    return j;
}

inline SlotComponent component_from_json(const nlohmann::json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "poly") {
        PolyMap p;
        p.in_dim = j.at("in_dim").get<int>();
        p.out_dim = j.at("out_dim").get<int>();
        p.alphas = alphas_from_json(j.at("alphas"));
        p.coef = matrix_from_json(j.at("coef"));
        p.validate();
        return p;
    }
    if (kind == "net") {
        Network n;
        n.act = activation_from_name(j.at("activation").get<std::string>());
        for (const auto& W : j.at("W")) n.W.push_back(matrix_from_json(W));
        for (const auto& b : j.at("b")) n.b.push_back(vector_from_json(b));
        if (n.W.empty() || n.W.size() != n.b.size())
            throw IoError("network component: inconsistent layer arrays");
        return n;
    }
    throw IoError("unknown component kind: " + kind);
}

} // namespace detail

inline nlohmann::ordered_json generator_to_json(const InteractionGenerator& g) {
    nlohmann::ordered_json j;
    j["format"] = "slotlab-generator";
    j["version"] = kGeneratorFormatVersion;
    j["slots"] = {{"K", g.slots.K}, {"m", g.slots.m}};
    j["d_x"] = g.d_x;
    j["degree"] = g.n;
    nlohmann::ordered_json comps = nlohmann::ordered_json::array();
    for (const auto& c : g.components) comps.push_back(detail::component_to_json(c));
    j["components"] = comps;
    j["interaction"] = {{"alphas", detail::alphas_to_json(g.alphas)},
                        {"coef", detail::matrix_to_json(g.coef)}};
    j["witness_min_sigma"] = g.witness_min_sigma;
    j["witness_samples"] = g.witness_samples;
    return j;
}

inline InteractionGenerator generator_from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j.at("format") != "slotlab-generator")
        throw IoError("generator file: bad format field");
    int version = j.at("version").get<int>();
    if (version != kGeneratorFormatVersion)
        throw IoError("generator file: unsupported version " + std::to_string(version));
    InteractionGenerator g;
    g.slots = SlotStructure(j.at("slots").at("K").get<int>(), j.at("slots").at("m").get<int>());
    g.d_x = j.at("d_x").get<int>();
    g.n = j.at("degree").get<int>();
    for (const auto& c : j.at("components"))
        g.components.push_back(detail::component_from_json(c));
    g.alphas = detail::alphas_from_json(j.at("interaction").at("alphas"));
    g.coef = detail::matrix_from_json(j.at("interaction").at("coef"));
    if (g.alphas != enumerate_multi_indices(g.d_z(), g.n))
        throw IoError("generator file: interaction table is not the dense graded-lex table");
    g.witness_min_sigma = j.value("witness_min_sigma", -1.0);
    g.witness_samples = j.value("witness_samples", 0);
    g.validate();
    return g;
}

// FNV-1a over the canonical serialized form; identifies a generator in dataset headers.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t generator_hash(const InteractionGenerator& g) {
    return fnv1a(generator_to_json(g).dump());
}

// Free-function spelling used throughout tests and commands.
inline Eigen::VectorXd generator_eval(const InteractionGenerator& g, const Eigen::VectorXd& z) {
    return g.eval(z);
}

} // namespace slotlab
