#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slotlab/errors.hpp"
#include "slotlab/rng.hpp"

namespace slotlab {

enum class Activation { Tanh, Softplus, Identity };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Softplus: return "softplus";
        case Activation::Identity: return "identity";
    }
    throw ConfigError("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    if (s == "identity") return Activation::Identity;
    throw ConfigError("unknown activation name: " + s);
}

// Fully connected network. The activation is applied after every layer except
// the last, which stays affine. All batched entry points take samples as rows.
struct Network {
    std::vector<Eigen::MatrixXd> W; // W[l] has shape out_l x in_l
    std::vector<Eigen::VectorXd> b;
    Activation act = Activation::Tanh;

    int layer_count() const { return static_cast<int>(W.size()); }
    int in_dim() const { return static_cast<int>(W.front().cols()); }
    int out_dim() const { return static_cast<int>(W.back().rows()); }

    std::vector<int> widths() const {
        std::vector<int> w;
        w.push_back(in_dim());
        for (const auto& m : W) w.push_back(static_cast<int>(m.rows()));
        return w;
    }

    // Xavier-uniform weights, zero biases.
    static Network make(const std::vector<int>& widths, Activation act, Rng& rng) {
        if (widths.size() < 2) throw ConfigError("Network::make: need at least two widths");
        Network n;
        n.act = act;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            int in = widths[l], out = widths[l + 1];
            if (in < 1 || out < 1) throw ConfigError("Network::make: widths must be >= 1");
            double lim = std::sqrt(6.0 / static_cast<double>(in + out));
            n.W.push_back(rng.uniform_mat(out, in, -lim, lim));
            n.b.push_back(Eigen::VectorXd::Zero(out));
        }
        return n;
    }

    static double act_value(Activation a, double z) {
        switch (a) {
            case Activation::Tanh: return std::tanh(z);
            case Activation::Softplus:
                // Overflow-safe softplus.
                return z > 30.0 ? z : std::log1p(std::exp(z));
            case Activation::Identity: return z;
        }
        return z;
    }

    static double act_deriv(Activation a, double z) {
        switch (a) {
            case Activation::Tanh: {
                double t = std::tanh(z);
                return 1.0 - t * t;
            }
            case Activation::Softplus: return 1.0 / (1.0 + std::exp(-z));
            case Activation::Identity: return 1.0;
        }
        return 1.0;
    }

    struct Tape {
        Eigen::MatrixXd input;               // N x in
        std::vector<Eigen::MatrixXd> pre;    // per layer, N x out_l
        std::vector<Eigen::MatrixXd> post;   // per layer, N x out_l (post == pre on last layer)
    };

    Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const {
        Tape t;
        return forward_tape(X, t);
    }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
        return forward(Eigen::MatrixXd(x.transpose())).row(0).transpose();
    }

    Eigen::MatrixXd forward_tape(const Eigen::MatrixXd& X, Tape& tape) const {
        if (X.cols() != in_dim()) throw DimensionError("Network::forward: input width mismatch");
        tape.input = X;
        tape.pre.clear();
        tape.post.clear();
        Eigen::MatrixXd a = X;
        for (int l = 0; l < layer_count(); ++l) {
            Eigen::MatrixXd z = a * W[l].transpose();
            z.rowwise() += b[l].transpose();
            tape.pre.push_back(z);
            if (l + 1 < layer_count()) {
                a = z.unaryExpr([this](double v) { return act_value(act, v); });
            } else {
                a = z;
            }
            tape.post.push_back(a);
        }
        return a;
    }

    int num_params() const {
        int n = 0;
        for (int l = 0; l < layer_count(); ++l)
            n += static_cast<int>(W[l].size() + b[l].size());
        return n;
    }

    // Flat layout per layer: W[l] column-major, then b[l].
    Eigen::VectorXd params() const {
        Eigen::VectorXd p(num_params());
        Eigen::Index at = 0;
        for (int l = 0; l < layer_count(); ++l) {
            p.segment(at, W[l].size()) = Eigen::Map<const Eigen::VectorXd>(W[l].data(), W[l].size());
            at += W[l].size();
            p.segment(at, b[l].size()) = b[l];
            at += b[l].size();
        }
        return p;
    }

    void set_params(const Eigen::VectorXd& p) {
        if (p.size() != num_params()) throw DimensionError("Network::set_params: size mismatch");
        Eigen::Index at = 0;
        for (int l = 0; l < layer_count(); ++l) {
            Eigen::Map<Eigen::VectorXd>(W[l].data(), W[l].size()) = p.segment(at, W[l].size());
            at += W[l].size();
            b[l] = p.segment(at, b[l].size());
            at += b[l].size();
        }
    }

    // Reverse pass. U is dL/doutput (N x out). Returns dL/dX and, when grad is
    // non-null, accumulates dL/dparams into it (caller zeroes; layout as params()).
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& U,
                             Eigen::VectorXd* grad) const {
        if (grad && grad->size() != num_params())
            throw DimensionError("Network::backward: grad buffer size mismatch");
        Eigen::MatrixXd u = U;
        std::vector<Eigen::Index> offs(static_cast<std::size_t>(layer_count()));
        Eigen::Index at = 0;
        for (int l = 0; l < layer_count(); ++l) {
            offs[static_cast<std::size_t>(l)] = at;
            at += W[l].size() + b[l].size();
        }
        for (int l = layer_count() - 1; l >= 0; --l) {
            const Eigen::MatrixXd& a_in = l == 0 ? tape.input : tape.post[static_cast<std::size_t>(l - 1)];
            if (grad) {
                Eigen::MatrixXd dW = u.transpose() * a_in;
                Eigen::VectorXd db = u.colwise().sum().transpose();
                grad->segment(offs[static_cast<std::size_t>(l)], dW.size()) +=
                    Eigen::Map<const Eigen::VectorXd>(dW.data(), dW.size());
                grad->segment(offs[static_cast<std::size_t>(l)] + dW.size(), db.size()) += db;
            }
            u = u * W[l];
            if (l > 0) {
                const Eigen::MatrixXd& z = tape.pre[static_cast<std::size_t>(l - 1)];
                u.array() *= z.unaryExpr([this](double v) { return act_deriv(act, v); }).array();
            }
        }
        return u;
    }

    // Analytic d(output)/d(input) at a single point, shape out x in.
    Eigen::MatrixXd input_jacobian(const Eigen::VectorXd& x) const {
        Tape tape;
        forward_tape(Eigen::MatrixXd(x.transpose()), tape);
        Eigen::MatrixXd J = W.back();
        for (int l = layer_count() - 2; l >= 0; --l) {
            const Eigen::MatrixXd& z = tape.pre[static_cast<std::size_t>(l)];
            Eigen::VectorXd d(z.cols());
            for (Eigen::Index i = 0; i < z.cols(); ++i) d[i] = act_deriv(act, z(0, i));
            J = J * d.asDiagonal() * W[static_cast<std::size_t>(l)];
        }
        return J;
    }
};

} // namespace slotlab
