#include "m3lab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "m3lab/rng.hpp"

namespace m3lab::nn {

size_t Network::num_params() const {
    size_t n = 0;
    for (size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
    return n;
}

void GradientSet::zero() {
    for (auto& m : w) std::fill(m.begin(), m.end(), 0.0);
    for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
}

void GradientSet::scale(double c) {
    for (auto& m : w)
        for (auto& x : m) x *= c;
    for (auto& v : b)
        for (auto& x : v) x *= c;
}

void GradientSet::add(const GradientSet& other) {
    for (size_t l = 0; l < w.size(); ++l) {
        for (size_t i = 0; i < w[l].size(); ++i) w[l][i] += other.w[l][i];
        for (size_t i = 0; i < b[l].size(); ++i) b[l][i] += other.b[l][i];
    }
}

GradientSet make_gradients(const Network& net) {
    GradientSet g;
    g.w.resize(net.w.size());
    g.b.resize(net.b.size());
    for (size_t l = 0; l < net.w.size(); ++l) {
        g.w[l].assign(net.w[l].size(), 0.0);
        g.b[l].assign(net.b[l].size(), 0.0);
    }
    return g;
}

Network init_network(const std::vector<int>& layer_sizes, uint64_t seed) {
    if (layer_sizes.size() < 2) throw std::invalid_argument("init_network: need at least input and output layers");
    for (int s : layer_sizes)
        if (s <= 0) throw std::invalid_argument("init_network: layer sizes must be positive");

    Network net;
    net.sizes = layer_sizes;
    Rng rng(seed);
    int L = net.num_layers();
    net.w.resize(L);
    net.b.resize(L);
    for (int l = 0; l < L; ++l) {
        int fan_in = layer_sizes[l];
        int fan_out = layer_sizes[l + 1];
        double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        net.w[l].resize(static_cast<size_t>(fan_in) * fan_out);
        for (auto& x : net.w[l]) x = rng.uniform(-scale, scale);
        net.b[l].assign(fan_out, 0.0);
    }
    return net;
}

static void ensure_workspace(const Network& net, Workspace& ws) {
    size_t L = net.w.size();
    if (ws.pre.size() != L) ws.pre.resize(L);
    if (ws.act.size() != L + 1) ws.act.resize(L + 1);
}

std::span<const double> forward_trace(const Network& net, std::span<const double> x, Workspace& ws) {
    if (static_cast<int>(x.size()) != net.input_size())
        throw std::invalid_argument("forward: input size mismatch");
    ensure_workspace(net, ws);
    ws.act[0].assign(x.begin(), x.end());
    int L = net.num_layers();
    for (int l = 0; l < L; ++l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        ws.pre[l].assign(net.b[l].begin(), net.b[l].end());
        const double* W = net.w[l].data();
        const double* a = ws.act[l].data();
        double* z = ws.pre[l].data();
        for (int i = 0; i < out; ++i) {
            double s = z[i];
            const double* row = W + static_cast<size_t>(i) * in;
            for (int j = 0; j < in; ++j) s += row[j] * a[j];
            z[i] = s;
        }
        ws.act[l + 1].resize(out);
        if (l + 1 < L) {
            for (int i = 0; i < out; ++i) ws.act[l + 1][i] = z[i] > 0.0 ? z[i] : 0.0;
        } else {
            ws.act[l + 1].assign(z, z + out);
        }
    }
    return ws.act[L];
}

std::vector<double> forward(const Network& net, std::span<const double> x) {
    Workspace ws;
    auto y = forward_trace(net, x, ws);
    return std::vector<double>(y.begin(), y.end());
}

double loss_value_grad(Loss loss, std::span<const double> y, std::span<const double> target,
                       std::vector<double>& dl_dy) {
    if (y.size() != target.size()) throw std::invalid_argument("loss: target size mismatch");
    dl_dy.resize(y.size());
    double total = 0.0;
    if (loss == Loss::SquaredError) {
        for (size_t i = 0; i < y.size(); ++i) {
            double e = y[i] - target[i];
            total += e * e;
            dl_dy[i] = 2.0 * e;
        }
    } else {
        for (size_t i = 0; i < y.size(); ++i) {
            double e = y[i] - target[i];
            if (std::abs(e) <= 1.0) {
                total += 0.5 * e * e;
                dl_dy[i] = e;
            } else {
                total += std::abs(e) - 0.5;
                dl_dy[i] = e > 0.0 ? 1.0 : -1.0;
            }
        }
    }
    return total;
}

void backward_from_output_grad(const Network& net, std::span<const double> dl_dy,
                               GradientSet& grads, Workspace& ws) {
    int L = net.num_layers();
    if (static_cast<int>(dl_dy.size()) != net.output_size())
        throw std::invalid_argument("backward: output gradient size mismatch");
    ws.delta.assign(dl_dy.begin(), dl_dy.end());
    for (int l = L - 1; l >= 0; --l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        const double* a = ws.act[l].data();
        double* gw = grads.w[l].data();
        for (int i = 0; i < out; ++i) {
            double d = ws.delta[i];
            grads.b[l][i] += d;
            double* row = gw + static_cast<size_t>(i) * in;
            for (int j = 0; j < in; ++j) row[j] += d * a[j];
        }
        if (l == 0) break;
        ws.delta_next.assign(in, 0.0);
        const double* W = net.w[l].data();
        for (int i = 0; i < out; ++i) {
            double d = ws.delta[i];
            const double* row = W + static_cast<size_t>(i) * in;
            for (int j = 0; j < in; ++j) ws.delta_next[j] += d * row[j];
        }
        // ReLU mask on the hidden layer we are stepping back into
        const double* z = ws.pre[l - 1].data();
        for (int j = 0; j < in; ++j)
            if (z[j] <= 0.0) ws.delta_next[j] = 0.0;
        std::swap(ws.delta, ws.delta_next);
    }
}

double backward(const Network& net, std::span<const double> x, std::span<const double> target,
                Loss loss, GradientSet& grads, Workspace& ws) {
    auto y = forward_trace(net, x, ws);
    thread_local std::vector<double> dl_dy;
    double value = loss_value_grad(loss, y, target, dl_dy);
    backward_from_output_grad(net, dl_dy, grads, ws);
    return value;
}

OptState make_opt_state(const Network& net) {
    OptState s;
    s.mw.resize(net.w.size());
    s.vw.resize(net.w.size());
    s.mb.resize(net.b.size());
    s.vb.resize(net.b.size());
    for (size_t l = 0; l < net.w.size(); ++l) {
        s.mw[l].assign(net.w[l].size(), 0.0);
        s.vw[l].assign(net.w[l].size(), 0.0);
        s.mb[l].assign(net.b[l].size(), 0.0);
        s.vb[l].assign(net.b[l].size(), 0.0);
    }
    return s;
}

static void check_finite(const std::vector<double>& g) {
    for (double x : g)
        if (!std::isfinite(x)) throw std::runtime_error("optimizer_step: non-finite gradient");
}

static void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                        std::vector<double>& v, const OptimizerConfig& cfg, double bc1, double bc2) {
    for (size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void optimizer_step(Network& net, const GradientSet& grads, OptState& state, const OptimizerConfig& cfg) {
    for (size_t l = 0; l < net.w.size(); ++l) {
        check_finite(grads.w[l]);
        check_finite(grads.b[l]);
    }
    if (cfg.kind == OptKind::Sgd) {
        for (size_t l = 0; l < net.w.size(); ++l) {
            for (size_t i = 0; i < net.w[l].size(); ++i) net.w[l][i] -= cfg.lr * grads.w[l][i];
            for (size_t i = 0; i < net.b[l].size(); ++i) net.b[l][i] -= cfg.lr * grads.b[l][i];
        }
        return;
    }
    state.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t l = 0; l < net.w.size(); ++l) {
        adam_update(net.w[l], grads.w[l], state.mw[l], state.vw[l], cfg, bc1, bc2);
        adam_update(net.b[l], grads.b[l], state.mb[l], state.vb[l], cfg, bc1, bc2);
    }
}

static constexpr const char* kFormatTag = "m3lab-net";
static constexpr int kFormatVersion = 1;

static void write_values(std::ostream& out, const std::vector<double>& v) {
    char buf[48];
    for (size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%a", v[i]);
        out << buf << (i + 1 == v.size() ? "" : " ");
    }
    out << "\n";
}

void save_network(std::ostream& out, const Network& net) {
    out << kFormatTag << " " << kFormatVersion << "\n";
    out << "layers";
    for (int s : net.sizes) out << " " << s;
    out << "\n";
    for (int l = 0; l < net.num_layers(); ++l) {
        out << "w" << l << " " << net.w[l].size() << "\n";
        write_values(out, net.w[l]);
        out << "b" << l << " " << net.b[l].size() << "\n";
        write_values(out, net.b[l]);
    }
    out << "end\n";
}

static std::vector<double> read_values(std::istream& in, size_t n, const char* what) {
    std::vector<double> v(n);
    std::string tok;
    for (size_t i = 0; i < n; ++i) {
        if (!(in >> tok)) throw std::runtime_error(std::string("load_network: truncated ") + what);
        char* end = nullptr;
        v[i] = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str()) throw std::runtime_error("load_network: bad value token");
    }
    return v;
}

Network load_network(std::istream& in) {
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != kFormatTag)
        throw std::runtime_error("load_network: not a network snapshot");
    if (version != kFormatVersion) throw std::runtime_error("load_network: unsupported format version");
    std::string kw;
    if (!(in >> kw) || kw != "layers") throw std::runtime_error("load_network: missing layers line");
    std::string rest;
    std::getline(in, rest);
    std::istringstream ls(rest);
    std::vector<int> sizes;
    int s;
    while (ls >> s) sizes.push_back(s);
    if (sizes.size() < 2) throw std::runtime_error("load_network: bad layer list");

    Network net;
    net.sizes = sizes;
    int L = net.num_layers();
    net.w.resize(L);
    net.b.resize(L);
    for (int l = 0; l < L; ++l) {
        size_t n;
        if (!(in >> kw >> n)) throw std::runtime_error("load_network: truncated parameter header");
        size_t expect_w = static_cast<size_t>(sizes[l]) * sizes[l + 1];
        if (kw != "w" + std::to_string(l) || n != expect_w)
            throw std::runtime_error("load_network: unexpected weight block " + kw);
        net.w[l] = read_values(in, n, "weights");
        if (!(in >> kw >> n) || kw != "b" + std::to_string(l) || n != static_cast<size_t>(sizes[l + 1]))
            throw std::runtime_error("load_network: unexpected bias block");
        net.b[l] = read_values(in, n, "biases");
    }
    if (!(in >> kw) || kw != "end") throw std::runtime_error("load_network: missing end marker");
    return net;
}

void save_network_file(const std::string& path, const Network& net) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_network_file: cannot open " + path);
    save_network(out, net);
}

Network load_network_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_network_file: cannot open " + path);
    return load_network(in);
}

}  // namespace m3lab::nn
