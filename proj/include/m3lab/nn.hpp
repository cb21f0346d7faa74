#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace m3lab::nn {

enum class Loss { SquaredError, SmoothL1 };      // SmoothL1 = Huber with delta = 1
enum class OptKind { Sgd, Adam };

// Fully connected net, ReLU on hidden layers, identity output.
// w[l] is row-major (sizes[l+1] x sizes[l]).
struct Network {
    std::vector<int> sizes;
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    int num_layers() const { return static_cast<int>(sizes.size()) - 1; }
    size_t num_params() const;
};

// Same shapes as the network's parameters.
struct GradientSet {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;

    void zero();
    void scale(double c);
    void add(const GradientSet& other);
};

GradientSet make_gradients(const Network& net);

// Scratch space for forward/backward passes; reusable across calls.
struct Workspace {
    std::vector<std::vector<double>> pre;   // pre-activations per layer
    std::vector<std::vector<double>> act;   // activations per layer (act[0] = input)
    std::vector<double> delta, delta_next;
};

// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero. Deterministic in seed.
Network init_network(const std::vector<int>& layer_sizes, uint64_t seed);

std::vector<double> forward(const Network& net, std::span<const double> x);

// Forward pass that keeps intermediate activations in ws for a subsequent backward call.
std::span<const double> forward_trace(const Network& net, std::span<const double> x, Workspace& ws);

// Loss value plus dLoss/dOutput.
double loss_value_grad(Loss loss, std::span<const double> y, std::span<const double> target,
                       std::vector<double>& dl_dy);

// Analytic gradient of loss(net(x), target) w.r.t. all parameters. Adds into grads.
// Returns the loss value.
double backward(const Network& net, std::span<const double> x, std::span<const double> target,
                Loss loss, GradientSet& grads, Workspace& ws);

// Backprop an arbitrary upstream gradient dL/dy through the net (adds into grads).
// ws must hold the forward_trace of x.
void backward_from_output_grad(const Network& net, std::span<const double> dl_dy,
                               GradientSet& grads, Workspace& ws);

struct OptimizerConfig {
    OptKind kind = OptKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment accumulators for Adam; unused for SGD.
struct OptState {
    std::vector<std::vector<double>> mw, vw, mb, vb;
    long t = 0;
};

OptState make_opt_state(const Network& net);

// Applies one update step. Throws std::runtime_error on non-finite gradient values.
void optimizer_step(Network& net, const GradientSet& grads, OptState& state, const OptimizerConfig& cfg);

// Text snapshot with a format-version line; values are written as C hexfloats so
// that save/load round-trips bit-exactly.
void save_network(std::ostream& out, const Network& net);
Network load_network(std::istream& in);
void save_network_file(const std::string& path, const Network& net);
Network load_network_file(const std::string& path);

}  // namespace m3lab::nn
