#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "clvae/ndarray.hpp"

namespace clvae::ad {

class Node;
using Var = std::shared_ptr<Node>;

// Dynamic-graph reverse-mode differentiation. Ops build the graph only while
// grad recording is on and some input requires gradients; otherwise they are
// plain eager computations whose intermediates free as references drop.
bool grad_enabled();

// RAII switch: turns recording off (inference) within the scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Node {
public:
    NdArray value;
    NdArray grad;  // allocated on first accumulation, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_op;  // pulls this->grad into parents

    void accumulate(const NdArray& g);
    void zero_grad() { grad = NdArray(); }
};

// Leaf constructors.
Var constant(NdArray value);
Var make_parameter(NdArray value);  // requires_grad leaf

// Runs reverse-mode accumulation from a scalar (single-element) root.
void backward(const Var& root);

// Elementwise and shape ops. All inputs are channels-last tensors.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);
Var reshape(const Var& a, std::vector<std::size_t> shape);

// Sum of all elements, as a rank-0 scalar.
Var sum_all(const Var& a);

// Concatenation/split along the trailing (channel) axis.
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& a, std::size_t c0, std::size_t c1);

// Timestep handling for [N,T,...] tensors.
Var slice_timestep(const Var& x, std::size_t t);       // -> [N,1,...]
Var concat_timesteps(const std::vector<Var>& slices);  // [N,1,...] each -> [N,T,...]

// y = x*W + b with x [N,in], W [in,out], b [out].
Var dense(const Var& x, const Var& w, const Var& b);

// 3-D convolution over [N,T,H,W,C] with weight [kt,ky,kx,C,F], bias [F],
// TensorFlow-style "same" padding: out = ceil(in/stride) per axis.
Var conv3d(const Var& x, const Var& w, const Var& b, std::size_t st, std::size_t sy,
           std::size_t sx);

// Transpose convolution with weight [kt,ky,kx,F,Cin]; output dims are input
// dims times the strides ("same" padding transpose).
Var conv3d_transpose(const Var& x, const Var& w, const Var& b, std::size_t st,
                     std::size_t sy, std::size_t sx);

// Batch normalization over the trailing channel axis. In training mode the
// batch statistics normalize and the proposed running-stat update lands in
// *pending (the owner decides when to fold it in); in inference mode the
// frozen running stats normalize and pending is untouched.
struct BnPending {
    NdArray mean, var;
    bool valid = false;
};
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const NdArray& running_mean,
               const NdArray& running_var, BnPending* pending, bool training,
               double eps = 1e-5);

// [N,T,H,W,C] -> [N,C], mean over all spatio-temporal positions.
Var global_avg_pool(const Var& x);

// Scalar losses (rank-0 values).
Var mse_loss(const Var& a, const Var& b);
// -1/2 sum_d (1 + logvar - mu^2 - exp(logvar)), averaged over the batch axis.
Var kl_loss(const Var& mu, const Var& logvar);
// max(0, margin - rmse(a, b))^2; gradient defined as 0 at rmse = 0.
Var contrastive_loss(const Var& a, const Var& b, double margin);
// Batched form: the hinge is applied per leading-axis pair and averaged,
// so each pair in a batch contributes its own margin violation.
Var contrastive_loss_rows(const Var& a, const Var& b, double margin);

}  // namespace clvae::ad
