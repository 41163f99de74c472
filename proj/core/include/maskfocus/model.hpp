#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "maskfocus/grid.hpp"

// Bidirectional token predictor over [prompt tokens | image tokens] with
// pre-norm transformer blocks, classifier-free guidance and the masked-token
// likelihood. Reverse-mode derivatives are written out by hand per layer.
namespace maskfocus::model {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

struct ModelConfig {
    int vocab_size = 8;  // |V|; token id |V| is the MASK placeholder
    int grid_height = 8;
    int grid_width = 8;
    int prompt_len = 6;
    int prompt_vocab = 22;  // prompt id `prompt_vocab` is the null prompt
    int layers = 2;
    int width = 64;
    int heads = 4;
    int ffn_mult = 4;
    double init_std = 0.02;

    int grid_size() const { return grid_height * grid_width; }
    int seq_len() const { return prompt_len + grid_size(); }
    int mask_token() const { return vocab_size; }
    int null_prompt() const { return prompt_vocab; }
    int head_dim() const { return width / heads; }
    int ffn_width() const { return width * ffn_mult; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& cfg);

struct TensorSpec {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
};

struct BlockTensors {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

// Deterministic flat ordering of every parameter tensor; the checkpoint blob
// uses the same order.
class ParamLayout {
public:
    explicit ParamLayout(const ModelConfig& cfg);

    const std::vector<TensorSpec>& tensors() const { return tensors_; }
    std::size_t size() const { return size_; }

    int tok_emb = 0, prompt_emb = 0, pos_emb = 0;
    std::vector<BlockTensors> blocks;
    int lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;

private:
    int add(std::string name, int rows, int cols);
    std::vector<TensorSpec> tensors_;
    std::size_t size_ = 0;
};

// Flat parameter vector plus named matrix views. Gradients use the same type.
template <class T>
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(const ModelConfig& cfg);

    static ModelParams initialized(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return *layout_; }
    std::size_t size() const { return data_.size(); }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    MatMap<T> tensor(int id);
    ConstMatMap<T> tensor(int id) const;

    void set_zero();
    bool all_finite() const;

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out(cfg_);
        auto dst = out.values();
        for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    ModelConfig cfg_;
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<T, Eigen::aligned_allocator<T>> data_;
};

template <class T>
struct BlockCache {
    Mat<T> x_in;
    Mat<T> ln1_xhat, ln1_out;
    Vec<T> ln1_rstd;
    Mat<T> q, k, v;
    std::vector<Mat<T>> attn;  // per head, seq x seq
    Mat<T> attn_cat;
    Mat<T> x_mid;
    Mat<T> ln2_xhat, ln2_out;
    Vec<T> ln2_rstd;
    Mat<T> ffn_pre, ffn_act;
};

// Everything backward() needs from one forward pass.
template <class T>
struct ForwardCache {
    std::vector<int> prompt_ids;
    std::vector<int> image_ids;
    std::vector<BlockCache<T>> blocks;
    Mat<T> lnf_xhat, lnf_out;
    Vec<T> lnf_rstd;
};

// Per image position, |V| logits.
template <class T>
struct LogitsGrid {
    Mat<T> logits;
    bool cfg_applied = false;
    double temperature_applied = 1.0;
};

// Logits for every image position in one pass. Masked positions are fed the
// MASK placeholder; conditional=false swaps every prompt token for the null prompt.
template <class T>
LogitsGrid<T> forward(const ModelParams<T>& params, std::span<const int> prompt, const TokenGrid& grid,
                      bool conditional, ForwardCache<T>* cache = nullptr);

// Accumulates d(objective)/d(params) into grads given d(objective)/d(logits).
template <class T>
void backward(const ModelParams<T>& params, const ForwardCache<T>& cache, const Mat<T>& dlogits,
              ModelParams<T>& grads);

// guided = cond + s * (cond - uncond); s == 0 returns cond unchanged.
template <class T>
LogitsGrid<T> guided_logits(const LogitsGrid<T>& cond, const LogitsGrid<T>& uncond, double scale);

template <class T>
Mat<T> softmax_rows(const Mat<T>& logits, double temperature = 1.0);

// How policy distributions are formed from the network.
struct PolicyOptions {
    double cfg_scale = 5.0;
    bool guided = true;  // false: conditional logits only
    double temperature = 1.0;

    bool uses_uncond() const { return guided && cfg_scale != 0.0; }
};

// The policy's logits for (prompt, grid) under `opts` (no temperature applied).
template <class T>
LogitsGrid<T> policy_logits(const ModelParams<T>& params, std::span<const int> prompt, const TokenGrid& grid,
                            const PolicyOptions& opts);

// grid.tokens is fully defined; grid.mask selects the positions whose
// tokens are scored given the visible rest.
struct MaskedCompletion {
    std::vector<int> prompt;
    TokenGrid grid;
};

template <class T>
struct Likelihood {
    T total{};
    std::vector<T> per_token;  // in increasing position order
};

template <class T>
struct LikelihoodTape {
    ForwardCache<T> cond, uncond;
    bool used_uncond = false;
    double cfg_scale = 0.0;
    double temperature = 1.0;
    std::vector<int> positions;
    std::vector<int> targets;
    Mat<T> probs;  // |M| x |V| at `temperature`
};

// log p(z_M | z_V) = sum over masked i of log p(z_i | z_V).
template <class T>
Likelihood<T> masked_log_likelihood(const ModelParams<T>& params, const MaskedCompletion& completion,
                                    const PolicyOptions& opts, LikelihoodTape<T>* tape = nullptr);

// Vector-Jacobian product: grads += sum_j upstream[j] * d(per_token[j])/d(params).
template <class T>
void masked_log_likelihood_backward(const ModelParams<T>& params, const LikelihoodTape<T>& tape,
                                    std::span<const T> upstream, ModelParams<T>& grads);

// A scalar function of the parameters. When grads is non-null it must add its
// exact reverse-mode gradient into it.
template <class T>
using Objective = std::function<T(const ModelParams<T>&, ModelParams<T>*)>;

template <class T>
struct LossAndGrad {
    T loss{};
    ModelParams<T> grads;
};

// Throws NonFinite if the loss or any gradient entry is NaN/Inf.
template <class T>
LossAndGrad<T> loss_and_grad(const ModelParams<T>& params, const Objective<T>& objective);

template <class T>
double global_norm(std::span<const T> values);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

template <class T>
struct AdamState {
    std::vector<T> m, v;
    std::int64_t step = 0;
};

struct StepReport {
    double grad_norm = 0.0;     // before clipping
    double clipped_norm = 0.0;  // after clipping
};

// Bias-corrected Adam on globally norm-clipped gradients.
template <class T>
StepReport optimizer_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
                          const AdamConfig& cfg);

}  // namespace maskfocus::model
