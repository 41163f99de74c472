#include "maskfocus/model.hpp"

#include <cmath>

#include "maskfocus/error.hpp"
#include "maskfocus/rng.hpp"

namespace maskfocus::model {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class T>
void add_row_bias(Mat<T>& m, const ConstMatMap<T>& bias) {
    m.rowwise() += bias.row(0);
}

template <class T>
void layer_norm(const Mat<T>& x, const ConstMatMap<T>& gain, const ConstMatMap<T>& bias, Mat<T>& xhat,
                Vec<T>& rstd, Mat<T>& out) {
    const Eigen::Index n = x.rows(), d = x.cols();
    xhat.resize(n, d);
    rstd.resize(n);
    out.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        const T mean = x.row(r).mean();
        const T var = (x.row(r).array() - mean).square().mean();
        const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
        rstd(r) = rs;
        xhat.row(r) = (x.row(r).array() - mean) * rs;
    }
    out = xhat.array().rowwise() * gain.row(0).array();
    out.rowwise() += bias.row(0);
}

// Returns dx; accumulates gain/bias gradients.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const Vec<T>& rstd, const ConstMatMap<T>& gain,
                           MatMap<T> dgain, MatMap<T> dbias) {
    dgain.row(0) += dy.cwiseProduct(xhat).colwise().sum();
    dbias.row(0) += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * gain.row(0).array();
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T m1 = dxhat.row(r).mean();
        const T m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
    }
    return dx;
}

template <class T>
void softmax_inplace(Mat<T>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const T mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

// tanh-approximated GELU, evaluated with Eigen's vectorized tanh.
template <class T>
Mat<T> gelu(const Mat<T>& x) {
    const auto a = x.array();
    const auto t = (T(kGeluC) * (a + T(kGeluA) * a.cube())).tanh();
    return (T(0.5) * a * (T(1) + t)).matrix();
}

template <class T>
Mat<T> gelu_grad(const Mat<T>& x) {
    const auto a = x.array();
    const auto t = (T(kGeluC) * (a + T(kGeluA) * a.cube())).tanh().eval();
    return (T(0.5) * (T(1) + t) + T(0.5) * a * (T(1) - t.square()) * T(kGeluC) * (T(1) + T(3 * kGeluA) * a.square()))
        .matrix();
}

template <class T>
void block_forward(const ModelParams<T>& p, const BlockTensors& ids, int heads, Mat<T>& x, BlockCache<T>& c) {
    const Eigen::Index S = x.rows(), d = x.cols();
    const Eigen::Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    c.x_in = x;
    layer_norm(x, p.tensor(ids.ln1_g), p.tensor(ids.ln1_b), c.ln1_xhat, c.ln1_rstd, c.ln1_out);
    c.q.noalias() = c.ln1_out * p.tensor(ids.wq);
    add_row_bias(c.q, p.tensor(ids.bq));
    c.k.noalias() = c.ln1_out * p.tensor(ids.wk);
    add_row_bias(c.k, p.tensor(ids.bk));
    c.v.noalias() = c.ln1_out * p.tensor(ids.wv);
    add_row_bias(c.v, p.tensor(ids.bv));

    c.attn.resize(static_cast<std::size_t>(heads));
    c.attn_cat.resize(S, d);
    for (int h = 0; h < heads; ++h) {
        Mat<T>& a = c.attn[static_cast<std::size_t>(h)];
        a.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
        a *= scale;
        softmax_inplace(a);
        c.attn_cat.middleCols(h * dh, dh).noalias() = a * c.v.middleCols(h * dh, dh);
    }
    c.x_mid = x;
    c.x_mid.noalias() += c.attn_cat * p.tensor(ids.wo);
    add_row_bias(c.x_mid, p.tensor(ids.bo));

    layer_norm(c.x_mid, p.tensor(ids.ln2_g), p.tensor(ids.ln2_b), c.ln2_xhat, c.ln2_rstd, c.ln2_out);
    c.ffn_pre.noalias() = c.ln2_out * p.tensor(ids.w1);
    add_row_bias(c.ffn_pre, p.tensor(ids.b1));
    c.ffn_act = gelu(c.ffn_pre);
    x = c.x_mid;
    x.noalias() += c.ffn_act * p.tensor(ids.w2);
    add_row_bias(x, p.tensor(ids.b2));
}

// dx is d(loss)/d(block output) on entry and d(loss)/d(block input) on exit.
template <class T>
void block_backward(const ModelParams<T>& p, const BlockTensors& ids, int heads, const BlockCache<T>& c, Mat<T>& dx,
                    ModelParams<T>& g) {
    const Eigen::Index S = dx.rows(), d = dx.cols();
    const Eigen::Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    // Feed-forward sublayer.
    g.tensor(ids.w2).noalias() += c.ffn_act.transpose() * dx;
    g.tensor(ids.b2).row(0) += dx.colwise().sum();
    Mat<T> dpre = dx * p.tensor(ids.w2).transpose();
    dpre.array() *= gelu_grad(c.ffn_pre).array();
    g.tensor(ids.w1).noalias() += c.ln2_out.transpose() * dpre;
    g.tensor(ids.b1).row(0) += dpre.colwise().sum();
    const Mat<T> dln2 = dpre * p.tensor(ids.w1).transpose();
    Mat<T> dmid = dx + layer_norm_backward(dln2, c.ln2_xhat, c.ln2_rstd, p.tensor(ids.ln2_g), g.tensor(ids.ln2_g),
                                           g.tensor(ids.ln2_b));

    // Attention sublayer.
    g.tensor(ids.wo).noalias() += c.attn_cat.transpose() * dmid;
    g.tensor(ids.bo).row(0) += dmid.colwise().sum();
    const Mat<T> dcat = dmid * p.tensor(ids.wo).transpose();
    Mat<T> dq(S, d), dk(S, d), dv(S, d);
    for (int h = 0; h < heads; ++h) {
        const Mat<T>& a = c.attn[static_cast<std::size_t>(h)];
        const auto dout = dcat.middleCols(h * dh, dh);
        Mat<T> da = dout * c.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh).noalias() = a.transpose() * dout;
        const Vec<T> rowdot = (da.cwiseProduct(a)).rowwise().sum();
        Mat<T> ds = a.cwiseProduct(da.colwise() - rowdot);
        ds *= scale;
        dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    g.tensor(ids.wq).noalias() += c.ln1_out.transpose() * dq;
    g.tensor(ids.bq).row(0) += dq.colwise().sum();
    g.tensor(ids.wk).noalias() += c.ln1_out.transpose() * dk;
    g.tensor(ids.bk).row(0) += dk.colwise().sum();
    g.tensor(ids.wv).noalias() += c.ln1_out.transpose() * dv;
    g.tensor(ids.bv).row(0) += dv.colwise().sum();
    Mat<T> dln1 = dq * p.tensor(ids.wq).transpose();
    dln1.noalias() += dk * p.tensor(ids.wk).transpose();
    dln1.noalias() += dv * p.tensor(ids.wv).transpose();
    dx = dmid + layer_norm_backward(dln1, c.ln1_xhat, c.ln1_rstd, p.tensor(ids.ln1_g), g.tensor(ids.ln1_g),
                                    g.tensor(ids.ln1_b));
}

}  // namespace

void validate(const ModelConfig& cfg) {
    if (cfg.vocab_size < 2) fail(ErrorCode::Config, "model.vocab_size must be >= 2");
    if (cfg.grid_height < 1 || cfg.grid_width < 1) fail(ErrorCode::Config, "model grid must be non-empty");
    if (cfg.prompt_len < 1 || cfg.prompt_vocab < 1) fail(ErrorCode::Config, "model prompt sizes must be positive");
    if (cfg.layers < 1 || cfg.width < 1 || cfg.heads < 1 || cfg.ffn_mult < 1) {
        fail(ErrorCode::Config, "model sizes must be positive");
    }
    if (cfg.width % cfg.heads != 0) fail(ErrorCode::Config, "model.width must be divisible by model.heads");
    if (!(cfg.init_std > 0)) fail(ErrorCode::Config, "model.init_std must be > 0");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
    validate(cfg);
    const int d = cfg.width, f = cfg.ffn_width();
    tok_emb = add("tok_emb", cfg.vocab_size + 1, d);
    prompt_emb = add("prompt_emb", cfg.prompt_vocab + 1, d);
    pos_emb = add("pos_emb", cfg.seq_len(), d);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string pre = "block" + std::to_string(l) + ".";
        BlockTensors b{};
        b.ln1_g = add(pre + "ln1.gain", 1, d);
        b.ln1_b = add(pre + "ln1.bias", 1, d);
        b.wq = add(pre + "attn.wq", d, d);
        b.bq = add(pre + "attn.bq", 1, d);
        b.wk = add(pre + "attn.wk", d, d);
        b.bk = add(pre + "attn.bk", 1, d);
        b.wv = add(pre + "attn.wv", d, d);
        b.bv = add(pre + "attn.bv", 1, d);
        b.wo = add(pre + "attn.wo", d, d);
        b.bo = add(pre + "attn.bo", 1, d);
        b.ln2_g = add(pre + "ln2.gain", 1, d);
        b.ln2_b = add(pre + "ln2.bias", 1, d);
        b.w1 = add(pre + "ffn.w1", d, f);
        b.b1 = add(pre + "ffn.b1", 1, f);
        b.w2 = add(pre + "ffn.w2", f, d);
        b.b2 = add(pre + "ffn.b2", 1, d);
        blocks.push_back(b);
    }
    lnf_g = add("lnf.gain", 1, d);
    lnf_b = add("lnf.bias", 1, d);
    w_out = add("out.weight", d, cfg.vocab_size);
    b_out = add("out.bias", 1, cfg.vocab_size);
}

int ParamLayout::add(std::string name, int rows, int cols) {
    tensors_.push_back({std::move(name), rows, cols, size_});
    size_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    return static_cast<int>(tensors_.size()) - 1;
}

template <class T>
ModelParams<T>::ModelParams(const ModelConfig& cfg)
    : cfg_(cfg), layout_(std::make_shared<const ParamLayout>(cfg)), data_(layout_->size(), T(0)) {}

template <class T>
ModelParams<T> ModelParams<T>::initialized(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams<T> p(cfg);
    Rng rng(derive_seed(seed, 0x1A17));
    const auto& L = p.layout();
    const double resid_scale = 1.0 / std::sqrt(2.0 * cfg.layers);
    auto fill_normal = [&](int id, double stddev) {
        auto m = p.tensor(id);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
    };
    auto fill_const = [&](int id, double v) { p.tensor(id).setConstant(static_cast<T>(v)); };
    fill_normal(L.tok_emb, cfg.init_std);
    fill_normal(L.prompt_emb, cfg.init_std);
    fill_normal(L.pos_emb, cfg.init_std);
    for (const auto& b : L.blocks) {
        fill_const(b.ln1_g, 1.0);
        fill_const(b.ln2_g, 1.0);
        for (int id : {b.wq, b.wk, b.wv, b.w1}) fill_normal(id, cfg.init_std);
        for (int id : {b.wo, b.w2}) fill_normal(id, cfg.init_std * resid_scale);
    }
    fill_const(L.lnf_g, 1.0);
    fill_normal(L.w_out, cfg.init_std);
    return p;
}

template <class T>
MatMap<T> ModelParams<T>::tensor(int id) {
    const auto& t = layout_->tensors()[static_cast<std::size_t>(id)];
    return MatMap<T>(data_.data() + t.offset, t.rows, t.cols);
}

template <class T>
ConstMatMap<T> ModelParams<T>::tensor(int id) const {
    const auto& t = layout_->tensors()[static_cast<std::size_t>(id)];
    return ConstMatMap<T>(data_.data() + t.offset, t.rows, t.cols);
}

template <class T>
void ModelParams<T>::set_zero() {
    std::fill(data_.begin(), data_.end(), T(0));
}

template <class T>
bool ModelParams<T>::all_finite() const {
    for (T v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template <class T>
LogitsGrid<T> forward(const ModelParams<T>& params, std::span<const int> prompt, const TokenGrid& grid,
                      bool conditional, ForwardCache<T>* cache) {
    const ModelConfig& cfg = params.config();
    const ParamLayout& L = params.layout();
    if (static_cast<int>(prompt.size()) != cfg.prompt_len) fail(ErrorCode::ShapeMismatch, "prompt length");
    if (grid.height != cfg.grid_height || grid.width != cfg.grid_width ||
        static_cast<int>(grid.tokens.size()) != cfg.grid_size() ||
        static_cast<int>(grid.mask.size()) != cfg.grid_size()) {
        fail(ErrorCode::ShapeMismatch, "grid shape does not match the model");
    }
    const int P = cfg.prompt_len, N = cfg.grid_size(), S = cfg.seq_len(), d = cfg.width;

    ForwardCache<T> scratch;
    ForwardCache<T>& c = cache ? *cache : scratch;
    c.prompt_ids.resize(static_cast<std::size_t>(P));
    c.image_ids.resize(static_cast<std::size_t>(N));
    for (int i = 0; i < P; ++i) {
        const int id = conditional ? prompt[static_cast<std::size_t>(i)] : cfg.null_prompt();
        if (id < 0 || id > cfg.prompt_vocab) fail(ErrorCode::InvalidArgument, "prompt token out of range");
        c.prompt_ids[static_cast<std::size_t>(i)] = id;
    }
    for (int j = 0; j < N; ++j) {
        const int id = grid.masked(j) ? cfg.mask_token() : grid.tokens[static_cast<std::size_t>(j)];
        if (id < 0 || id > cfg.vocab_size) fail(ErrorCode::InvalidArgument, "image token out of range");
        c.image_ids[static_cast<std::size_t>(j)] = id;
    }

    const auto pe = params.tensor(L.prompt_emb);
    const auto te = params.tensor(L.tok_emb);
    const auto pos = params.tensor(L.pos_emb);
    Mat<T> x(S, d);
    for (int i = 0; i < P; ++i) x.row(i) = pe.row(c.prompt_ids[static_cast<std::size_t>(i)]) + pos.row(i);
    for (int j = 0; j < N; ++j) x.row(P + j) = te.row(c.image_ids[static_cast<std::size_t>(j)]) + pos.row(P + j);

    // Without a caller cache one block cache is reused across layers.
    c.blocks.resize(cache ? static_cast<std::size_t>(cfg.layers) : 1);
    for (int l = 0; l < cfg.layers; ++l) {
        BlockCache<T>& bc = c.blocks[cache ? static_cast<std::size_t>(l) : 0];
        block_forward(params, L.blocks[static_cast<std::size_t>(l)], cfg.heads, x, bc);
    }
    layer_norm(x, params.tensor(L.lnf_g), params.tensor(L.lnf_b), c.lnf_xhat, c.lnf_rstd, c.lnf_out);

    LogitsGrid<T> out;
    out.logits.noalias() = c.lnf_out.bottomRows(N) * params.tensor(L.w_out);
    add_row_bias(out.logits, params.tensor(L.b_out));
    return out;
}

template <class T>
void backward(const ModelParams<T>& params, const ForwardCache<T>& cache, const Mat<T>& dlogits,
              ModelParams<T>& grads) {
    const ModelConfig& cfg = params.config();
    const ParamLayout& L = params.layout();
    const int P = cfg.prompt_len, N = cfg.grid_size(), S = cfg.seq_len(), d = cfg.width;
    if (dlogits.rows() != N || dlogits.cols() != cfg.vocab_size) fail(ErrorCode::ShapeMismatch, "dlogits shape");
    if (static_cast<int>(cache.blocks.size()) != cfg.layers) {
        fail(ErrorCode::InvalidArgument, "forward cache was not recorded for backward");
    }
    if (grads.size() != params.size()) fail(ErrorCode::ShapeMismatch, "gradient buffer size");

    grads.tensor(L.w_out).noalias() += cache.lnf_out.bottomRows(N).transpose() * dlogits;
    grads.tensor(L.b_out).row(0) += dlogits.colwise().sum();
    Mat<T> dfinal = Mat<T>::Zero(S, d);
    dfinal.bottomRows(N).noalias() = dlogits * params.tensor(L.w_out).transpose();
    Mat<T> dx = layer_norm_backward(dfinal, cache.lnf_xhat, cache.lnf_rstd, params.tensor(L.lnf_g),
                                    grads.tensor(L.lnf_g), grads.tensor(L.lnf_b));
    for (int l = cfg.layers - 1; l >= 0; --l) {
        block_backward(params, L.blocks[static_cast<std::size_t>(l)], cfg.heads,
                       cache.blocks[static_cast<std::size_t>(l)], dx, grads);
    }
    auto gpe = grads.tensor(L.prompt_emb);
    auto gte = grads.tensor(L.tok_emb);
    auto gpos = grads.tensor(L.pos_emb);
    for (int i = 0; i < P; ++i) gpe.row(cache.prompt_ids[static_cast<std::size_t>(i)]) += dx.row(i);
    for (int j = 0; j < N; ++j) gte.row(cache.image_ids[static_cast<std::size_t>(j)]) += dx.row(P + j);
    gpos += dx;
}

template <class T>
LogitsGrid<T> guided_logits(const LogitsGrid<T>& cond, const LogitsGrid<T>& uncond, double scale) {
    if (cond.logits.rows() != uncond.logits.rows() || cond.logits.cols() != uncond.logits.cols()) {
        fail(ErrorCode::ShapeMismatch, "cond/uncond logits differ in shape");
    }
    if (scale < 0) fail(ErrorCode::InvalidArgument, "cfg scale must be >= 0");
    LogitsGrid<T> out;
    out.cfg_applied = true;
    if (scale == 0.0) {
        out.logits = cond.logits;
        return out;
    }
    const T s = static_cast<T>(scale);
    out.logits = cond.logits + s * (cond.logits - uncond.logits);
    return out;
}

template <class T>
Mat<T> softmax_rows(const Mat<T>& logits, double temperature) {
    if (!(temperature > 0)) fail(ErrorCode::InvalidArgument, "temperature must be > 0");
    Mat<T> out = logits / static_cast<T>(temperature);
    softmax_inplace(out);
    return out;
}

template <class T>
LogitsGrid<T> policy_logits(const ModelParams<T>& params, std::span<const int> prompt, const TokenGrid& grid,
                            const PolicyOptions& opts) {
    LogitsGrid<T> cond = forward(params, prompt, grid, true);
    if (!opts.uses_uncond()) return cond;
    return guided_logits(cond, forward(params, prompt, grid, false), opts.cfg_scale);
}

template <class T>
Likelihood<T> masked_log_likelihood(const ModelParams<T>& params, const MaskedCompletion& completion,
                                    const PolicyOptions& opts, LikelihoodTape<T>* tape) {
    const ModelConfig& cfg = params.config();
    const std::vector<int> positions = completion.grid.masked_positions();
    if (positions.empty()) fail(ErrorCode::EmptyMask, "masked completion has no masked positions");
    if (!(opts.temperature > 0)) fail(ErrorCode::InvalidArgument, "temperature must be > 0");

    std::vector<int> targets;
    targets.reserve(positions.size());
    for (int p : positions) {
        const int t = completion.grid.tokens[static_cast<std::size_t>(p)];
        if (t < 0 || t >= cfg.vocab_size) fail(ErrorCode::InvalidArgument, "target token outside codebook");
        targets.push_back(t);
    }

    LogitsGrid<T> cond = forward(params, completion.prompt, completion.grid, true, tape ? &tape->cond : nullptr);
    Mat<T> g;
    if (opts.uses_uncond()) {
        LogitsGrid<T> uncond =
            forward(params, completion.prompt, completion.grid, false, tape ? &tape->uncond : nullptr);
        g = guided_logits(cond, uncond, opts.cfg_scale).logits;
    } else {
        g = std::move(cond.logits);
    }

    const T inv_temp = T(1) / static_cast<T>(opts.temperature);
    Likelihood<T> out;
    out.per_token.reserve(positions.size());
    Mat<T> probs(static_cast<Eigen::Index>(positions.size()), cfg.vocab_size);
    for (std::size_t j = 0; j < positions.size(); ++j) {
        const auto row = (g.row(positions[j]).array() * inv_temp).eval();
        const T mx = row.maxCoeff();
        const auto ex = (row - mx).exp().eval();
        const T sum = ex.sum();
        const T lp = row(targets[j]) - mx - std::log(sum);
        out.per_token.push_back(lp);
        out.total += lp;
        probs.row(static_cast<Eigen::Index>(j)) = ex / sum;
    }
    if (tape) {
        tape->used_uncond = opts.uses_uncond();
        tape->cfg_scale = opts.cfg_scale;
        tape->temperature = opts.temperature;
        tape->positions = positions;
        tape->targets = std::move(targets);
        tape->probs = std::move(probs);
    }
    return out;
}

template <class T>
void masked_log_likelihood_backward(const ModelParams<T>& params, const LikelihoodTape<T>& tape,
                                    std::span<const T> upstream, ModelParams<T>& grads) {
    const ModelConfig& cfg = params.config();
    if (upstream.size() != tape.positions.size()) fail(ErrorCode::ShapeMismatch, "upstream size");
    const T inv_temp = T(1) / static_cast<T>(tape.temperature);
    Mat<T> dg = Mat<T>::Zero(cfg.grid_size(), cfg.vocab_size);
    for (std::size_t j = 0; j < tape.positions.size(); ++j) {
        auto row = dg.row(tape.positions[j]);
        row = -tape.probs.row(static_cast<Eigen::Index>(j));
        row(tape.targets[j]) += T(1);
        row *= upstream[j] * inv_temp;
    }
    if (!tape.used_uncond) {
        backward(params, tape.cond, dg, grads);
        return;
    }
    const T s = static_cast<T>(tape.cfg_scale);
    backward(params, tape.cond, Mat<T>((T(1) + s) * dg), grads);
    backward(params, tape.uncond, Mat<T>(-s * dg), grads);
}

template <class T>
double global_norm(std::span<const T> values) {
    double sq = 0.0;
    for (T v : values) sq += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sq);
}

template <class T>
LossAndGrad<T> loss_and_grad(const ModelParams<T>& params, const Objective<T>& objective) {
    LossAndGrad<T> out{T(0), ModelParams<T>(params.config())};
    out.loss = objective(params, &out.grads);
    if (!std::isfinite(out.loss)) fail(ErrorCode::NonFinite, "objective value is not finite");
    if (!out.grads.all_finite()) fail(ErrorCode::NonFinite, "gradient has non-finite entries");
    return out;
}

template <class T>
StepReport optimizer_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
                          const AdamConfig& cfg) {
    if (grads.size() != params.size()) fail(ErrorCode::ShapeMismatch, "gradient size");
    const double norm = global_norm(grads.values());
    if (!std::isfinite(norm) || !params.all_finite()) fail(ErrorCode::NonFinite, "non-finite optimizer input");
    const double scale = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
    if (state.m.empty()) {
        state.m.assign(params.size(), T(0));
        state.v.assign(params.size(), T(0));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto p = params.values();
    auto g = grads.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]) * scale;
        const double m = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * gi;
        const double v = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * gi * gi;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
    if (!params.all_finite()) fail(ErrorCode::NonFinite, "parameters became non-finite");
    return {norm, norm * scale};
}

#define MASKFOCUS_INSTANTIATE_MODEL(T)                                                                         \
    template class ModelParams<T>;                                                                             \
    template LogitsGrid<T> forward<T>(const ModelParams<T>&, std::span<const int>, const TokenGrid&, bool,     \
                                      ForwardCache<T>*);                                                       \
    template void backward<T>(const ModelParams<T>&, const ForwardCache<T>&, const Mat<T>&, ModelParams<T>&); \
    template LogitsGrid<T> guided_logits<T>(const LogitsGrid<T>&, const LogitsGrid<T>&, double);              \
    template Mat<T> softmax_rows<T>(const Mat<T>&, double);                                                    \
    template LogitsGrid<T> policy_logits<T>(const ModelParams<T>&, std::span<const int>, const TokenGrid&,     \
                                            const PolicyOptions&);                                             \
    template Likelihood<T> masked_log_likelihood<T>(const ModelParams<T>&, const MaskedCompletion&,            \
                                                    const PolicyOptions&, LikelihoodTape<T>*);                 \
    template void masked_log_likelihood_backward<T>(const ModelParams<T>&, const LikelihoodTape<T>&,           \
                                                    std::span<const T>, ModelParams<T>&);                      \
    template double global_norm<T>(std::span<const T>);                                                        \
    template LossAndGrad<T> loss_and_grad<T>(const ModelParams<T>&, const Objective<T>&);                      \
    template StepReport optimizer_step<T>(ModelParams<T>&, const ModelParams<T>&, AdamState<T>&,               \
                                          const AdamConfig&);

MASKFOCUS_INSTANTIATE_MODEL(float)
MASKFOCUS_INSTANTIATE_MODEL(double)

#undef MASKFOCUS_INSTANTIATE_MODEL

}  // namespace maskfocus::model
