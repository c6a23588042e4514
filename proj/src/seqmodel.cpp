#include "icsad/seqmodel.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace icsad {

std::string_view to_string(AttentionKind kind) {
    return kind == AttentionKind::general ? "general" : "additive";
}

AttentionKind parse_attention_kind(std::string_view text) {
    if (text == "general" || text == "dot") return AttentionKind::general;
    if (text == "additive") return AttentionKind::additive;
    throw std::invalid_argument("unknown attention kind '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
    if (n_tags < 1) throw std::invalid_argument("model needs at least one tag");
    if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
    if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
}

ParamLayout ParamLayout::for_config(const ModelConfig& config) {
    config.validate();
    ParamLayout layout;
    const Eigen::Index H = config.hidden_dim, n = config.n_tags;
    auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
        layout.slots_.push_back({std::move(name), rows, cols, layout.total_});
        layout.total_ += rows * cols;
    };
    for (const char* stack : {"encoder", "decoder"}) {
        for (int l = 0; l < config.num_layers; ++l) {
            const std::string prefix = std::string(stack) + ".l" + std::to_string(l) + ".";
            Eigen::Index in = l > 0 ? H : (stack[0] == 'e' ? n : n + H);
            add(prefix + "input_weights", 4 * H, in);
            add(prefix + "recurrent_weights", 4 * H, H);
            add(prefix + "bias", 4 * H, 1);
        }
    }
    if (config.attention == AttentionKind::general) {
        add("attention.projection", H, H);
    } else {
        add("attention.encoder_weights", H, H);
        add("attention.decoder_weights", H, H);
        add("attention.score_vector", H, 1);
    }
    add("combine.weights", H, 2 * H);
    add("combine.bias", H, 1);
    add("output.weights", n, H);
    add("output.bias", n, 1);
    return layout;
}

const TensorSlot& ParamLayout::at(std::string_view name) const {
    for (const auto& slot : slots_)
        if (slot.name == name) return slot;
    throw std::out_of_range("no parameter tensor named " + std::string(name));
}

Eigen::Map<const Eigen::MatrixXd> SeqModelParams::tensor(std::string_view name) const {
    const auto layout = this->layout();
    const auto& slot = layout.at(name);
    return {values.data() + slot.offset, slot.rows, slot.cols};
}

Eigen::Map<Eigen::MatrixXd> SeqModelParams::tensor(std::string_view name) {
    const auto layout = this->layout();
    const auto& slot = layout.at(name);
    return {values.data() + slot.offset, slot.rows, slot.cols};
}

SeqModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    const auto layout = ParamLayout::for_config(config);
    SeqModelParams params;
    params.config = config;
    params.config.seed = seed;
    params.values.setZero(layout.total());

    std::mt19937_64 rng(seed);
    const Eigen::Index H = config.hidden_dim;
    for (const auto& slot : layout.slots()) {
        auto view = Eigen::Map<Eigen::MatrixXd>(params.values.data() + slot.offset, slot.rows, slot.cols);
        const bool is_bias = slot.cols == 1 && slot.name.ends_with("bias");
        if (is_bias) {
            if (slot.name.starts_with("encoder") || slot.name.starts_with("decoder"))
                view.middleRows(H, H).setOnes();
            continue;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(slot.cols));
        std::uniform_real_distribution<double> dist(-bound, bound);
        // column-major fill keeps the draw order tied to the flat layout
        for (Eigen::Index i = 0; i < slot.size(); ++i) view.data()[i] = dist(rng);
    }
    return params;
}

LstmLayerParams lstm_layer(const SeqModelParams& params, Stack stack, int layer) {
    const std::string prefix =
        std::string(stack == Stack::encoder ? "encoder" : "decoder") + ".l" + std::to_string(layer) + ".";
    return {params.tensor(prefix + "input_weights"), params.tensor(prefix + "recurrent_weights"),
            params.tensor(prefix + "bias")};
}

namespace {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return S(1) / (S(1) + (-x).exp());
}

}  // namespace

LstmState lstm_cell_forward(const LstmLayerParams& p, const Eigen::VectorXd& x, const LstmState& state) {
    const Eigen::Index H = p.hidden_dim();
    if (x.size() != p.input_weights.cols() || state.h.size() != H || state.c.size() != H)
        throw std::invalid_argument("lstm_cell_forward: shape mismatch");
    const Eigen::VectorXd pre = p.input_weights * x + p.recurrent_weights * state.h + p.bias;
    const Eigen::ArrayXd i = sigmoid(pre.segment(0, H).array());
    const Eigen::ArrayXd f = sigmoid(pre.segment(H, H).array());
    const Eigen::ArrayXd g = pre.segment(2 * H, H).array().tanh();
    const Eigen::ArrayXd o = sigmoid(pre.segment(3 * H, H).array());
    LstmState next;
    next.c = (f * state.c.array() + i * g).matrix();
    next.h = (o * next.c.array().tanh()).matrix();
    return next;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
    const double top = scores.maxCoeff();
    Eigen::VectorXd w = (scores.array() - top).exp().matrix();
    return w / w.sum();
}

AttentionOutput attend_scores(const Eigen::VectorXd& scores, const Eigen::MatrixXd& all_hidden) {
    if (scores.size() != all_hidden.cols()) throw std::invalid_argument("attend: score/step mismatch");
    AttentionOutput out;
    out.weights = softmax(scores);
    out.context = all_hidden * out.weights;
    return out;
}

AttentionOutput attend(const SeqModelParams& params, const Eigen::VectorXd& decoder_hidden,
                       const Eigen::MatrixXd& all_hidden) {
    if (params.config.attention == AttentionKind::general) {
        const Eigen::VectorXd query = params.tensor("attention.projection") * decoder_hidden;
        return attend_scores(all_hidden.transpose() * query, all_hidden);
    }
    const Eigen::MatrixXd w1 = params.tensor("attention.encoder_weights");
    const Eigen::VectorXd w2s = params.tensor("attention.decoder_weights") * decoder_hidden;
    const Eigen::VectorXd v = params.tensor("attention.score_vector");
    const Eigen::MatrixXd u = ((w1 * all_hidden).colwise() + w2s).array().tanh().matrix();
    return attend_scores(u.transpose() * v, all_hidden);
}

// ---------------------------------------------------------------------------
// Batched network

namespace {

constexpr Eigen::Index kEnc = static_cast<Eigen::Index>(kEncoderLength);
constexpr Eigen::Index kDec = static_cast<Eigen::Index>(kHintLength);

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
using ConstMap = Eigen::Map<const MatrixT<T>>;

template <typename T>
using MutMap = Eigen::Map<MatrixT<T>>;

/// Columns of window b across all steps of a step-major [rows x steps*B] matrix.
template <typename T>
using StridedCols = Eigen::Map<MatrixT<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedCols = Eigen::Map<const MatrixT<T>, 0, Eigen::OuterStride<>>;

template <typename T>
ConstStridedCols<T> window_cols(const MatrixT<T>& m, Eigen::Index b, Eigen::Index batch) {
    return {m.data() + b * m.rows(), m.rows(), m.cols() / batch, Eigen::OuterStride<>(m.rows() * batch)};
}

template <typename T>
StridedCols<T> window_cols(MatrixT<T>& m, Eigen::Index b, Eigen::Index batch) {
    return {m.data() + b * m.rows(), m.rows(), m.cols() / batch, Eigen::OuterStride<>(m.rows() * batch)};
}

/// In place: rows [0,2H) and [3H,4H) -> sigmoid, [2H,3H) -> tanh.
template <typename Block>
void activate_gates(Block&& g, Eigen::Index H) {
    using S = typename std::decay_t<Block>::Scalar;
    g.topRows(2 * H) = (S(1) / (S(1) + (-g.topRows(2 * H).array()).exp())).matrix();
    g.middleRows(2 * H, H) = g.middleRows(2 * H, H).array().tanh().matrix();
    g.bottomRows(H) = (S(1) / (S(1) + (-g.bottomRows(H).array()).exp())).matrix();
}

/// Given gate activations (i, f, g, o), forms c and h for one step. c_prev
/// is ignored when has_prev is false (zero initial cell).
template <typename Act, typename CPrev, typename COut, typename TcOut, typename HOut>
void lstm_combine(const Act& act, const CPrev& c_prev, bool has_prev, COut&& c, TcOut&& tc, HOut&& h,
                  Eigen::Index H) {
    if (has_prev)
        c = (act.middleRows(H, H).array() * c_prev.array() +
             act.topRows(H).array() * act.middleRows(2 * H, H).array())
                .matrix();
    else
        c = (act.topRows(H).array() * act.middleRows(2 * H, H).array()).matrix();
    tc = c.array().tanh().matrix();
    h = (act.bottomRows(H).array() * tc.array()).matrix();
}

/// Turns cached gate activations into pre-activation gradients in place.
/// dc enters as the cell gradient carried from the next step and leaves as
/// the gradient for c_prev.
template <typename T, typename ActBlock, typename Tc, typename CPrev>
void lstm_step_backward(ActBlock&& act, const Tc& tc, const CPrev& c_prev, bool has_prev,
                        const MatrixT<T>& dh, MatrixT<T>& dc, Eigen::Index H) {
    auto i = act.topRows(H).array();
    auto f = act.middleRows(H, H).array();
    auto g = act.middleRows(2 * H, H).array();
    auto o = act.bottomRows(H).array();
    const auto tca = tc.array();

    // every gate block is read before it is overwritten with its gradient
    dc.array() += dh.array() * o * (T(1) - tca * tca);
    act.bottomRows(H) = (dh.array() * tca * o * (T(1) - o)).matrix();
    MatrixT<T> tmp = (dc.array() * g * i * (T(1) - i)).matrix();
    act.middleRows(2 * H, H) = (dc.array() * i * (T(1) - g * g)).matrix();
    act.topRows(H) = tmp;
    if (has_prev)
        tmp = (dc.array() * c_prev.array() * f * (T(1) - f)).matrix();
    else
        tmp.setZero();
    dc.array() *= f;
    act.middleRows(H, H) = tmp;
}

}  // namespace

template <typename T>
Seq2SeqNet<T>::Seq2SeqNet(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::for_config(config)), H_(config.hidden_dim), n_(config.n_tags),
      L_(config.num_layers) {
    for (int l = 0; l < L_; ++l) {
        const auto enc = "encoder.l" + std::to_string(l) + ".";
        const auto dec = "decoder.l" + std::to_string(l) + ".";
        enc_.push_back({layout_.at(enc + "input_weights").offset, layout_.at(enc + "recurrent_weights").offset,
                        layout_.at(enc + "bias").offset, layout_.at(enc + "input_weights").cols});
        dec_.push_back({layout_.at(dec + "input_weights").offset, layout_.at(dec + "recurrent_weights").offset,
                        layout_.at(dec + "bias").offset, layout_.at(dec + "input_weights").cols});
    }
    if (config.attention == AttentionKind::general) {
        att_w_ = layout_.at("attention.projection").offset;
    } else {
        att_w_ = layout_.at("attention.encoder_weights").offset;
        att_w2_ = layout_.at("attention.decoder_weights").offset;
        att_v_ = layout_.at("attention.score_vector").offset;
    }
    comb_w_ = layout_.at("combine.weights").offset;
    comb_b_ = layout_.at("combine.bias").offset;
    out_w_ = layout_.at("output.weights").offset;
    out_b_ = layout_.at("output.bias").offset;
}

template <typename T>
void Seq2SeqNet<T>::resize(Eigen::Index batch) {
    if (batch < 1) throw std::invalid_argument("empty batch");
    B_ = batch;
    const auto L = static_cast<std::size_t>(L_);
    e_act_.resize(L), e_c_.resize(L), e_tc_.resize(L), e_h_.resize(L);
    d_act_.resize(L), d_c_.resize(L), d_tc_.resize(L), d_h_.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        e_act_[l].resize(4 * H_, kEnc * B_);
        e_c_[l].resize(H_, kEnc * B_);
        e_tc_[l].resize(H_, kEnc * B_);
        e_h_[l].resize(H_, kEnc * B_);
        d_act_[l].resize(4 * H_, kDec * B_);
        d_c_[l].resize(H_, kDec * B_);
        d_tc_[l].resize(H_, kDec * B_);
        d_h_[l].resize(H_, kDec * B_);
    }
    d_in0_.resize(n_ + H_, kDec * B_);
    alpha_.resize(static_cast<std::size_t>(kDec));
    for (auto& a : alpha_) a.resize(kEnc, B_);
    if (config_.attention == AttentionKind::general) {
        query_.resize(H_, kDec * B_);
    } else {
        w1e_.resize(H_, kEnc * B_);
        u_.resize(static_cast<std::size_t>(kDec));
        for (auto& u : u_) u.resize(H_, kEnc * B_);
    }
    ctx_.resize(H_, kDec * B_);
    att_.resize(H_, kDec * B_);
}

template <typename T>
void Seq2SeqNet<T>::run_encoder(const Vector& params, const Matrix& input) {
    const T* p = params.data();
    const Eigen::Index H = H_, B = B_;
    for (int li = 0; li < L_; ++li) {
        const auto l = static_cast<std::size_t>(li);
        const auto& s = enc_[l];
        ConstMap<T> wx(p + s.wx, 4 * H, s.in_dim), wh(p + s.wh, 4 * H, H), bias(p + s.b, 4 * H, 1);
        const Matrix& in = li == 0 ? input : e_h_[l - 1];
        Matrix& act = e_act_[l];
        act.noalias() = wx * in;
        act.colwise() += bias.col(0);
        for (Eigen::Index t = 0; t < kEnc; ++t) {
            auto g = act.middleCols(t * B, B);
            if (t > 0) g.noalias() += wh * e_h_[l].middleCols((t - 1) * B, B);
            activate_gates(g, H);
            const auto c_prev = e_c_[l].middleCols(t > 0 ? (t - 1) * B : 0, B);
            lstm_combine(g, c_prev, t > 0, e_c_[l].middleCols(t * B, B), e_tc_[l].middleCols(t * B, B),
                         e_h_[l].middleCols(t * B, B), H);
        }
    }
}

template <typename T>
void Seq2SeqNet<T>::run_decoder(const Vector& params, const Matrix& enc_hidden, const std::vector<Matrix>& h0,
                                const std::vector<Matrix>& c0, const Matrix& hint) {
    const T* p = params.data();
    const Eigen::Index H = H_, B = B_, n = n_;
    enc_hidden_ = &enc_hidden;

    ConstMap<T> wc(p + comb_w_, H, 2 * H), bc(p + comb_b_, H, 1);
    const bool general = config_.attention == AttentionKind::general;
    if (!general) {
        ConstMap<T> w1(p + att_w_, H, H);
        w1e_.noalias() = w1 * enc_hidden;
    }

    Matrix scores(kEnc, B);
    for (Eigen::Index k = 0; k < kDec; ++k) {
        auto in0 = d_in0_.middleCols(k * B, B);
        in0.topRows(n) = hint.middleCols(k * B, B);
        if (k == 0)
            in0.bottomRows(H).setZero();
        else
            in0.bottomRows(H) = att_.middleCols((k - 1) * B, B);

        for (int li = 0; li < L_; ++li) {
            const auto l = static_cast<std::size_t>(li);
            const auto& s = dec_[l];
            ConstMap<T> wx(p + s.wx, 4 * H, s.in_dim), wh(p + s.wh, 4 * H, H), bias(p + s.b, 4 * H, 1);
            auto g = d_act_[l].middleCols(k * B, B);
            if (li == 0)
                g.noalias() = wx * in0;
            else
                g.noalias() = wx * d_h_[l - 1].middleCols(k * B, B);
            if (k == 0)
                g.noalias() += wh * h0[l];
            else
                g.noalias() += wh * d_h_[l].middleCols((k - 1) * B, B);
            g.colwise() += bias.col(0);
            activate_gates(g, H);
            if (k == 0)
                lstm_combine(g, c0[l], true, d_c_[l].middleCols(0, B), d_tc_[l].middleCols(0, B),
                             d_h_[l].middleCols(0, B), H);
            else
                lstm_combine(g, d_c_[l].middleCols((k - 1) * B, B), true, d_c_[l].middleCols(k * B, B),
                             d_tc_[l].middleCols(k * B, B), d_h_[l].middleCols(k * B, B), H);
        }

        const auto top = d_h_[static_cast<std::size_t>(L_ - 1)].middleCols(k * B, B);
        auto& alpha = alpha_[static_cast<std::size_t>(k)];
        if (general) {
            ConstMap<T> wa(p + att_w_, H, H);
            auto q = query_.middleCols(k * B, B);
            q.noalias() = wa * top;
            for (Eigen::Index b = 0; b < B; ++b)
                scores.col(b).noalias() = window_cols<T>(enc_hidden, b, B).transpose() * q.col(b);
        } else {
            ConstMap<T> w2(p + att_w2_, H, H), v(p + att_v_, H, 1);
            const Matrix w2s = w2 * top;
            Matrix& u = u_[static_cast<std::size_t>(k)];
            for (Eigen::Index t = 0; t < kEnc; ++t)
                u.middleCols(t * B, B) = (w1e_.middleCols(t * B, B) + w2s).array().tanh().matrix();
            const Matrix flat = v.transpose() * u;  // 1 x 90B, index t*B + b
            scores = Eigen::Map<const Matrix>(flat.data(), B, kEnc).transpose();
        }
        for (Eigen::Index b = 0; b < B; ++b) {
            auto col = scores.col(b);
            const T top_score = col.maxCoeff();
            alpha.col(b) = (col.array() - top_score).exp().matrix();
            alpha.col(b) /= alpha.col(b).sum();
        }
        auto ctx = ctx_.middleCols(k * B, B);
        for (Eigen::Index b = 0; b < B; ++b)
            ctx.col(b).noalias() = window_cols<T>(enc_hidden, b, B) * alpha.col(b);

        auto att = att_.middleCols(k * B, B);
        att.noalias() = wc.leftCols(H) * ctx;
        att.noalias() += wc.rightCols(H) * top;
        att.colwise() += bc.col(0);
        att = att.array().tanh().matrix();
    }

    ConstMap<T> wo(p + out_w_, n, H), bo(p + out_b_, n, 1);
    pred_.noalias() = wo * att_.middleCols((kDec - 1) * B, B);
    pred_.colwise() += bo.col(0);
}

template <typename T>
const typename Seq2SeqNet<T>::Matrix& Seq2SeqNet<T>::forward(const Vector& params, const Batch& batch) {
    if (params.size() != layout_.total()) throw std::invalid_argument("parameter vector size mismatch");
    if (batch.tags() != n_) throw std::invalid_argument("batch tag count does not match model");
    resize(batch.batch);
    enc_input_ = &batch.encoder_input;
    run_encoder(params, batch.encoder_input);
    d_h0_.resize(static_cast<std::size_t>(L_));
    d_c0_.resize(static_cast<std::size_t>(L_));
    for (std::size_t l = 0; l < static_cast<std::size_t>(L_); ++l) {
        d_h0_[l] = e_h_[l].rightCols(B_);
        d_c0_[l] = e_c_[l].rightCols(B_);
    }
    run_decoder(params, e_h_.back(), d_h0_, d_c0_, batch.decoder_hint);
    cache_valid_ = true;
    return pred_;
}

template <typename T>
T Seq2SeqNet<T>::loss(const Matrix& target) const {
    if (target.rows() != pred_.rows() || target.cols() != pred_.cols())
        throw std::invalid_argument("target shape mismatch");
    return (pred_ - target).squaredNorm() / static_cast<T>(pred_.size());
}

template <typename T>
void Seq2SeqNet<T>::backward(const Vector& params, const Matrix& target, Vector& grad, T scale) {
    if (!cache_valid_) throw std::logic_error("backward() requires a preceding forward()");
    cache_valid_ = false;
    if (grad.size() != layout_.total()) grad.setZero(layout_.total());
    const T* p = params.data();
    T* gp = grad.data();
    const Eigen::Index H = H_, B = B_, n = n_;
    const bool general = config_.attention == AttentionKind::general;
    const Matrix& E = *enc_hidden_;

    // output projection
    const Matrix dpred = (pred_ - target) * (T(2) * scale / static_cast<T>(pred_.size()));
    ConstMap<T> wo(p + out_w_, n, H);
    MutMap<T>(gp + out_w_, n, H).noalias() += dpred * att_.middleCols((kDec - 1) * B, B).transpose();
    MutMap<T>(gp + out_b_, n, 1) += dpred.rowwise().sum();
    Matrix d_att = wo.transpose() * dpred;

    ConstMap<T> wc(p + comb_w_, H, 2 * H);
    MutMap<T> g_wc(gp + comb_w_, H, 2 * H), g_bc(gp + comb_b_, H, 1);

    Matrix dE = Matrix::Zero(H, kEnc * B);
    Matrix d_w1e;
    if (!general) d_w1e.setZero(H, kEnc * B);

    const auto L = static_cast<std::size_t>(L_);
    std::vector<Matrix> dh_next(L, Matrix::Zero(H, B)), dc_next(L, Matrix::Zero(H, B));
    Matrix dalpha(kEnc, B), dscore(kEnc, B), dh, d_in;

    for (Eigen::Index k = kDec - 1; k >= 0; --k) {
        const auto att = att_.middleCols(k * B, B);
        const auto ctx = ctx_.middleCols(k * B, B);
        const auto top = d_h_[L - 1].middleCols(k * B, B);
        const Matrix& alpha = alpha_[static_cast<std::size_t>(k)];

        const Matrix da = (d_att.array() * (T(1) - att.array() * att.array())).matrix();
        g_wc.leftCols(H).noalias() += da * ctx.transpose();
        g_wc.rightCols(H).noalias() += da * top.transpose();
        g_bc += da.rowwise().sum();
        const Matrix dctx = wc.leftCols(H).transpose() * da;
        Matrix ds = wc.rightCols(H).transpose() * da;

        // context = E_b alpha_b
        for (Eigen::Index b = 0; b < B; ++b) {
            const auto Eb = window_cols<T>(E, b, B);
            dalpha.col(b).noalias() = Eb.transpose() * dctx.col(b);
            window_cols<T>(dE, b, B).noalias() += dctx.col(b) * alpha.col(b).transpose();
        }
        // softmax
        const Eigen::Array<T, 1, Eigen::Dynamic> inner = (alpha.array() * dalpha.array()).colwise().sum();
        dscore = (alpha.array() * (dalpha.array().rowwise() - inner)).matrix();

        if (general) {
            ConstMap<T> wa(p + att_w_, H, H);
            const auto q = query_.middleCols(k * B, B);
            Matrix dq(H, B);
            for (Eigen::Index b = 0; b < B; ++b) {
                const auto Eb = window_cols<T>(E, b, B);
                dq.col(b).noalias() = Eb * dscore.col(b);
                window_cols<T>(dE, b, B).noalias() += q.col(b) * dscore.col(b).transpose();
            }
            MutMap<T>(gp + att_w_, H, H).noalias() += dq * top.transpose();
            ds.noalias() += wa.transpose() * dq;
        } else {
            ConstMap<T> w2(p + att_w2_, H, H), v(p + att_v_, H, 1);
            const Matrix& u = u_[static_cast<std::size_t>(k)];
            // flat score gradient in column order t*B + b
            const Matrix dflat_T = dscore.transpose();  // B x 90, element (b, t)
            const Eigen::Map<const Matrix> dflat(dflat_T.data(), 1, kEnc * B);
            MutMap<T>(gp + att_v_, H, 1).noalias() += u * dflat.transpose();
            const Matrix dpre = ((v * dflat).array() * (T(1) - u.array() * u.array())).matrix();
            d_w1e += dpre;
            Matrix dw2s = Matrix::Zero(H, B);
            for (Eigen::Index t = 0; t < kEnc; ++t) dw2s += dpre.middleCols(t * B, B);
            MutMap<T>(gp + att_w2_, H, H).noalias() += dw2s * top.transpose();
            ds.noalias() += w2.transpose() * dw2s;
        }

        // decoder LSTM, top layer first
        for (int li = L_ - 1; li >= 0; --li) {
            const auto l = static_cast<std::size_t>(li);
            const auto& s = dec_[l];
            ConstMap<T> wx(p + s.wx, 4 * H, s.in_dim), wh(p + s.wh, 4 * H, H);
            if (li == L_ - 1)
                dh = ds + dh_next[l];
            else
                dh = d_in + dh_next[l];
            auto act = d_act_[l].middleCols(k * B, B);
            Matrix& dc = dc_next[l];
            if (k == 0)
                lstm_step_backward<T>(act, d_tc_[l].middleCols(0, B), d_c0_[l], true, dh, dc, H);
            else
                lstm_step_backward<T>(act, d_tc_[l].middleCols(k * B, B), d_c_[l].middleCols((k - 1) * B, B),
                                      true, dh, dc, H);
            const Matrix h_prev = k == 0 ? d_h0_[l] : Matrix(d_h_[l].middleCols((k - 1) * B, B));
            const auto input = li == 0 ? d_in0_.middleCols(k * B, B) : d_h_[l - 1].middleCols(k * B, B);
            MutMap<T>(gp + s.wx, 4 * H, s.in_dim).noalias() += act * input.transpose();
            MutMap<T>(gp + s.wh, 4 * H, H).noalias() += act * h_prev.transpose();
            MutMap<T>(gp + s.b, 4 * H, 1) += act.rowwise().sum();
            dh_next[l].noalias() = wh.transpose() * act;
            d_in.noalias() = wx.transpose() * act;
        }
        // layer-0 input = [hint; previous attentional state]
        d_att = d_in.bottomRows(H);
    }

    if (!general) {
        ConstMap<T> w1(p + att_w_, H, H);
        MutMap<T>(gp + att_w_, H, H).noalias() += d_w1e * E.transpose();
        dE.noalias() += w1.transpose() * d_w1e;
    }

    // encoder, top layer first; dh_next/dc_next hold the decoder's initial-state gradients
    Matrix d_ext = std::move(dE);
    for (int li = L_ - 1; li >= 0; --li) {
        const auto l = static_cast<std::size_t>(li);
        const auto& s = enc_[l];
        ConstMap<T> wx(p + s.wx, 4 * H, s.in_dim), wh(p + s.wh, 4 * H, H);
        Matrix& act = e_act_[l];
        Matrix dc = dc_next[l];
        Matrix dh_rec = dh_next[l];
        for (Eigen::Index t = kEnc - 1; t >= 0; --t) {
            dh = d_ext.middleCols(t * B, B) + dh_rec;
            auto g = act.middleCols(t * B, B);
            lstm_step_backward<T>(g, e_tc_[l].middleCols(t * B, B),
                                  e_c_[l].middleCols(t > 0 ? (t - 1) * B : 0, B), t > 0, dh, dc, H);
            if (t > 0) dh_rec.noalias() = wh.transpose() * g;
        }
        const Matrix& in = li == 0 ? *enc_input_ : e_h_[l - 1];
        MutMap<T>(gp + s.wx, 4 * H, s.in_dim).noalias() += act * in.transpose();
        MutMap<T>(gp + s.wh, 4 * H, H).noalias() +=
            act.rightCols((kEnc - 1) * B) * e_h_[l].leftCols((kEnc - 1) * B).transpose();
        MutMap<T>(gp + s.b, 4 * H, 1) += act.rowwise().sum();
        if (li > 0) d_ext.noalias() = wx.transpose() * act;
    }
}

template <typename T>
T Seq2SeqNet<T>::loss_and_gradient(const Vector& params, const Batch& batch, Vector& grad) {
    forward(params, batch);
    const T value = loss(batch.target);
    grad.setZero(layout_.total());
    backward(params, batch.target, grad);
    return value;
}

template <typename T>
EncoderOutput<T> Seq2SeqNet<T>::encode(const Vector& params, const Matrix& encoder_input, Eigen::Index batch) {
    if (params.size() != layout_.total()) throw std::invalid_argument("parameter vector size mismatch");
    if (encoder_input.rows() != n_ || encoder_input.cols() != kEnc * batch)
        throw std::invalid_argument("encoder input must be [n_tags x 90*B]");
    resize(batch);
    cache_valid_ = false;
    run_encoder(params, encoder_input);
    EncoderOutput<T> out;
    out.batch = batch;
    out.all_hidden = e_h_.back();
    for (std::size_t l = 0; l < static_cast<std::size_t>(L_); ++l) {
        out.final_h.push_back(e_h_[l].rightCols(batch));
        out.final_c.push_back(e_c_[l].rightCols(batch));
    }
    return out;
}

template <typename T>
typename Seq2SeqNet<T>::Matrix Seq2SeqNet<T>::decode(const Vector& params, const EncoderOutput<T>& encoded,
                                                     const Matrix& decoder_hint) {
    if (params.size() != layout_.total()) throw std::invalid_argument("parameter vector size mismatch");
    if (decoder_hint.rows() != n_ || decoder_hint.cols() != kDec * encoded.batch)
        throw std::invalid_argument("decoder hint must be [n_tags x 9*B]");
    resize(encoded.batch);
    cache_valid_ = false;
    run_decoder(params, encoded.all_hidden, encoded.final_h, encoded.final_c, decoder_hint);
    return pred_;
}

template class Seq2SeqNet<float>;
template class Seq2SeqNet<double>;

Eigen::MatrixXd predict(const SeqModelParams& params, const WindowBatch& batch) {
    Seq2SeqNet<double> net(params.config);
    return net.forward(params.values, batch);
}

double forward_loss(const SeqModelParams& params, const WindowBatch& batch, Eigen::MatrixXd* prediction) {
    Seq2SeqNet<double> net(params.config);
    const auto& pred = net.forward(params.values, batch);
    if (prediction) *prediction = pred;
    return net.loss(batch.target);
}

Eigen::VectorXd backward(const SeqModelParams& params, const WindowBatch& batch) {
    Seq2SeqNet<double> net(params.config);
    Eigen::VectorXd grad;
    net.loss_and_gradient(params.values, batch, grad);
    return grad;
}

}  // namespace icsad
