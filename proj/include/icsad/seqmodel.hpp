#pragma once

// Per-process sequence-to-sequence predictor.
//
// A stacked LSTM encoder reads seconds 1..90 of a window. Its final (h, c)
// per layer seeds a stacked LSTM decoder that reads the 9-second hint
// (seconds 91..99) with teacher forcing. At every decoder step the top
// decoder hidden state attends over all top-layer encoder hidden states; the
// context and the hidden state are combined into an attentional state
//     a_k = tanh(Wc [context_k; s_k] + bc)
// which is fed back into the next decoder step next to the hint values
// (input feeding). The prediction of second 100 is Wo a_9 + bo.
//
// Batched matrices keep one window per column, with step-major column blocks:
// column t * B + b is step t of window b.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "icsad/dataset.hpp"

namespace icsad {

enum class AttentionKind : std::uint8_t {
    /// score = h_enc . (Wa s); multiplicative attention with a learned projection.
    general,
    /// score = v . tanh(W1 h_enc + W2 s).
    additive,
};

std::string_view to_string(AttentionKind kind);
AttentionKind parse_attention_kind(std::string_view text);

struct ModelConfig {
    int n_tags = 0;
    int hidden_dim = 64;
    int num_layers = 2;
    int process_id = 0;
    std::uint64_t seed = 0;
    AttentionKind attention = AttentionKind::general;

    /// Throws std::invalid_argument on a non-positive size.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TensorSlot {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
    Eigen::Index size() const { return rows * cols; }
};

/// Order and shape of every trainable tensor inside the flat parameter vector.
class ParamLayout {
public:
    static ParamLayout for_config(const ModelConfig& config);

    const std::vector<TensorSlot>& slots() const { return slots_; }
    Eigen::Index total() const { return total_; }
    const TensorSlot& at(std::string_view name) const;

private:
    std::vector<TensorSlot> slots_;
    Eigen::Index total_ = 0;
};

/// Trainable weights of one per-process model plus its normalization stats.
/// values is laid out by ParamLayout::for_config(config).
struct SeqModelParams {
    ModelConfig config;
    NormStats norm_stats;
    Eigen::VectorXd values;

    ParamLayout layout() const { return ParamLayout::for_config(config); }
    Eigen::Map<const Eigen::MatrixXd> tensor(std::string_view name) const;
    Eigen::Map<Eigen::MatrixXd> tensor(std::string_view name);
    const std::vector<std::string>& tag_names() const { return norm_stats.names; }
};

/// Weights uniform in +-1/sqrt(fan_in) (fan_in = columns of the tensor),
/// biases zero except the LSTM forget gates, which start at 1.
SeqModelParams init_params(const ModelConfig& config, std::uint64_t seed);
inline SeqModelParams init_params(const ModelConfig& config) { return init_params(config, config.seed); }

/// Gate rows are ordered input, forget, cell, output.
struct LstmLayerParams {
    Eigen::MatrixXd input_weights;      // [4H x input_dim]
    Eigen::MatrixXd recurrent_weights;  // [4H x H]
    Eigen::VectorXd bias;               // [4H]

    Eigen::Index hidden_dim() const { return recurrent_weights.cols(); }
};

enum class Stack : std::uint8_t { encoder, decoder };
LstmLayerParams lstm_layer(const SeqModelParams& params, Stack stack, int layer);

struct LstmState {
    Eigen::VectorXd h;
    Eigen::VectorXd c;
};

/// One unbatched LSTM step.
LstmState lstm_cell_forward(const LstmLayerParams& params, const Eigen::VectorXd& x,
                            const LstmState& state);

struct AttentionOutput {
    Eigen::VectorXd weights;  // one per encoder step, nonnegative, sums to 1
    Eigen::VectorXd context;
};

/// Softmax with max subtraction.
Eigen::VectorXd softmax(const Eigen::VectorXd& scores);

/// Weights = softmax(scores), context = all_hidden * weights.
AttentionOutput attend_scores(const Eigen::VectorXd& scores, const Eigen::MatrixXd& all_hidden);

/// Scores one decoder hidden state against the encoder trace [H x steps]
/// with the model's attention variant.
AttentionOutput attend(const SeqModelParams& params, const Eigen::VectorXd& decoder_hidden,
                       const Eigen::MatrixXd& all_hidden);

template <typename T>
struct EncoderOutput {
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

    Eigen::Index batch = 0;
    /// Top-layer hidden states, [H x (90 * B)] in step-major blocks.
    Matrix all_hidden;
    /// Final hidden/cell state of every layer, [H x B] each.
    std::vector<Matrix> final_h;
    std::vector<Matrix> final_c;

    const Matrix& last_hidden() const { return final_h.back(); }
    const Matrix& last_cell() const { return final_c.back(); }
};

/// Batched forward and reverse-mode pass over one model architecture. The
/// object owns activation caches; one instance serves one thread.
template <typename T>
class Seq2SeqNet {
public:
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    using Batch = BasicWindowBatch<T>;

    explicit Seq2SeqNet(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const ParamLayout& layout() const { return layout_; }

    /// Runs encoder and decoder, caching activations for backward().
    /// Returns the prediction [n_tags x B].
    const Matrix& forward(const Vector& params, const Batch& batch);

    /// Mean squared error of the cached prediction over batch and tags.
    T loss(const Matrix& target) const;

    /// Adds d(loss)/d(params) * scale to grad for the batch of the last
    /// forward(). Consumes the activation cache.
    void backward(const Vector& params, const Matrix& target, Vector& grad, T scale = T(1));

    /// forward + loss + backward; grad is overwritten.
    T loss_and_gradient(const Vector& params, const Batch& batch, Vector& grad);

    EncoderOutput<T> encode(const Vector& params, const Matrix& encoder_input, Eigen::Index batch);
    Matrix decode(const Vector& params, const EncoderOutput<T>& encoded, const Matrix& decoder_hint);

    /// Attention weights [90 x B] of decoder step k from the last forward().
    const Matrix& attention_weights(int step) const { return alpha_[static_cast<std::size_t>(step)]; }

private:
    struct LayerSlots {
        Eigen::Index wx, wh, b, in_dim;
    };

    void resize(Eigen::Index batch);
    void run_encoder(const Vector& params, const Matrix& input);
    void run_decoder(const Vector& params, const Matrix& enc_hidden, const std::vector<Matrix>& h0,
                     const std::vector<Matrix>& c0, const Matrix& hint);

    ModelConfig config_;
    ParamLayout layout_;
    Eigen::Index H_, n_;
    int L_;
    std::vector<LayerSlots> enc_, dec_;
    Eigen::Index att_w_ = 0, att_w2_ = 0, att_v_ = 0;
    Eigen::Index comb_w_ = 0, comb_b_ = 0, out_w_ = 0, out_b_ = 0;

    Eigen::Index B_ = 0;
    bool cache_valid_ = false;
    const Matrix* enc_input_ = nullptr;
    // encoder caches per layer: gate activations (reused for gate grads), c, tanh(c), h
    std::vector<Matrix> e_act_, e_c_, e_tc_, e_h_;
    // decoder caches per layer
    std::vector<Matrix> d_act_, d_c_, d_tc_, d_h_;
    std::vector<Matrix> d_h0_, d_c0_;
    const Matrix* enc_hidden_ = nullptr;
    Matrix d_in0_;          // [(n + H) x 9B] layer-0 decoder inputs
    Matrix query_;          // general: Wa s per step, [H x 9B]
    Matrix w1e_;            // additive: W1 * enc hidden, [H x 90B]
    std::vector<Matrix> u_;  // additive: tanh(W1 e + W2 s) per step
    std::vector<Matrix> alpha_;  // [90 x B] per step
    Matrix ctx_, att_;      // [H x 9B]
    Matrix pred_;
    Matrix enc_hidden_copy_;
};

extern template class Seq2SeqNet<float>;
extern template class Seq2SeqNet<double>;

/// Single-model convenience: prediction [n_tags x B] for a batch.
Eigen::MatrixXd predict(const SeqModelParams& params, const WindowBatch& batch);

/// MSE between prediction and target, averaged over batch and tags.
double forward_loss(const SeqModelParams& params, const WindowBatch& batch,
                    Eigen::MatrixXd* prediction = nullptr);

/// Exact gradient of forward_loss with respect to params.values.
Eigen::VectorXd backward(const SeqModelParams& params, const WindowBatch& batch);

/// Checkpoint container: magic "ICSADCKP", u32 format version, u64 header
/// length, JSON header (config, norm stats, layout), then the little-endian
/// float64 parameter array.
void save_checkpoint(const std::filesystem::path& path, const SeqModelParams& params);
SeqModelParams load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const SeqModelParams& params);
SeqModelParams deserialize_checkpoint(std::string_view bytes);

}  // namespace icsad
