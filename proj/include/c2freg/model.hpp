#pragma once

// Coarse-to-fine vision transformer for affine registration.
//
// Stage i sees the fixed and moving images at pyramid level i (coarsest
// first), embeds the two-channel input into a T^3 grid of d-dimensional
// tokens with an overlapping strided convolution, runs a stack of
// attention / convolutional feed-forward blocks and regresses 12 raw
// parameters from the mean token. Raw outputs accumulate over stages and the
// tokens of one stage are added to the embedding of the next.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "c2freg/affine.hpp"
#include "c2freg/ops.hpp"
#include "c2freg/volume.hpp"

namespace c2freg {

enum class HeadMode { Decoupled, Direct };

std::string head_mode_name(HeadMode m);
HeadMode parse_head_mode(const std::string& name);

struct ModelConfig {
  std::size_t stages = 3;
  std::size_t blocks = 4;  // encoder blocks per stage
  std::size_t embed_dim = 256;
  std::size_t heads = 2;
  std::size_t token_grid = 16;  // tokens per axis
  std::size_t mlp_dim = 512;
  HeadMode head_mode = HeadMode::Decoupled;
  Dims input_dims = Dims::cube(128);
  bool progressive = true;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  std::size_t tokens() const { return token_grid * token_grid * token_grid; }
  std::size_t head_dim() const { return embed_dim / heads; }
  Dims stage_dims(std::size_t stage) const;
  ad::Index3 stage_stride(std::size_t stage) const;
  ad::Index3 stage_kernel(std::size_t stage) const;
  ad::Index3 stage_padding(std::size_t stage) const;

  /// Full-size network at 128^3.
  static ModelConfig full();
  /// Small network used for gradient checks.
  static ModelConfig toy();
  /// Network used for desk-scale training at 64^3.
  static ModelConfig desk();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameters. Names are "s<i>.embed.w", "s<i>.b<j>.wq", "s<i>.head.w2", ...
struct ModelState {
  std::map<std::string, NdArray> params;

  std::size_t parameter_count() const;
  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// Shapes of every parameter for a configuration.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

/// Truncated normal (sigma 0.02, cut at 2 sigma) weights, zero biases, zero
/// final head layer. Deterministic in the seed.
ModelState init_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Tape leaves for a state. Parameter ids follow the name order.
struct BoundModel {
  std::map<std::string, ad::Var> vars;
  const ad::Var& operator[](const std::string& name) const;
};
BoundModel bind(const ModelState& state, ad::Tape& tape);

// Building blocks. Tokens are [N, d] with N = T^3 in row-major grid order.

/// input [C,H,W,D] -> tokens [N,d].
ad::Var conv_patch_embed(const ad::Var& input, const ad::Var& w, const ad::Var& b,
                         ad::Index3 stride, ad::Index3 pad);

struct AttentionWeights {
  ad::Var wq, wk, wv, wo;  // [d,d]; head j owns columns [j*dh, (j+1)*dh) of wq/wk/wv
};
ad::Var multi_head_attention(const ad::Var& z, const AttentionWeights& w, std::size_t heads);

struct FeedForwardWeights {
  ad::Var w1, b1;  // [d,m], [m]
  ad::Var dw, db;  // [m,3,3,3], [m]
  ad::Var w2, b2;  // [m,d], [d]
};
ad::Var conv_feed_forward(const ad::Var& z, const FeedForwardWeights& w, std::size_t token_grid);

ad::Var encoder_block(const ad::Var& z, const AttentionWeights& attn, const FeedForwardWeights& ffn,
                      std::size_t heads, std::size_t token_grid);

struct HeadWeights {
  ad::Var w1, b1;  // [d,d], [d]
  ad::Var w2, b2;  // [d,12], [12]
};
/// Mean token -> tanh hidden layer -> 12 raw values.
ad::Var classification_head(const ad::Var& z, const HeadWeights& w);

/// Matrix from cumulative raw values for the configured head, pivoting at c.
ad::Var head_matrix(const ad::Var& raw, HeadMode mode, const Vec3& pivot);

struct ForwardResult {
  ad::Var matrix;                      // final stage, [4,4]
  std::vector<ad::Var> stage_matrices;  // coarse to fine
  std::vector<ad::Var> stage_raw;       // cumulative raw values per stage
};

/// fixed, moving: [H,W,D] Vars matching cfg.input_dims. The pivot is the
/// fixed image's centre of mass.
ForwardResult model_forward(const ad::Var& fixed, const ad::Var& moving, const BoundModel& m,
                            const ModelConfig& cfg);

struct Prediction {
  AffineMatrix matrix;
  std::vector<AffineMatrix> stages;
};
Prediction model_forward(const Volume3D& fixed, const Volume3D& moving, const ModelState& state,
                         const ModelConfig& cfg);

}  // namespace c2freg
