#include "c2freg/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace c2freg {

std::string head_mode_name(HeadMode m) { return m == HeadMode::Decoupled ? "decoupled" : "direct"; }

HeadMode parse_head_mode(const std::string& name) {
  if (name == "decoupled") return HeadMode::Decoupled;
  if (name == "direct") return HeadMode::Direct;
  throw std::invalid_argument("unknown head mode '" + name + "' (expected decoupled|direct)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (stages < 1) fail("stages must be >= 1");
  if (blocks < 1) fail("blocks must be >= 1");
  if (embed_dim < 1 || heads < 1) fail("embed_dim and heads must be >= 1");
  if (embed_dim % heads != 0)
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
         std::to_string(heads));
  if (token_grid < 1) fail("token_grid must be >= 1");
  if (mlp_dim < 1) fail("mlp_dim must be >= 1");
  std::vector<Dims> dims;
  try {
    dims = pyramid_dims(input_dims, stages);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  for (std::size_t i = 0; i < stages; ++i)
    for (std::size_t a = 0; a < 3; ++a)
      if (dims[i][a] % token_grid != 0)
        fail("stage " + std::to_string(i + 1) + " dims " + dims_str(dims[i]) +
             " not divisible by token_grid " + std::to_string(token_grid));
}

Dims ModelConfig::stage_dims(std::size_t stage) const { return pyramid_dims(input_dims, stages).at(stage); }

ad::Index3 ModelConfig::stage_stride(std::size_t stage) const {
  const Dims d = stage_dims(stage);
  return {d.h / token_grid, d.w / token_grid, d.d / token_grid};
}

ad::Index3 ModelConfig::stage_kernel(std::size_t stage) const {
  const ad::Index3 s = stage_stride(stage);
  return {2 * s[0] - 1, 2 * s[1] - 1, 2 * s[2] - 1};
}

ad::Index3 ModelConfig::stage_padding(std::size_t stage) const {
  const ad::Index3 k = stage_kernel(stage);
  return {k[0] / 2, k[1] / 2, k[2] / 2};
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.stages = 2;
  c.blocks = 1;
  c.embed_dim = 16;
  c.heads = 2;
  c.token_grid = 4;
  c.mlp_dim = 32;
  c.input_dims = Dims::cube(32);
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.stages = 3;
  c.blocks = 2;
  c.embed_dim = 32;
  c.heads = 2;
  c.token_grid = 4;
  c.mlp_dim = 64;
  c.input_dims = Dims::cube(64);
  return c;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.size();
  return n;
}

namespace {

std::string stage_prefix(std::size_t i) { return "s" + std::to_string(i) + "."; }
std::string block_prefix(std::size_t i, std::size_t j) {
  return stage_prefix(i) + "b" + std::to_string(j) + ".";
}

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  return name[dot + 1] == 'b' || name.compare(dot + 1, 2, "db") == 0;
}

bool is_final_head(const std::string& name) {
  return name.ends_with(".head.w2") || name.ends_with(".head.b2");
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, m = cfg.mlp_dim;
  std::map<std::string, Shape> out;
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    const std::string s = stage_prefix(i);
    const ad::Index3 k = cfg.stage_kernel(i);
    out[s + "embed.w"] = {d, 2, k[0], k[1], k[2]};
    out[s + "embed.b"] = {d};
    for (std::size_t j = 0; j < cfg.blocks; ++j) {
      const std::string b = block_prefix(i, j);
      for (const char* n : {"wq", "wk", "wv", "wo"}) out[b + n] = {d, d};
      out[b + "ffn.w1"] = {d, m};
      out[b + "ffn.b1"] = {m};
      out[b + "ffn.dw"] = {m, 3, 3, 3};
      out[b + "ffn.db"] = {m};
      out[b + "ffn.w2"] = {m, d};
      out[b + "ffn.b2"] = {d};
    }
    out[s + "head.w1"] = {d, d};
    out[s + "head.b1"] = {d};
    out[s + "head.w2"] = {d, 12};
    out[s + "head.b2"] = {12};
  }
  return out;
}

ModelState init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  constexpr double kSigma = 0.02;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kSigma);
  ModelState st;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    NdArray a(shape, 0.0);
    if (!is_bias(name) && !is_final_head(name)) {
      for (double& v : a.data()) {
        do {
          v = normal(rng);
        } while (std::abs(v) > 2.0 * kSigma);
      }
    }
    st.params.emplace(name, std::move(a));
  }
  return st;
}

const ad::Var& BoundModel::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("model has no parameter '" + name + "'");
  return it->second;
}

BoundModel bind(const ModelState& state, ad::Tape& tape) {
  BoundModel m;
  for (const auto& [name, value] : state.params) m.vars.emplace(name, tape.parameter(value));
  return m;
}

ad::Var conv_patch_embed(const ad::Var& input, const ad::Var& w, const ad::Var& b,
                         ad::Index3 stride, ad::Index3 pad) {
  const ad::Var y = ad::conv3d(input, w, b, stride, pad);  // [d,T,T,T]
  const Shape& s = y.shape();
  return ad::transpose(ad::reshape(y, {s[0], s[1] * s[2] * s[3]}));
}

ad::Var multi_head_attention(const ad::Var& z, const AttentionWeights& w, std::size_t heads) {
  if (z.value().rank() != 2) throw ShapeError("multi_head_attention: tokens must be [N,d], got " +
                                              shape_str(z.shape()));
  const std::size_t d = z.shape()[1];
  if (heads == 0 || d % heads != 0)
    throw ShapeError("multi_head_attention: d=" + std::to_string(d) + " not divisible by h=" +
                     std::to_string(heads));
  const std::size_t dh = d / heads;
  const ad::Var q = ad::matmul(z, w.wq);
  const ad::Var k = ad::matmul(z, w.wk);
  const ad::Var v = ad::matmul(z, w.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> parts;
  for (std::size_t j = 0; j < heads; ++j) {
    const ad::Var qj = ad::slice(q, 1, j * dh, (j + 1) * dh);
    const ad::Var kj = ad::slice(k, 1, j * dh, (j + 1) * dh);
    const ad::Var vj = ad::slice(v, 1, j * dh, (j + 1) * dh);
    const ad::Var scores = ad::scale(ad::matmul(qj, ad::transpose(kj)), inv_sqrt);
    parts.push_back(ad::matmul(ad::softmax_last(scores), vj));
  }
  const ad::Var joined = heads == 1 ? parts[0] : ad::concat(parts, 1);
  return ad::matmul(joined, w.wo);
}

ad::Var conv_feed_forward(const ad::Var& z, const FeedForwardWeights& w, std::size_t token_grid) {
  const std::size_t n = z.shape()[0];
  if (token_grid * token_grid * token_grid != n)
    throw ShapeError("conv_feed_forward: " + std::to_string(n) + " tokens do not form a " +
                     std::to_string(token_grid) + "^3 grid");
  const ad::Var h = ad::add_bias(ad::matmul(z, w.w1), w.b1);  // [N,m]
  const std::size_t m = h.shape()[1];
  const ad::Var grid = ad::reshape(ad::transpose(h), {m, token_grid, token_grid, token_grid});
  const ad::Var conv = ad::relu(ad::depthwise_conv3d(grid, w.dw, w.db, {1, 1, 1}));
  const ad::Var back = ad::transpose(ad::reshape(conv, {m, n}));
  return ad::add_bias(ad::matmul(back, w.w2), w.b2);
}

ad::Var encoder_block(const ad::Var& z, const AttentionWeights& attn, const FeedForwardWeights& ffn,
                      std::size_t heads, std::size_t token_grid) {
  const ad::Var z1 = ad::add(z, multi_head_attention(z, attn, heads));
  return ad::add(z1, conv_feed_forward(z1, ffn, token_grid));
}

ad::Var classification_head(const ad::Var& z, const HeadWeights& w) {
  const std::size_t d = z.shape()[1];
  const ad::Var pooled = ad::reshape(ad::mean_axis(z, 0), {1, d});
  const ad::Var hidden = ad::tanh(ad::add_bias(ad::matmul(pooled, w.w1), w.b1));
  return ad::reshape(ad::add_bias(ad::matmul(hidden, w.w2), w.b2), {12});
}

ad::Var head_matrix(const ad::Var& raw, HeadMode mode, const Vec3& pivot) {
  const ad::Var a = mode == HeadMode::Decoupled ? compose(constrain(raw)) : direct_matrix(raw);
  return recenter(a, pivot);
}

ForwardResult model_forward(const ad::Var& fixed, const ad::Var& moving, const BoundModel& m,
                            const ModelConfig& cfg) {
  cfg.validate();
  const Shape expect = cfg.input_dims.shape();
  if (fixed.shape() != expect) throw_shape_error("model_forward(fixed)", fixed.shape(), expect);
  if (moving.shape() != expect) throw_shape_error("model_forward(moving)", moving.shape(), expect);

  const Vec3 pivot = center_of_mass(Volume3D(cfg.input_dims, fixed.value().vec()));
  const auto f_pyr = build_pyramid(fixed, cfg.stages);
  const auto m_pyr = build_pyramid(moving, cfg.stages);

  ForwardResult out;
  ad::Var tokens, raw, matrix;
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    const Dims dims = cfg.stage_dims(i);
    const ad::Var mi = (cfg.progressive && i > 0) ? warp_affine(m_pyr[i], matrix, dims) : m_pyr[i];
    const Shape one = {1, dims.h, dims.w, dims.d};
    const ad::Var input = ad::concat({ad::reshape(f_pyr[i], one), ad::reshape(mi, one)}, 0);

    const std::string s = "s" + std::to_string(i) + ".";
    const ad::Var embedded = conv_patch_embed(input, m[s + "embed.w"], m[s + "embed.b"],
                                              cfg.stage_stride(i), cfg.stage_padding(i));
    tokens = tokens ? ad::add(embedded, tokens) : embedded;
    for (std::size_t j = 0; j < cfg.blocks; ++j) {
      const std::string b = s + "b" + std::to_string(j) + ".";
      const AttentionWeights attn{m[b + "wq"], m[b + "wk"], m[b + "wv"], m[b + "wo"]};
      const FeedForwardWeights ffn{m[b + "ffn.w1"], m[b + "ffn.b1"], m[b + "ffn.dw"],
                                   m[b + "ffn.db"], m[b + "ffn.w2"], m[b + "ffn.b2"]};
      tokens = encoder_block(tokens, attn, ffn, cfg.heads, cfg.token_grid);
    }
    const HeadWeights head{m[s + "head.w1"], m[s + "head.b1"], m[s + "head.w2"], m[s + "head.b2"]};
    const ad::Var delta = classification_head(tokens, head);
    raw = raw ? ad::add(raw, delta) : delta;
    matrix = head_matrix(raw, cfg.head_mode, pivot);
    out.stage_raw.push_back(raw);
    out.stage_matrices.push_back(matrix);
  }
  out.matrix = matrix;
  return out;
}

Prediction model_forward(const Volume3D& fixed, const Volume3D& moving, const ModelState& state,
                         const ModelConfig& cfg) {
  ad::Tape tape(false);
  const BoundModel m = bind(state, tape);
  const ForwardResult r = model_forward(tape.constant(fixed.to_ndarray()),
                                        tape.constant(moving.to_ndarray()), m, cfg);
  Prediction p;
  p.matrix = AffineMatrix::from_ndarray(r.matrix.value());
  for (const auto& a : r.stage_matrices) p.stages.push_back(AffineMatrix::from_ndarray(a.value()));
  return p;
}

}  // namespace c2freg
