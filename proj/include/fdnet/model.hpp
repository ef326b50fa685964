#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fdnet/embedding.hpp"
#include "fdnet/image.hpp"
#include "fdnet/nn.hpp"
#include "fdnet/wavelet.hpp"

namespace fdnet::model {

using ag::Tensor;

enum class BoundaryMode { ToyVit, Precomputed, Disabled };

BoundaryMode parse_boundary_mode(const std::string& text);
std::string boundary_mode_name(BoundaryMode mode);

/// Component switches of the ablation matrix.
struct Ablation {
    bool use_sam = true;
    bool use_lif = true;
    bool use_lw = true;
};

struct ModelConfig {
    int input_size = 256;
    int base_width = 16;
    int boundary_dim = 64;
    BoundaryMode boundary_mode = BoundaryMode::ToyVit;
    Ablation ablation;
    wavelet::Family wavelet = wavelet::Family::Haar;
    int ctb_dim = 64;  // channel-token embedding width
    int vit_patch = 8;
    int vit_dim = 96;
    int vit_heads = 4;
    int vit_depth = 4;
    std::uint64_t init_seed = 0;
    bool check_shapes = false;  // assert every intermediate against expected_shapes()

    /// Throws ConfigError.
    void validate() const;
    /// Boundary branch active (use_sam and a non-disabled mode).
    bool sam_enabled() const { return ablation.use_sam && boundary_mode != BoundaryMode::Disabled; }
    /// Encoder width at scale 1..5 (5 is the bottleneck).
    int width(int scale) const;
    /// Spatial extent at scale 1..5.
    int extent(int scale) const;
    int sam_channels() const { return sam_enabled() ? boundary_dim : 0; }
};

/// (name, shape) for every traced intermediate, in forward order.
using ShapeTable = std::vector<std::pair<std::string, ag::Shape>>;

/// The arithmetic shape table implied by a config.
ShapeTable expected_shapes(const ModelConfig& cfg);

// ---- components -----------------------------------------------------------

/// Two (conv3x3 -> group norm -> GELU) blocks.
class ConvBlock {
  public:
    ConvBlock() = default;
    ConvBlock(nn::ParamStore& ps, const std::string& name, int in, int out);
    Tensor operator()(const Tensor& x) const;

  private:
    nn::Conv2d conv1_, conv2_;
    nn::GroupNorm norm1_, norm2_;
};

/// UNet-style encoder: four pooled stages plus the bottleneck.
class UNetEncoder {
  public:
    UNetEncoder() = default;
    UNetEncoder(nn::ParamStore& ps, const std::string& name, int in_channels, const ModelConfig& cfg);
    /// Returns L_1..L_5. Throws ConfigError when the extent is not divisible by 16.
    std::vector<Tensor> operator()(const Tensor& input) const;

  private:
    std::vector<ConvBlock> stages_;
};

struct CtbOutput {
    Tensor fused;      // C x H x W
    Tensor attention;  // C x C, rows sum to 1
};

/// Channel-token cross attention for one scale: U_w channel tokens query
/// U_o channel tokens; the attended tokens are re-projected to C x H x W and
/// added to the element-wise branch sum.
class ChannelTokenFusion {
  public:
    ChannelTokenFusion() = default;
    ChannelTokenFusion(nn::ParamStore& ps, const std::string& name, int channels, int height, int width,
                       int token_dim);
    CtbOutput operator()(const Tensor& uw, const Tensor& uo) const;

  private:
    int channels_ = 0, height_ = 0, width_ = 0, dim_ = 0;
    nn::Linear embed_w_, embed_o_;
    nn::LayerNorm norm_q_, norm_kv_, norm_mlp_;
    nn::Linear query_, key_, value_, attn_out_, mlp_in_, mlp_out_, reproject_;
};

/// Per-scale R pyramid from the two encoders. With use_lif off the fusion
/// is a plain element-wise sum.
struct CtbPyramid {
    std::vector<Tensor> r;          // R_1..R_4
    std::vector<Tensor> attention;  // empty when LIF is disabled
};

/// Patch-embedding transformer standing in for the pretrained boundary
/// encoder. Output is the boundary_dim x (S/p) x (S/p) grid.
class ToyVit {
  public:
    ToyVit() = default;
    ToyVit(nn::ParamStore& ps, const std::string& name, const ModelConfig& cfg);
    Tensor operator()(const Tensor& image) const;

  private:
    struct Block {
        nn::LayerNorm norm1, norm2;
        nn::Linear qkv, proj, fc1, fc2;
    };
    int patch_ = 8, dim_ = 96, heads_ = 4, grid_ = 0, out_dim_ = 0;
    nn::Linear embed_;
    Tensor pos_;
    std::vector<Block> blocks_;
    nn::LayerNorm final_norm_;
    nn::Linear head_;
};

/// Boundary embedding resampled to each fusion scale (index 0 -> scale 2,
/// ..., index 3 -> bottleneck scale 5).
struct BoundaryEmbedding {
    Tensor grid;
    std::array<Tensor, 4> per_scale;
    const Tensor& at_scale(int scale) const { return per_scale.at(scale - 2); }
};

BoundaryEmbedding resample_boundary(const Tensor& grid, const ModelConfig& cfg);
/// HWC file grid -> C x H x W constant tensor.
Tensor grid_tensor(const EmbeddingGrid& grid);

struct CcaOutput {
    Tensor out;
    Tensor gate;  // per encoder channel, in (0,1)
};

/// Channel-wise cross attention: encoder channels gated by
/// sigmoid(b + a * (1 + e)), with a = W_d·gap(decoder) and
/// e = W_e·gap(encoder). A zero decoder descriptor leaves sigmoid(b).
class ChannelCrossAttention {
  public:
    ChannelCrossAttention() = default;
    ChannelCrossAttention(nn::ParamStore& ps, const std::string& name, int encoder_channels, int decoder_channels);
    /// Throws DimensionError unless the spatial extents match.
    CcaOutput operator()(const Tensor& encoder, const Tensor& decoder) const;

  private:
    nn::Linear from_decoder_, from_encoder_;
    Tensor bias_;
};

/// Fuse conv followed by two residual conv blocks.
class DecoderStage {
  public:
    DecoderStage() = default;
    DecoderStage(nn::ParamStore& ps, const std::string& name, int in, int out);
    Tensor operator()(const Tensor& x) const;

  private:
    nn::Conv2d fuse_;
    nn::GroupNorm fuse_norm_;
    std::array<nn::Conv2d, 2> res_conv_;
    std::array<nn::GroupNorm, 2> res_norm_;
};

/// Upsamples `x` bilinearly to the spatial extent of `like`.
Tensor upsample_to(const Tensor& x, const Tensor& like);

// ---- full network -----------------------------------------------------------

struct ForwardOutput {
    Tensor logits;  // 1 x H x W
    ShapeTable trace;
    std::vector<Tensor> ctb_attention;
    std::vector<Tensor> cca_gates;  // scale 2, 3, 4
};

class FDNet {
  public:
    explicit FDNet(ModelConfig cfg);

    /// `boundary` is required exactly when the boundary branch runs in
    /// precomputed mode.
    ForwardOutput forward(const Image2D& img, const EmbeddingGrid* boundary = nullptr) const;
    Tensor logits(const Image2D& img, const EmbeddingGrid* boundary = nullptr) const {
        return forward(img, boundary).logits;
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    // Stage-level entry points, used by forward() and exposed for tests.
    std::pair<Tensor, Tensor> encoder_inputs(const Image2D& img) const;
    CtbPyramid ctb_fuse(const std::vector<Tensor>& uw, const std::vector<Tensor>& uo) const;
    std::optional<BoundaryEmbedding> boundary_encode(const Image2D& img, const EmbeddingGrid* boundary) const;
    /// E_5 = Concat(SAM_5, L_5), or L_5 alone without the boundary branch.
    Tensor build_e5(const std::optional<BoundaryEmbedding>& sam, const Tensor& l5) const;
    /// R'_j for j in {2,3,4}; `next` is D_{j+1} (E_5 for j = 4).
    CcaOutput fuse_stage(int j, const std::optional<BoundaryEmbedding>& sam, const Tensor& r, const Tensor& next) const;

    const UNetEncoder& encoder_w() const { return enc_w_; }
    const UNetEncoder& encoder_o() const { return enc_o_; }

  private:
    ModelConfig cfg_;
    nn::ParamStore params_;
    UNetEncoder enc_w_, enc_o_;
    std::vector<ChannelTokenFusion> ctb_;
    std::optional<ToyVit> vit_;
    std::array<ChannelCrossAttention, 3> cca_;  // scales 2, 3, 4
    std::array<DecoderStage, 4> decoder_;       // scales 1..4
    nn::Conv2d head_;
};

/// Image2D -> 1 x H x W constant tensor.
Tensor image_tensor(const Image2D& img);

}  // namespace fdnet::model
