#include "fdnet/model.hpp"

#include <cmath>

#include "fdnet/error.hpp"

namespace fdnet::model {
namespace {

std::string sc(int j) { return std::to_string(j); }

ag::Shape chw(int c, int extent) { return {c, extent, extent}; }

}  // namespace

BoundaryMode parse_boundary_mode(const std::string& text) {
    if (text == "toy_vit") return BoundaryMode::ToyVit;
    if (text == "precomputed") return BoundaryMode::Precomputed;
    if (text == "disabled") return BoundaryMode::Disabled;
    throw ConfigError("unknown boundary_mode '" + text + "' (valid: toy_vit, precomputed, disabled)");
}

std::string boundary_mode_name(BoundaryMode mode) {
    switch (mode) {
        case BoundaryMode::ToyVit: return "toy_vit";
        case BoundaryMode::Precomputed: return "precomputed";
        case BoundaryMode::Disabled: return "disabled";
    }
    return "toy_vit";
}

void ModelConfig::validate() const {
    if (input_size <= 0 || input_size % 16 != 0) {
        throw ConfigError("input_size must be a positive multiple of 16, got " + std::to_string(input_size));
    }
    if (base_width <= 0) throw ConfigError("base_width must be positive");
    if (boundary_dim <= 0) throw ConfigError("boundary_dim must be positive");
    if (ctb_dim <= 0) throw ConfigError("ctb_dim must be positive");
    if (sam_enabled() && boundary_mode == BoundaryMode::ToyVit) {
        if (vit_patch <= 0 || input_size % vit_patch != 0) {
            throw ConfigError("input_size must be divisible by vit_patch");
        }
        if (vit_dim <= 0 || vit_heads <= 0 || vit_dim % vit_heads != 0 || vit_depth < 0) {
            throw ConfigError("vit_dim must be a positive multiple of vit_heads");
        }
    }
}

int ModelConfig::width(int scale) const { return scale >= 5 ? base_width * 16 : base_width << (scale - 1); }

int ModelConfig::extent(int scale) const { return input_size >> (scale - 1); }

ShapeTable expected_shapes(const ModelConfig& cfg) {
    ShapeTable t;
    const int s = cfg.input_size;
    const int bd = cfg.sam_channels();
    t.emplace_back("input.U_w", chw(2, s));
    t.emplace_back("input.U_o", chw(1, s));
    for (const char* branch : {"U_w", "U_o"}) {
        for (int j = 1; j <= 5; ++j) t.emplace_back(std::string(branch) + ".L" + sc(j), chw(cfg.width(j), cfg.extent(j)));
    }
    for (int j = 1; j <= 4; ++j) t.emplace_back("R" + sc(j), chw(cfg.width(j), cfg.extent(j)));
    t.emplace_back("L5", chw(cfg.width(5), cfg.extent(5)));
    if (cfg.sam_enabled()) {
        const int grid = cfg.boundary_mode == BoundaryMode::ToyVit ? s / cfg.vit_patch : -1;
        if (grid > 0) t.emplace_back("SAM.grid", chw(bd, grid));
        for (int j = 2; j <= 5; ++j) t.emplace_back("SAM.s" + sc(j), chw(bd, cfg.extent(j)));
    }
    t.emplace_back("E5", chw(bd + cfg.width(5), cfg.extent(5)));
    for (int j = 4; j >= 2; --j) {
        t.emplace_back("R" + sc(j) + "'", chw(bd + cfg.width(j), cfg.extent(j)));
        t.emplace_back("D" + sc(j), chw(cfg.width(j), cfg.extent(j)));
    }
    t.emplace_back("D1", chw(cfg.width(1), cfg.extent(1)));
    t.emplace_back("logits", chw(1, s));
    return t;
}

// ---- blocks ---------------------------------------------------------------

ConvBlock::ConvBlock(nn::ParamStore& ps, const std::string& name, int in, int out)
    : conv1_(ps, name + ".conv1", in, out, 3, false),
      conv2_(ps, name + ".conv2", out, out, 3, false),
      norm1_(ps, name + ".norm1", out),
      norm2_(ps, name + ".norm2", out) {}

Tensor ConvBlock::operator()(const Tensor& x) const {
    Tensor h = ag::gelu(norm1_(conv1_(x)));
    return ag::gelu(norm2_(conv2_(h)));
}

UNetEncoder::UNetEncoder(nn::ParamStore& ps, const std::string& name, int in_channels, const ModelConfig& cfg) {
    int in = in_channels;
    for (int j = 1; j <= 5; ++j) {
        stages_.emplace_back(ps, name + ".stage" + sc(j), in, cfg.width(j));
        in = cfg.width(j);
    }
}

std::vector<Tensor> UNetEncoder::operator()(const Tensor& input) const {
    if (input.shape().size() != 3 || input.dim(1) % 16 != 0 || input.dim(2) % 16 != 0) {
        throw ConfigError("encoder input extent must be divisible by 16, got " + ag::shape_str(input.shape()));
    }
    std::vector<Tensor> feats;
    Tensor x = input;
    for (std::size_t j = 0; j < stages_.size(); ++j) {
        if (j > 0) x = ag::max_pool2(x);
        x = stages_[j](x);
        feats.push_back(x);
    }
    return feats;
}

ChannelTokenFusion::ChannelTokenFusion(nn::ParamStore& ps, const std::string& name, int channels, int height,
                                       int width, int token_dim)
    : channels_(channels), height_(height), width_(width), dim_(token_dim) {
    const int hw = height * width;
    embed_w_ = nn::Linear(ps, name + ".embed_w", hw, token_dim);
    embed_o_ = nn::Linear(ps, name + ".embed_o", hw, token_dim);
    norm_q_ = nn::LayerNorm(ps, name + ".norm_q", token_dim);
    norm_kv_ = nn::LayerNorm(ps, name + ".norm_kv", token_dim);
    query_ = nn::Linear(ps, name + ".query", token_dim, token_dim);
    key_ = nn::Linear(ps, name + ".key", token_dim, token_dim);
    value_ = nn::Linear(ps, name + ".value", token_dim, token_dim);
    attn_out_ = nn::Linear(ps, name + ".attn_out", token_dim, token_dim);
    norm_mlp_ = nn::LayerNorm(ps, name + ".norm_mlp", token_dim);
    mlp_in_ = nn::Linear(ps, name + ".mlp_in", token_dim, 2 * token_dim);
    mlp_out_ = nn::Linear(ps, name + ".mlp_out", 2 * token_dim, token_dim);
    reproject_ = nn::Linear(ps, name + ".reproject", token_dim, hw);
}

CtbOutput ChannelTokenFusion::operator()(const Tensor& uw, const Tensor& uo) const {
    if (uw.shape() != uo.shape()) {
        throw DimensionError("ctb_fuse: branch shapes differ " + ag::shape_str(uw.shape()) + " vs " +
                             ag::shape_str(uo.shape()));
    }
    if (uw.shape() != ag::Shape{channels_, height_, width_}) {
        throw DimensionError("ctb_fuse: expected " + ag::shape_str({channels_, height_, width_}) + ", got " +
                             ag::shape_str(uw.shape()));
    }
    const int hw = height_ * width_;
    const Tensor tokens_w = embed_w_(ag::reshape(uw, {channels_, hw}));
    const Tensor tokens_o = embed_o_(ag::reshape(uo, {channels_, hw}));

    const Tensor q = query_(norm_q_(tokens_w));
    const Tensor kv = norm_kv_(tokens_o);
    const Tensor k = key_(kv);
    const Tensor v = value_(kv);
    const Tensor scores = ag::scale(ag::matmul(q, ag::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dim_)));
    const Tensor attn = ag::softmax_rows(scores);

    Tensor t = ag::add(tokens_w, attn_out_(ag::matmul(attn, v)));
    t = ag::add(t, mlp_out_(ag::gelu(mlp_in_(norm_mlp_(t)))));
    const Tensor back = ag::reshape(reproject_(t), {channels_, height_, width_});
    return {ag::add(ag::add(uw, uo), back), attn};
}

ToyVit::ToyVit(nn::ParamStore& ps, const std::string& name, const ModelConfig& cfg)
    : patch_(cfg.vit_patch),
      dim_(cfg.vit_dim),
      heads_(cfg.vit_heads),
      grid_(cfg.input_size / cfg.vit_patch),
      out_dim_(cfg.boundary_dim) {
    embed_ = nn::Linear(ps, name + ".patch_embed", patch_ * patch_, dim_);
    pos_ = ps.fan_in_uniform(name + ".pos_embed", {grid_ * grid_, dim_}, dim_);
    for (int b = 0; b < cfg.vit_depth; ++b) {
        const std::string p = name + ".block" + sc(b);
        blocks_.push_back({nn::LayerNorm(ps, p + ".norm1", dim_), nn::LayerNorm(ps, p + ".norm2", dim_),
                           nn::Linear(ps, p + ".qkv", dim_, 3 * dim_), nn::Linear(ps, p + ".proj", dim_, dim_),
                           nn::Linear(ps, p + ".fc1", dim_, 4 * dim_), nn::Linear(ps, p + ".fc2", 4 * dim_, dim_)});
    }
    final_norm_ = nn::LayerNorm(ps, name + ".norm", dim_);
    head_ = nn::Linear(ps, name + ".head", dim_, out_dim_);
}

Tensor ToyVit::operator()(const Tensor& image) const {
    if (image.shape() != ag::Shape{1, grid_ * patch_, grid_ * patch_}) {
        throw DimensionError("toy_vit: unexpected input " + ag::shape_str(image.shape()));
    }
    Tensor x = ag::add(embed_(ag::patchify(image, patch_)), pos_);
    const int hd = dim_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (const auto& blk : blocks_) {
        const Tensor qkv = blk.qkv(blk.norm1(x));
        std::vector<Tensor> heads;
        for (int h = 0; h < heads_; ++h) {
            const Tensor q = ag::slice_cols(qkv, h * hd, hd);
            const Tensor k = ag::slice_cols(qkv, dim_ + h * hd, hd);
            const Tensor v = ag::slice_cols(qkv, 2 * dim_ + h * hd, hd);
            const Tensor a = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), inv_sqrt));
            heads.push_back(ag::matmul(a, v));
        }
        x = ag::add(x, blk.proj(heads.size() == 1 ? heads[0] : ag::concat_cols(heads)));
        x = ag::add(x, blk.fc2(ag::gelu(blk.fc1(blk.norm2(x)))));
    }
    const Tensor out = head_(final_norm_(x));  // N x boundary_dim
    return ag::reshape(ag::transpose(out), {out_dim_, grid_, grid_});
}

BoundaryEmbedding resample_boundary(const Tensor& grid, const ModelConfig& cfg) {
    BoundaryEmbedding b;
    b.grid = grid;
    for (int j = 2; j <= 5; ++j) b.per_scale[j - 2] = ag::resize_bilinear(grid, cfg.extent(j), cfg.extent(j));
    return b;
}

Tensor grid_tensor(const EmbeddingGrid& grid) {
    std::vector<double> v(grid.data.size());
    for (int c = 0; c < grid.channels; ++c) {
        for (int y = 0; y < grid.grid_h; ++y) {
            for (int x = 0; x < grid.grid_w; ++x) {
                v[(static_cast<std::size_t>(c) * grid.grid_h + y) * grid.grid_w + x] = grid.at(y, x, c);
            }
        }
    }
    return Tensor::constant({grid.channels, grid.grid_h, grid.grid_w}, std::move(v));
}

ChannelCrossAttention::ChannelCrossAttention(nn::ParamStore& ps, const std::string& name, int encoder_channels,
                                             int decoder_channels) {
    from_decoder_ = nn::Linear(ps, name + ".from_decoder", decoder_channels, encoder_channels, false);
    from_encoder_ = nn::Linear(ps, name + ".from_encoder", encoder_channels, encoder_channels, false);
    bias_ = ps.constant(name + ".bias", {encoder_channels}, 0.0);
}

CcaOutput ChannelCrossAttention::operator()(const Tensor& encoder, const Tensor& decoder) const {
    if (encoder.shape().size() != 3 || decoder.shape().size() != 3 || encoder.dim(1) != decoder.dim(1) ||
        encoder.dim(2) != decoder.dim(2)) {
        throw DimensionError("cca: spatial mismatch " + ag::shape_str(encoder.shape()) + " vs " +
                             ag::shape_str(decoder.shape()));
    }
    const int ce = encoder.dim(0);
    const Tensor enc_desc = ag::reshape(ag::channel_mean(encoder), {1, ce});
    const Tensor dec_desc = ag::reshape(ag::channel_mean(decoder), {1, decoder.dim(0)});
    const Tensor a = ag::reshape(from_decoder_(dec_desc), {ce});
    const Tensor e = ag::reshape(from_encoder_(enc_desc), {ce});
    const Tensor logits = ag::add(bias_, ag::mul(a, ag::add_scalar(e, 1.0)));
    const Tensor gate = ag::sigmoid(logits);
    return {ag::scale_channels(encoder, gate), gate};
}

DecoderStage::DecoderStage(nn::ParamStore& ps, const std::string& name, int in, int out)
    : fuse_(ps, name + ".fuse", in, out, 3, false), fuse_norm_(ps, name + ".fuse_norm", out) {
    for (int r = 0; r < 2; ++r) {
        res_conv_[r] = nn::Conv2d(ps, name + ".res" + sc(r) + ".conv", out, out, 3, false);
        res_norm_[r] = nn::GroupNorm(ps, name + ".res" + sc(r) + ".norm", out);
    }
}

Tensor DecoderStage::operator()(const Tensor& x) const {
    Tensor h = ag::gelu(fuse_norm_(fuse_(x)));
    for (int r = 0; r < 2; ++r) h = ag::gelu(ag::add(h, res_norm_[r](res_conv_[r](h))));
    return h;
}

Tensor upsample_to(const Tensor& x, const Tensor& like) { return ag::resize_bilinear(x, like.dim(1), like.dim(2)); }

Tensor image_tensor(const Image2D& img) {
    return Tensor::constant({1, img.height(), img.width()}, {img.pixels().begin(), img.pixels().end()});
}

// ---- FDNet ----------------------------------------------------------------

FDNet::FDNet(ModelConfig cfg) : cfg_(std::move(cfg)), params_(cfg_.init_seed) {
    cfg_.validate();
    const int bd = cfg_.sam_channels();
    enc_w_ = UNetEncoder(params_, "U_w", 2, cfg_);
    enc_o_ = UNetEncoder(params_, "U_o", 1, cfg_);
    if (cfg_.ablation.use_lif) {
        for (int j = 1; j <= 4; ++j) {
            ctb_.emplace_back(params_, "ctb.s" + sc(j), cfg_.width(j), cfg_.extent(j), cfg_.extent(j), cfg_.ctb_dim);
        }
    }
    if (cfg_.sam_enabled() && cfg_.boundary_mode == BoundaryMode::ToyVit) vit_.emplace(params_, "sam", cfg_);
    for (int j = 2; j <= 4; ++j) {
        const int dec_in = j == 4 ? bd + cfg_.width(5) : cfg_.width(j + 1);
        cca_[j - 2] = ChannelCrossAttention(params_, "cca.s" + sc(j), bd + cfg_.width(j), dec_in);
    }
    for (int j = 1; j <= 4; ++j) {
        const int skip = j == 1 ? cfg_.width(1) : bd + cfg_.width(j);
        const int below = j == 4 ? bd + cfg_.width(5) : cfg_.width(j + 1);
        decoder_[j - 1] = DecoderStage(params_, "dec.s" + sc(j), skip + below, cfg_.width(j));
    }
    head_ = nn::Conv2d(params_, "head", cfg_.width(1), 1, 1, true);
}

std::pair<Tensor, Tensor> FDNet::encoder_inputs(const Image2D& img) const {
    if (img.height() != cfg_.input_size || img.width() != cfg_.input_size) {
        throw ConfigError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                          " does not match input_size " + std::to_string(cfg_.input_size));
    }
    const Tensor raw = image_tensor(img);
    const Tensor second = cfg_.ablation.use_lw ? image_tensor(wavelet::lf_enhance(img, cfg_.wavelet)) : raw;
    return {ag::concat({raw, second}), raw};
}

CtbPyramid FDNet::ctb_fuse(const std::vector<Tensor>& uw, const std::vector<Tensor>& uo) const {
    if (uw.size() < 4 || uo.size() < 4) throw DimensionError("ctb_fuse: need four scales per branch");
    CtbPyramid out;
    for (int j = 0; j < 4; ++j) {
        if (uw[j].shape() != uo[j].shape()) {
            throw DimensionError("ctb_fuse: scale " + sc(j + 1) + " shape mismatch " + ag::shape_str(uw[j].shape()) +
                                 " vs " + ag::shape_str(uo[j].shape()));
        }
        if (ctb_.empty()) {
            out.r.push_back(ag::add(uw[j], uo[j]));
        } else {
            auto fused = ctb_[j](uw[j], uo[j]);
            out.r.push_back(fused.fused);
            out.attention.push_back(fused.attention);
        }
    }
    return out;
}

std::optional<BoundaryEmbedding> FDNet::boundary_encode(const Image2D& img, const EmbeddingGrid* boundary) const {
    if (!cfg_.sam_enabled()) return std::nullopt;
    if (cfg_.boundary_mode == BoundaryMode::ToyVit) return resample_boundary((*vit_)(image_tensor(img)), cfg_);
    if (!boundary) throw ConfigError("boundary_mode precomputed requires an embedding for every image");
    if (boundary->channels != cfg_.boundary_dim) {
        throw ConfigError("precomputed embedding has " + std::to_string(boundary->channels) +
                          " channels, boundary_dim is " + std::to_string(cfg_.boundary_dim));
    }
    return resample_boundary(grid_tensor(*boundary), cfg_);
}

Tensor FDNet::build_e5(const std::optional<BoundaryEmbedding>& sam, const Tensor& l5) const {
    if (!sam) return l5;
    return ag::concat({sam->at_scale(5), l5});
}

CcaOutput FDNet::fuse_stage(int j, const std::optional<BoundaryEmbedding>& sam, const Tensor& r,
                            const Tensor& next) const {
    if (j < 2 || j > 4) throw InternalError("fusion is defined for scales 2..4 only");
    if (cfg_.sam_enabled() && !sam) throw ConfigError("boundary embedding missing while use_sam is on");
    const Tensor enc = sam ? ag::concat({sam->at_scale(j), r}) : r;
    return cca_[j - 2](enc, upsample_to(next, r));
}

ForwardOutput FDNet::forward(const Image2D& img, const EmbeddingGrid* boundary) const {
    ForwardOutput out;
    auto& tr = out.trace;
    const auto [in_w, in_o] = encoder_inputs(img);
    tr.emplace_back("input.U_w", in_w.shape());
    tr.emplace_back("input.U_o", in_o.shape());

    const auto lw = enc_w_(in_w);
    const auto lo = enc_o_(in_o);
    for (int j = 0; j < 5; ++j) tr.emplace_back("U_w.L" + sc(j + 1), lw[j].shape());
    for (int j = 0; j < 5; ++j) tr.emplace_back("U_o.L" + sc(j + 1), lo[j].shape());

    auto pyramid = ctb_fuse(lw, lo);
    for (int j = 0; j < 4; ++j) tr.emplace_back("R" + sc(j + 1), pyramid.r[j].shape());
    out.ctb_attention = pyramid.attention;
    const Tensor l5 = ag::add(lw[4], lo[4]);
    tr.emplace_back("L5", l5.shape());

    const auto sam = boundary_encode(img, boundary);
    if (sam) {
        if (cfg_.boundary_mode == BoundaryMode::ToyVit) tr.emplace_back("SAM.grid", sam->grid.shape());
        for (int j = 2; j <= 5; ++j) tr.emplace_back("SAM.s" + sc(j), sam->at_scale(j).shape());
    }

    const Tensor e5 = build_e5(sam, l5);
    tr.emplace_back("E5", e5.shape());

    Tensor next = e5;
    for (int j = 4; j >= 2; --j) {
        auto fused = fuse_stage(j, sam, pyramid.r[j - 1], next);
        tr.emplace_back("R" + sc(j) + "'", fused.out.shape());
        out.cca_gates.insert(out.cca_gates.begin(), fused.gate);
        next = decoder_[j - 1](ag::concat({fused.out, upsample_to(next, fused.out)}));
        tr.emplace_back("D" + sc(j), next.shape());
    }
    const Tensor d1 = decoder_[0](ag::concat({pyramid.r[0], upsample_to(next, pyramid.r[0])}));
    tr.emplace_back("D1", d1.shape());
    out.logits = head_(d1);
    tr.emplace_back("logits", out.logits.shape());

    if (cfg_.check_shapes) {
        const auto expected = expected_shapes(cfg_);
        if (expected.size() != tr.size()) throw InternalError("shape trace length differs from expected table");
        for (std::size_t i = 0; i < tr.size(); ++i) {
            if (expected[i] != tr[i]) {
                throw InternalError("shape check failed at " + tr[i].first + ": got " + ag::shape_str(tr[i].second) +
                                    ", expected " + expected[i].first + " " + ag::shape_str(expected[i].second));
            }
        }
    }
    return out;
}

}  // namespace fdnet::model
