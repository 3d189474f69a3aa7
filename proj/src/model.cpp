#include "clvae/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "clvae/rng.hpp"

namespace clvae {

namespace {

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

NdArray glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                       Rng& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    NdArray a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-limit, limit);
    return a;
}

}  // namespace

void ModelConfig::validate() const {
    if (latent_dim < 1) throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
    if (bottleneck_units < 1) {
        throw std::invalid_argument("ModelConfig: bottleneck_units must be >= 1");
    }
    if (convlstm_filters < 1) {
        throw std::invalid_argument("ModelConfig: convlstm_filters must be >= 1");
    }
    if (residual_channels.size() != 2) {
        throw std::invalid_argument("ModelConfig: residual_channels must list two block widths");
    }
    for (std::size_t c : residual_channels) {
        if (c < 1) throw std::invalid_argument("ModelConfig: residual channel width must be >= 1");
    }
    if (extra_residual_blocks > 2) {
        throw std::invalid_argument("ModelConfig: extra_residual_blocks must be in {0,1,2}");
    }
    if (patch_size != 8 && patch_size != 16 && patch_size != 32) {
        throw std::invalid_argument("ModelConfig: patch_size must be one of {8,16,32}");
    }
    if (!is_power_of_two(timesteps) || timesteps > 64) {
        throw std::invalid_argument("ModelConfig: timesteps must be a power of two <= 64");
    }
    if (!(bn_momentum > 0.0) || !(bn_momentum < 1.0)) {
        throw std::invalid_argument("ModelConfig: bn_momentum must lie in (0,1)");
    }
}

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["latent_dim"] = cfg.latent_dim;
    j["bottleneck_units"] = cfg.bottleneck_units;
    j["convlstm_filters"] = cfg.convlstm_filters;
    j["residual_channels"] = cfg.residual_channels;
    j["extra_residual_blocks"] = cfg.extra_residual_blocks;
    j["patch_size"] = cfg.patch_size;
    j["timesteps"] = cfg.timesteps;
    j["bn_momentum"] = cfg.bn_momentum;
    return j.dump();
}

ModelConfig config_from_json(const std::string& json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("model config: bad JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        if (j.contains("latent_dim")) cfg.latent_dim = j["latent_dim"].get<std::size_t>();
        if (j.contains("bottleneck_units")) {
            cfg.bottleneck_units = j["bottleneck_units"].get<std::size_t>();
        }
        if (j.contains("convlstm_filters")) {
            cfg.convlstm_filters = j["convlstm_filters"].get<std::size_t>();
        }
        if (j.contains("residual_channels")) {
            cfg.residual_channels = j["residual_channels"].get<std::vector<std::size_t>>();
        }
        if (j.contains("extra_residual_blocks")) {
            cfg.extra_residual_blocks = j["extra_residual_blocks"].get<std::size_t>();
        }
        if (j.contains("patch_size")) cfg.patch_size = j["patch_size"].get<std::size_t>();
        if (j.contains("timesteps")) cfg.timesteps = j["timesteps"].get<std::size_t>();
        if (j.contains("bn_momentum")) cfg.bn_momentum = j["bn_momentum"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("model config: bad field type: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::vector<LatentDistribution> split_latents(const NdArray& mu, const NdArray& logvar) {
    if (!mu.same_shape(logvar) || mu.rank() != 2) {
        throw std::invalid_argument("split_latents: expected matching [N,L] grids");
    }
    const std::size_t n = mu.dim(0), l = mu.dim(1);
    std::vector<LatentDistribution> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].mean.assign(mu.data() + i * l, mu.data() + (i + 1) * l);
        out[i].log_variance.assign(logvar.data() + i * l, logvar.data() + (i + 1) * l);
    }
    return out;
}

ad::Var sample_latent(const ad::Var& mu, const ad::Var& logvar, const NdArray& noise) {
    if (!mu->value.same_shape(logvar->value) || !mu->value.same_shape(noise)) {
        throw std::invalid_argument("sample_latent: mu, logvar and noise shapes must match");
    }
    auto sigma = ad::exp_op(ad::scale(logvar, 0.5));
    return ad::add(mu, ad::mul(sigma, ad::constant(noise)));
}

namespace {

struct DenseLayer {
    ad::Var w, b;
};

struct ConvLayer {
    ad::Var w, b;
    std::array<std::size_t, 3> stride{1, 1, 1};
};

struct BnLayer {
    ad::Var gamma, beta;
    NdArray running_mean, running_var;
    ad::BnPending pending;
};

struct ResBlock {
    ConvLayer c1, c2, c3;
    BnLayer b1, b2, b3;
    bool has_proj = false;
    ConvLayer proj;
};

DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
    return {ad::make_parameter(glorot_uniform({in, out}, in, out, rng)),
            ad::make_parameter(NdArray({out}, 0.0))};
}

ConvLayer make_conv(std::array<std::size_t, 3> kernel, std::size_t in, std::size_t out,
                    std::array<std::size_t, 3> stride, Rng& rng) {
    const std::size_t k = kernel[0] * kernel[1] * kernel[2];
    ConvLayer c;
    c.w = ad::make_parameter(
        glorot_uniform({kernel[0], kernel[1], kernel[2], in, out}, k * in, k * out, rng));
    c.b = ad::make_parameter(NdArray({out}, 0.0));
    c.stride = stride;
    return c;
}

// Transpose-conv weight layout is [kt,ky,kx,out,in].
ConvLayer make_tconv(std::array<std::size_t, 3> kernel, std::size_t in, std::size_t out,
                     std::array<std::size_t, 3> stride, Rng& rng) {
    const std::size_t k = kernel[0] * kernel[1] * kernel[2];
    ConvLayer c;
    c.w = ad::make_parameter(
        glorot_uniform({kernel[0], kernel[1], kernel[2], out, in}, k * in, k * out, rng));
    c.b = ad::make_parameter(NdArray({out}, 0.0));
    c.stride = stride;
    return c;
}

BnLayer make_bn(std::size_t channels) {
    BnLayer l;
    l.gamma = ad::make_parameter(NdArray({channels}, 1.0));
    l.beta = ad::make_parameter(NdArray({channels}, 0.0));
    l.running_mean = NdArray({channels}, 0.0);
    l.running_var = NdArray({channels}, 1.0);
    return l;
}

ResBlock make_res_block(std::array<std::size_t, 3> kernel, std::size_t in, std::size_t out,
                        std::array<std::size_t, 3> stride, Rng& rng) {
    ResBlock rb;
    rb.c1 = make_conv(kernel, in, out, stride, rng);
    rb.b1 = make_bn(out);
    rb.c2 = make_conv(kernel, out, out, {1, 1, 1}, rng);
    rb.b2 = make_bn(out);
    rb.c3 = make_conv(kernel, out, out, {1, 1, 1}, rng);
    rb.b3 = make_bn(out);
    rb.has_proj = in != out || stride != std::array<std::size_t, 3>{1, 1, 1};
    if (rb.has_proj) rb.proj = make_conv({1, 1, 1}, in, out, stride, rng);
    return rb;
}

ad::Var apply_conv(const ConvLayer& c, const ad::Var& x) {
    return ad::conv3d(x, c.w, c.b, c.stride[0], c.stride[1], c.stride[2]);
}

ad::Var apply_tconv(const ConvLayer& c, const ad::Var& x) {
    return ad::conv3d_transpose(x, c.w, c.b, c.stride[0], c.stride[1], c.stride[2]);
}

ad::Var apply_bn(BnLayer& l, const ad::Var& x, bool training) {
    return ad::batch_norm(x, l.gamma, l.beta, l.running_mean, l.running_var, &l.pending,
                          training);
}

ad::Var apply_res_block(ResBlock& rb, const ad::Var& x, bool training) {
    auto r = ad::relu(apply_bn(rb.b1, apply_conv(rb.c1, x), training));
    r = ad::relu(apply_bn(rb.b2, apply_conv(rb.c2, r), training));
    r = apply_bn(rb.b3, apply_conv(rb.c3, r), training);
    auto shortcut = rb.has_proj ? apply_conv(rb.proj, x) : x;
    return ad::relu(ad::add(r, shortcut));
}

void commit_bn(BnLayer&l, double momentum) {
    if (!l.pending.valid) return;
    for (std::size_t i = 0; i < l.running_mean.size(); ++i) {
        l.running_mean[i] = momentum * l.running_mean[i] + (1.0 - momentum) * l.pending.mean[i];
        l.running_var[i] = momentum * l.running_var[i] + (1.0 - momentum) * l.pending.var[i];
    }
    l.pending.valid = false;
}

}  // namespace

struct ClvaeModel::Impl {
    ModelConfig cfg;

    ConvLayer lstm_gates;  // fused i,f,g,o gate convolution on concat(x, h)
    ResBlock rb1, rb2;
    std::vector<ResBlock> extra;
    DenseLayer bottleneck, head_mu, head_logvar;
    DenseLayer expand;
    ConvLayer tconv1, tconv2, tconv3;
    BnLayer dbn1, dbn2, dbn3;
    ConvLayer outconv;

    std::size_t t1() const { return ceil_div(cfg.timesteps, 2); }
    std::size_t t2() const { return ceil_div(t1(), 2); }
    std::size_t seed_grid() const { return cfg.patch_size / 8; }
    // Temporal upsampling factors per decoder stage; their product with t2()
    // restores timesteps for every power-of-two T.
    std::size_t tstride2() const { return cfg.timesteps >= 4 ? 2 : 1; }
    std::size_t tstride3() const { return cfg.timesteps >= 2 ? 2 : 1; }

    explicit Impl(ModelConfig c, std::uint64_t seed) : cfg(std::move(c)) {
        cfg.validate();
        Rng rng(mix_seed(seed));
        const std::size_t f = cfg.convlstm_filters;
        const std::size_t rc0 = cfg.residual_channels[0];
        const std::size_t rc1 = cfg.residual_channels[1];

        lstm_gates = make_conv({1, 3, 3}, kInputChannels + f, 4 * f, {1, 1, 1}, rng);
        {  // forget-gate bias starts at one so early cell state persists
            double* b = lstm_gates.b->value.data();
            for (std::size_t i = f; i < 2 * f; ++i) b[i] = 1.0;
        }
        rb1 = make_res_block({3, 3, 3}, f, rc0, {2, 2, 2}, rng);
        rb2 = make_res_block({3, 3, 3}, rc0, rc1, {2, 2, 2}, rng);
        for (std::size_t i = 0; i < cfg.extra_residual_blocks; ++i) {
            extra.push_back(make_res_block({1, 3, 3}, rc1, rc1, {1, 1, 1}, rng));
        }
        bottleneck = make_dense(rc1, cfg.bottleneck_units, rng);
        head_mu = make_dense(cfg.bottleneck_units, cfg.latent_dim, rng);
        head_logvar = make_dense(cfg.bottleneck_units, cfg.latent_dim, rng);

        const std::size_t s = seed_grid();
        expand = make_dense(cfg.latent_dim, t2() * s * s * rc1, rng);
        tconv1 = make_tconv({3, 3, 3}, rc1, rc0, {1, 2, 2}, rng);
        dbn1 = make_bn(rc0);
        tconv2 = make_tconv({3, 3, 3}, rc0, rc0, {tstride2(), 2, 2}, rng);
        dbn2 = make_bn(rc0);
        tconv3 = make_tconv({3, 3, 3}, 2 * rc0, f, {tstride3(), 2, 2}, rng);
        dbn3 = make_bn(f);
        outconv = make_conv({1, 3, 3}, 2 * f, kInputChannels, {1, 1, 1}, rng);
    }

    ad::Var convlstm(const ad::Var& x) {
        const std::size_t n = x->value.dim(0);
        const std::size_t t = x->value.dim(1);
        const std::size_t p = x->value.dim(2);
        const std::size_t f = cfg.convlstm_filters;
        auto h = ad::constant(NdArray({n, 1, p, p, f}, 0.0));
        auto c = ad::constant(NdArray({n, 1, p, p, f}, 0.0));
        std::vector<ad::Var> seq;
        seq.reserve(t);
        for (std::size_t step = 0; step < t; ++step) {
            auto xt = ad::slice_timestep(x, step);
            auto gates = apply_conv(lstm_gates, ad::concat_channels(xt, h));
            auto gi = ad::sigmoid(ad::slice_channels(gates, 0, f));
            auto gf = ad::sigmoid(ad::slice_channels(gates, f, 2 * f));
            auto gc = ad::tanh_op(ad::slice_channels(gates, 2 * f, 3 * f));
            auto go = ad::sigmoid(ad::slice_channels(gates, 3 * f, 4 * f));
            c = ad::add(ad::mul(gf, c), ad::mul(gi, gc));
            h = ad::mul(go, ad::tanh_op(c));
            seq.push_back(h);
        }
        return ad::concat_timesteps(seq);
    }

    Encoded encode(const ad::Var& x, bool training) {
        const NdArray& xv = x->value;
        if (xv.rank() != 5 || xv.dim(1) != cfg.timesteps || xv.dim(2) != cfg.patch_size ||
            xv.dim(3) != cfg.patch_size || xv.dim(4) != kInputChannels) {
            throw std::invalid_argument(
                "encode: expected [N," + std::to_string(cfg.timesteps) + "," +
                std::to_string(cfg.patch_size) + "," + std::to_string(cfg.patch_size) + "," +
                std::to_string(kInputChannels) + "], got " + xv.shape_string());
        }
        Encoded enc;
        enc.skip1 = convlstm(x);
        enc.skip2 = apply_res_block(rb1, enc.skip1, training);
        auto deep = apply_res_block(rb2, enc.skip2, training);
        for (auto& block : extra) deep = apply_res_block(block, deep, training);
        auto pooled = ad::global_avg_pool(deep);
        auto bott = ad::relu(ad::dense(pooled, bottleneck.w, bottleneck.b));
        enc.mu = ad::dense(bott, head_mu.w, head_mu.b);
        enc.logvar = ad::dense(bott, head_logvar.w, head_logvar.b);
        return enc;
    }

    ad::Var decode(const ad::Var& z, const Encoded& enc, bool training) {
        if (!enc.skip1 || !enc.skip2) {
            throw std::invalid_argument("decode: missing encoder cross-connection features");
        }
        const NdArray& zv = z->value;
        if (zv.rank() != 2 || zv.dim(1) != cfg.latent_dim) {
            throw std::invalid_argument("decode: expected z of shape [N," +
                                        std::to_string(cfg.latent_dim) + "], got " +
                                        zv.shape_string());
        }
        if (zv.dim(0) != enc.skip1->value.dim(0)) {
            throw std::invalid_argument("decode: z batch differs from encoder features");
        }
        const std::size_t n = zv.dim(0);
        const std::size_t s = seed_grid();
        const std::size_t rc1 = cfg.residual_channels[1];
        auto g = ad::relu(ad::dense(z, expand.w, expand.b));
        auto grid = ad::reshape(g, {n, t2(), s, s, rc1});
        auto d1 = ad::relu(apply_bn(dbn1, apply_tconv(tconv1, grid), training));
        auto d2 = ad::relu(apply_bn(dbn2, apply_tconv(tconv2, d1), training));
        d2 = ad::concat_channels(d2, enc.skip2);
        auto d3 = ad::relu(apply_bn(dbn3, apply_tconv(tconv3, d2), training));
        d3 = ad::concat_channels(d3, enc.skip1);
        return ad::sigmoid(apply_conv(outconv, d3));
    }

    template <typename Fn>
    void for_each_named(Fn&& fn) {
        auto conv = [&](const std::string& name, ConvLayer& c) {
            fn(name + ".w", c.w, nullptr);
            fn(name + ".b", c.b, nullptr);
        };
        auto dense = [&](const std::string& name, DenseLayer& d) {
            fn(name + ".w", d.w, nullptr);
            fn(name + ".b", d.b, nullptr);
        };
        auto bn = [&](const std::string& name, BnLayer& l) {
            fn(name + ".gamma", l.gamma, nullptr);
            fn(name + ".beta", l.beta, nullptr);
            fn(name + ".running_mean", ad::Var(), &l.running_mean);
            fn(name + ".running_var", ad::Var(), &l.running_var);
        };
        auto res = [&](const std::string& name, ResBlock& rb) {
            conv(name + ".conv1", rb.c1);
            bn(name + ".bn1", rb.b1);
            conv(name + ".conv2", rb.c2);
            bn(name + ".bn2", rb.b2);
            conv(name + ".conv3", rb.c3);
            bn(name + ".bn3", rb.b3);
            if (rb.has_proj) conv(name + ".proj", rb.proj);
        };
        conv("convlstm", lstm_gates);
        res("rb1", rb1);
        res("rb2", rb2);
        for (std::size_t i = 0; i < extra.size(); ++i) {
            res("extra" + std::to_string(i + 1), extra[i]);
        }
        dense("bottleneck", bottleneck);
        dense("head_mu", head_mu);
        dense("head_logvar", head_logvar);
        dense("decoder.expand", expand);
        conv("decoder.tconv1", tconv1);
        bn("decoder.bn1", dbn1);
        conv("decoder.tconv2", tconv2);
        bn("decoder.bn2", dbn2);
        conv("decoder.tconv3", tconv3);
        bn("decoder.bn3", dbn3);
        conv("decoder.out", outconv);
    }

    void commit_all(double momentum) {
        commit_bn(rb1.b1, momentum);
        commit_bn(rb1.b2, momentum);
        commit_bn(rb1.b3, momentum);
        commit_bn(rb2.b1, momentum);
        commit_bn(rb2.b2, momentum);
        commit_bn(rb2.b3, momentum);
        for (auto& e : extra) {
            commit_bn(e.b1, momentum);
            commit_bn(e.b2, momentum);
            commit_bn(e.b3, momentum);
        }
        commit_bn(dbn1, momentum);
        commit_bn(dbn2, momentum);
        commit_bn(dbn3, momentum);
    }
};

ClvaeModel::ClvaeModel(ModelConfig cfg, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(std::move(cfg), seed)) {}
ClvaeModel::~ClvaeModel() = default;
ClvaeModel::ClvaeModel(ClvaeModel&&) noexcept = default;
ClvaeModel& ClvaeModel::operator=(ClvaeModel&&) noexcept = default;

const ModelConfig& ClvaeModel::config() const { return impl_->cfg; }

ClvaeModel::Encoded ClvaeModel::encode(const ad::Var& x, bool training) {
    return impl_->encode(x, training);
}

ClvaeModel::Encoded ClvaeModel::encode(const NdArray& x, bool training) {
    if (training) return impl_->encode(ad::constant(x), true);
    ad::NoGradGuard off;
    return impl_->encode(ad::constant(x), false);
}

ad::Var ClvaeModel::decode(const ad::Var& z, const Encoded& enc, bool training) {
    return impl_->decode(z, enc, training);
}

std::vector<std::pair<std::string, ad::Var>> ClvaeModel::named_parameters() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    impl_->for_each_named([&](const std::string& name, const ad::Var& v, NdArray*) {
        if (v) out.emplace_back(name, v);
    });
    return out;
}

std::vector<std::pair<std::string, NdArray*>> ClvaeModel::named_buffers() {
    std::vector<std::pair<std::string, NdArray*>> out;
    impl_->for_each_named([&](const std::string& name, const ad::Var&, NdArray* buf) {
        if (buf) out.emplace_back(name, buf);
    });
    return out;
}

std::size_t ClvaeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : named_parameters()) n += v->value.size();
    return n;
}

std::size_t ClvaeModel::total_parameter_count() const {
    std::size_t n = parameter_count();
    impl_->for_each_named([&](const std::string&, const ad::Var&, NdArray* buf) {
        if (buf) n += buf->size();
    });
    return n;
}

void ClvaeModel::zero_grad() {
    for (auto& [name, v] : named_parameters()) v->zero_grad();
}

void ClvaeModel::commit_bn_updates() { impl_->commit_all(impl_->cfg.bn_momentum); }

namespace {

constexpr char kCkptMagic[4] = {'C', 'L', 'V', 'W'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
    if (pos + 4 > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
    if (pos + 8 > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
}

void append_tensor(std::string& buf, const std::string& name, const NdArray& t) {
    put_u32(buf, std::uint32_t(name.size()));
    buf.append(name);
    put_u32(buf, std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) put_u64(buf, d);
    const char* bytes = reinterpret_cast<const char*>(t.data());
    buf.append(bytes, t.size() * sizeof(double));
}

}  // namespace

void ClvaeModel::save(const std::string& path) const {
    std::string buf;
    buf.append(kCkptMagic, 4);
    put_u32(buf, kCkptVersion);
    const std::string cfg_json = config_to_json(impl_->cfg);
    put_u32(buf, std::uint32_t(cfg_json.size()));
    buf.append(cfg_json);

    std::vector<std::pair<std::string, const NdArray*>> tensors;
    impl_->for_each_named([&](const std::string& name, const ad::Var& v, NdArray* b) {
        tensors.emplace_back(name, v ? &v->value : b);
    });
    put_u32(buf, std::uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) append_tensor(buf, name, *t);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ClvaeModel ClvaeModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (buf.size() < 8 || std::memcmp(buf.data(), kCkptMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: " + path + " is not a model checkpoint");
    }
    pos = 4;
    const std::uint32_t version = get_u32(buf, pos);
    if (version != kCkptVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t json_len = get_u32(buf, pos);
    if (pos + json_len > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    const std::string cfg_json = buf.substr(pos, json_len);
    pos += json_len;
    ClvaeModel model(config_from_json(cfg_json), 0);

    // Map expected tensors by name, then fill each from the file exactly once.
    std::vector<std::pair<std::string, NdArray*>> expected;
    model.impl_->for_each_named([&](const std::string& name, const ad::Var& v, NdArray* b) {
        expected.emplace_back(name, v ? &v->value : b);
    });
    const std::uint32_t count = get_u32(buf, pos);
    if (count != expected.size()) {
        throw std::runtime_error("checkpoint: tensor count " + std::to_string(count) +
                                 " does not match config (expected " +
                                 std::to_string(expected.size()) + ")");
    }
    std::vector<bool> seen(expected.size(), false);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(buf, pos);
        if (pos + name_len > buf.size()) throw std::runtime_error("checkpoint: truncated file");
        const std::string name = buf.substr(pos, name_len);
        pos += name_len;
        const std::uint32_t rank = get_u32(buf, pos);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = std::size_t(get_u64(buf, pos));
        const std::size_t n = shape_product(shape);
        if (pos + n * sizeof(double) > buf.size()) {
            throw std::runtime_error("checkpoint: truncated file");
        }
        std::size_t idx = expected.size();
        for (std::size_t k = 0; k < expected.size(); ++k) {
            if (expected[k].first == name) {
                idx = k;
                break;
            }
        }
        if (idx == expected.size()) {
            throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
        }
        if (seen[idx]) throw std::runtime_error("checkpoint: duplicate tensor '" + name + "'");
        seen[idx] = true;
        NdArray* dst = expected[idx].second;
        if (dst->shape() != shape) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                     NdArray::shape_string(shape) +
                                     " but the config requires " + dst->shape_string());
        }
        std::memcpy(dst->data(), buf.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
    }
    for (std::size_t k = 0; k < expected.size(); ++k) {
        if (!seen[k]) {
            throw std::runtime_error("checkpoint: missing tensor '" + expected[k].first + "'");
        }
    }
    return model;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    return ClvaeModel(cfg, 0).parameter_count();
}

}  // namespace clvae
