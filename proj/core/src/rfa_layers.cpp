#include "rfa/rfa_layers.hpp"

#include <cmath>

namespace rfa {

static Tensor kaiming_normal(Shape shape, int64_t fan_in, SeededRng& rng) {
    Tensor t = randn(std::move(shape), rng);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v *= std;
    return t;
}

static const Tensor& find_section(const std::map<std::string, Tensor>& sections, const std::string& name) {
    auto it = sections.find(name);
    check(it != sections.end(), "checkpoint is missing section " + name);
    return it->second;
}

static void load_into(Tensor& dst, const std::map<std::string, Tensor>& sections, const std::string& name) {
    const Tensor& src = find_section(sections, name);
    check(src.shape == dst.shape, "checkpoint section " + name + " has shape " + shape_str(src.shape) +
                                      ", expected " + shape_str(dst.shape));
    dst = src;
}

// ---------------------------------------------------------------------------
// building blocks

Conv Conv::make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, int64_t padding,
                int64_t groups, bool with_bias, SeededRng& rng, const std::string& name) {
    check(c_in % groups == 0 && c_out % groups == 0, "conv groups must divide channel counts");
    Conv conv;
    const int64_t fan_in = (c_in / groups) * k * k;
    conv.weight = Param(kaiming_normal({c_out, c_in / groups, k, k}, fan_in, rng), name + ".weight");
    if (with_bias) conv.bias = Param(zeros({c_out}), name + ".bias");
    conv.stride = stride;
    conv.padding = padding;
    conv.groups = groups;
    return conv;
}

int32_t Conv::forward(Tape& t, int32_t x) {
    const int32_t w = t.param(weight);
    const int32_t b = bias ? t.param(*bias) : -1;
    return t.conv2d(x, w, b, stride, padding, groups);
}

ConvParams Conv::as_params() const {
    ConvParams p;
    p.weight = weight.value;
    if (bias) p.bias = bias->value;
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return p;
}

void Conv::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
}

int64_t Conv::param_count() const {
    return weight.value.numel() + (bias ? bias->value.numel() : 0);
}

int64_t Conv::macs(int64_t h, int64_t w) const {
    const int64_t k = kernel();
    const int64_t oh = conv_out_extent(h, k, stride, padding);
    const int64_t ow = conv_out_extent(w, k, stride, padding);
    return out_channels() * oh * ow * weight.value.extent(1) * k * k;
}

void Conv::named_tensors(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".weight", weight.value);
    if (bias) out.emplace_back(prefix + ".bias", bias->value);
}

void Conv::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    load_into(weight.value, sections, prefix + ".weight");
    if (bias) load_into(bias->value, sections, prefix + ".bias");
}

BatchNorm BatchNorm::make(int64_t channels, const std::string& name) {
    BatchNorm bn;
    bn.gamma = Param(full({channels}, 1.0), name + ".gamma");
    bn.beta = Param(zeros({channels}), name + ".beta");
    bn.running_mean = zeros({channels});
    bn.running_var = full({channels}, 1.0);
    return bn;
}

int32_t BatchNorm::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    const int32_t g = t.param(gamma);
    const int32_t b = t.param(beta);
    return t.batchnorm(x, g, b, running_mean, running_var, eps, momentum, opts.train,
                       opts.train && opts.track_running);
}

BatchNormState BatchNorm::as_state(BatchNormState::Mode mode) const {
    BatchNormState s;
    s.gamma = gamma.value;
    s.beta = beta.value;
    s.running_mean = running_mean;
    s.running_var = running_var;
    s.eps = eps;
    s.momentum = momentum;
    s.mode = mode;
    return s;
}

void BatchNorm::collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

void BatchNorm::named_tensors(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".gamma", gamma.value);
    out.emplace_back(prefix + ".beta", beta.value);
    out.emplace_back(prefix + ".running_mean", running_mean);
    out.emplace_back(prefix + ".running_var", running_var);
}

void BatchNorm::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    load_into(gamma.value, sections, prefix + ".gamma");
    load_into(beta.value, sections, prefix + ".beta");
    load_into(running_mean, sections, prefix + ".running_mean");
    load_into(running_var, sections, prefix + ".running_var");
}

Dense Dense::make(int64_t f_in, int64_t f_out, SeededRng& rng, const std::string& name) {
    // uniform fan-in init, the convention of the reference classifiers;
    // keeps a fresh K-class head's first loss near ln(K)
    Dense d;
    Tensor w = rand_uniform({f_out, f_in}, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(f_in));
    for (double& v : w.data) v = (2.0 * v - 1.0) * bound;
    d.weight = Param(std::move(w), name + ".weight");
    d.bias = Param(zeros({f_out}), name + ".bias");
    return d;
}

int32_t Dense::forward(Tape& t, int32_t x) {
    return t.linear(x, t.param(weight), t.param(bias));
}

void Dense::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

void Dense::named_tensors(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".weight", weight.value);
    out.emplace_back(prefix + ".bias", bias.value);
}

void Dense::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    load_into(weight.value, sections, prefix + ".weight");
    load_into(bias.value, sections, prefix + ".bias");
}

// ---------------------------------------------------------------------------
// RFAConv

RfaConvLayer RfaConvLayer::make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng) {
    check(k >= 1 && stride >= 1, "RfaConvLayer needs k >= 1 and stride >= 1");
    RfaConvLayer l;
    l.k = k;
    l.stride = stride;
    l.c_in = c_in;
    l.c_out = c_out;
    l.weight_branch = Conv::make(c_in, c_in * k * k, 1, 1, 0, c_in, false, rng, "weight_branch");
    l.feature_branch = Conv::make(c_in, c_in * k * k, k, stride, k / 2, c_in, false, rng, "feature_branch");
    l.feature_bn = BatchNorm::make(c_in * k * k, "feature_bn");
    l.mix = Conv::make(c_in, c_out, k, k, 0, 1, true, rng, "mix");
    return l;
}

int32_t RfaConvLayer::attention(Tape& t, int32_t x) {
    const int32_t pooled = t.avgpool2d(x, k, stride, k / 2);
    const int32_t logits = weight_branch.forward(t, pooled);
    return t.softmax_taps(logits, c_in);
}

int32_t RfaConvLayer::features(Tape& t, int32_t x, const ForwardOpts& opts) {
    if (feature_override == Feature::selector) return t.unfold_rf(x, k, stride, k / 2);
    const int32_t conv = feature_branch.forward(t, x);
    const int32_t norm = feature_bn.forward(t, conv, opts);
    return t.relu(norm);
}

int32_t RfaConvLayer::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    check(t.value(x).c() == c_in, label + ": input has " + std::to_string(t.value(x).c()) +
                                      " channels, layer expects " + std::to_string(c_in));
    const int32_t feat = features(t, x, opts);
    int32_t attn;
    if (attention_override == Attention::uniform) {
        attn = t.leaf(full(t.value(feat).shape, 1.0 / static_cast<double>(k * k)));
    } else {
        attn = attention(t, x);
    }
    const Tensor& av = t.value(attn);
    const Tensor& fv = t.value(feat);
    check(av.shape == fv.shape, label + ": attention grid " + shape_str(av.shape) +
                                    " does not match feature grid " + shape_str(fv.shape));
    const int32_t weighted = t.mul(attn, feat);
    const int32_t rearranged = t.rf_rearrange(weighted, c_in, k);
    const int32_t out = mix.forward(t, rearranged);
    t.set_label(out, label);
    return out;
}

void RfaConvLayer::collect(std::vector<Param*>& out) {
    weight_branch.collect(out);
    feature_branch.collect(out);
    feature_bn.collect(out);
    mix.collect(out);
}

int64_t RfaConvLayer::param_count() const {
    return weight_branch.param_count() + feature_branch.param_count() + feature_bn.param_count() +
           mix.param_count();
}

int64_t RfaConvLayer::macs(int64_t h, int64_t w) const {
    const int64_t oh = conv_out_extent(h, k, stride, k / 2);
    const int64_t ow = conv_out_extent(w, k, stride, k / 2);
    // pooling is free under the bookkeeping rule; both branch convs run on
    // the H' x W' grid, the mix conv on the k-fold enlarged map
    return weight_branch.macs(oh, ow) + feature_branch.macs(h, w) + mix.macs(oh * k, ow * k);
}

void RfaConvLayer::named_tensors(const std::string& prefix, NamedTensors& out) const {
    weight_branch.named_tensors(prefix + ".weight_branch", out);
    feature_branch.named_tensors(prefix + ".feature_branch", out);
    feature_bn.named_tensors(prefix + ".feature_bn", out);
    mix.named_tensors(prefix + ".mix", out);
}

void RfaConvLayer::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    weight_branch.load_tensors(prefix + ".weight_branch", sections);
    feature_branch.load_tensors(prefix + ".feature_branch", sections);
    feature_bn.load_tensors(prefix + ".feature_bn", sections);
    mix.load_tensors(prefix + ".mix", sections);
}

// ---------------------------------------------------------------------------
// RFCBAMConv

RfcbamConvLayer RfcbamConvLayer::make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng) {
    RfcbamConvLayer l;
    l.k = k;
    l.stride = stride;
    l.c_in = c_in;
    l.c_out = c_out;
    l.feature_branch = Conv::make(c_in, c_in * k * k, k, stride, k / 2, c_in, false, rng, "feature_branch");
    l.feature_bn = BatchNorm::make(c_in * k * k, "feature_bn");
    const int64_t hidden = std::max<int64_t>(4, c_in / 16);
    l.se_reduce = Dense::make(c_in, hidden, rng, "se_reduce");
    l.se_expand = Dense::make(hidden, c_in, rng, "se_expand");
    l.spatial = Conv::make(2, 1, 3, 1, 1, 1, false, rng, "spatial");
    l.mix = Conv::make(c_in, c_out, k, k, 0, 1, true, rng, "mix");
    return l;
}

int32_t RfcbamConvLayer::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    check(t.value(x).c() == c_in, label + ": input has " + std::to_string(t.value(x).c()) +
                                      " channels, layer expects " + std::to_string(c_in));
    const int32_t feat = t.relu(feature_bn.forward(t, feature_branch.forward(t, x), opts));
    const int32_t rearranged = t.rf_rearrange(feat, c_in, k);

    // channel gate: squeeze-and-excitation over the raw input by default
    const int32_t se_src = se_from_rf_feature ? rearranged : x;
    const int32_t squeezed = t.global_avgpool(se_src);
    const int32_t flat = t.reshape_to(squeezed, {t.value(squeezed).n(), c_in});
    const int32_t hidden = t.relu(se_reduce.forward(t, flat));
    const int32_t expanded = se_expand.forward(t, hidden);
    const int32_t channel_gate =
        t.reshape_to(t.sigmoid(expanded), {t.value(expanded).extent(0), c_in, 1, 1});

    // spatial gate over the rearranged feature, shared across channels
    const int32_t mm = t.channel_meanmax(rearranged);
    const int32_t spatial_gate = t.sigmoid(spatial.forward(t, mm));

    // both gates applied in one elementwise pass
    const int32_t weighted = t.mul(t.mul(rearranged, channel_gate), spatial_gate);
    const int32_t out = mix.forward(t, weighted);
    t.set_label(out, label);
    return out;
}

void RfcbamConvLayer::collect(std::vector<Param*>& out) {
    feature_branch.collect(out);
    feature_bn.collect(out);
    se_reduce.collect(out);
    se_expand.collect(out);
    spatial.collect(out);
    mix.collect(out);
}

int64_t RfcbamConvLayer::param_count() const {
    return feature_branch.param_count() + feature_bn.param_count() + se_reduce.param_count() +
           se_expand.param_count() + spatial.param_count() + mix.param_count();
}

int64_t RfcbamConvLayer::macs(int64_t h, int64_t w) const {
    const int64_t oh = conv_out_extent(h, k, stride, k / 2);
    const int64_t ow = conv_out_extent(w, k, stride, k / 2);
    return feature_branch.macs(h, w) + se_reduce.macs() + se_expand.macs() +
           spatial.macs(oh * k, ow * k) + mix.macs(oh * k, ow * k);
}

void RfcbamConvLayer::named_tensors(const std::string& prefix, NamedTensors& out) const {
    feature_branch.named_tensors(prefix + ".feature_branch", out);
    feature_bn.named_tensors(prefix + ".feature_bn", out);
    se_reduce.named_tensors(prefix + ".se_reduce", out);
    se_expand.named_tensors(prefix + ".se_expand", out);
    spatial.named_tensors(prefix + ".spatial", out);
    mix.named_tensors(prefix + ".mix", out);
}

void RfcbamConvLayer::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    feature_branch.load_tensors(prefix + ".feature_branch", sections);
    feature_bn.load_tensors(prefix + ".feature_bn", sections);
    se_reduce.load_tensors(prefix + ".se_reduce", sections);
    se_expand.load_tensors(prefix + ".se_expand", sections);
    spatial.load_tensors(prefix + ".spatial", sections);
    mix.load_tensors(prefix + ".mix", sections);
}

// ---------------------------------------------------------------------------
// RFCAConv

RfcaConvLayer RfcaConvLayer::make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng) {
    RfcaConvLayer l;
    l.k = k;
    l.stride = stride;
    l.c_in = c_in;
    l.c_out = c_out;
    l.mid = std::max<int64_t>(8, c_in / 32);
    l.feature_branch = Conv::make(c_in, c_in * k * k, k, stride, k / 2, c_in, false, rng, "feature_branch");
    l.feature_bn = BatchNorm::make(c_in * k * k, "feature_bn");
    l.reduce_conv = Conv::make(c_in, l.mid, 1, 1, 0, 1, false, rng, "reduce_conv");
    l.reduce_bn = BatchNorm::make(l.mid, "reduce_bn");
    l.attn_h = Conv::make(l.mid, c_in, 1, 1, 0, 1, false, rng, "attn_h");
    l.attn_w = Conv::make(l.mid, c_in, 1, 1, 0, 1, false, rng, "attn_w");
    l.mix = Conv::make(c_in, c_out, k, k, 0, 1, true, rng, "mix");
    return l;
}

int32_t RfcaConvLayer::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    check(t.value(x).c() == c_in, label + ": input has " + std::to_string(t.value(x).c()) +
                                      " channels, layer expects " + std::to_string(c_in));
    const int32_t feat = t.relu(feature_bn.forward(t, feature_branch.forward(t, x), opts));
    const int32_t rearranged = t.rf_rearrange(feat, c_in, k);
    const int64_t eh = t.value(rearranged).h(), ew = t.value(rearranged).w();

    const int32_t ph = t.pool_h(rearranged);                          // (N,C,eh,1)
    const int32_t pw = t.permute_axes(t.pool_w(rearranged), {0, 1, 3, 2}); // (N,C,ew,1)
    const int32_t joint = t.concat(ph, pw, 2);                        // (N,C,eh+ew,1)
    const int32_t reduced = t.hardswish(reduce_bn.forward(t, reduce_conv.forward(t, joint), opts));

    const int32_t th = t.narrow(reduced, 2, 0, eh);
    const int32_t tw = t.permute_axes(t.narrow(reduced, 2, eh, ew), {0, 1, 3, 2});
    const int32_t gate_h = t.sigmoid(attn_h.forward(t, th)); // (N,C,eh,1)
    const int32_t gate_w = t.sigmoid(attn_w.forward(t, tw)); // (N,C,1,ew)

    const int32_t weighted = t.mul(t.mul(rearranged, gate_h), gate_w);
    const int32_t out = mix.forward(t, weighted);
    t.set_label(out, label);
    return out;
}

void RfcaConvLayer::collect(std::vector<Param*>& out) {
    feature_branch.collect(out);
    feature_bn.collect(out);
    reduce_conv.collect(out);
    reduce_bn.collect(out);
    attn_h.collect(out);
    attn_w.collect(out);
    mix.collect(out);
}

int64_t RfcaConvLayer::param_count() const {
    return feature_branch.param_count() + feature_bn.param_count() + reduce_conv.param_count() +
           reduce_bn.param_count() + attn_h.param_count() + attn_w.param_count() + mix.param_count();
}

int64_t RfcaConvLayer::macs(int64_t h, int64_t w) const {
    const int64_t oh = conv_out_extent(h, k, stride, k / 2);
    const int64_t ow = conv_out_extent(w, k, stride, k / 2);
    const int64_t eh = oh * k, ew = ow * k;
    return feature_branch.macs(h, w) + reduce_conv.macs(eh + ew, 1) + attn_h.macs(eh, 1) +
           attn_w.macs(ew, 1) + mix.macs(eh, ew);
}

void RfcaConvLayer::named_tensors(const std::string& prefix, NamedTensors& out) const {
    feature_branch.named_tensors(prefix + ".feature_branch", out);
    feature_bn.named_tensors(prefix + ".feature_bn", out);
    reduce_conv.named_tensors(prefix + ".reduce_conv", out);
    reduce_bn.named_tensors(prefix + ".reduce_bn", out);
    attn_h.named_tensors(prefix + ".attn_h", out);
    attn_w.named_tensors(prefix + ".attn_w", out);
    mix.named_tensors(prefix + ".mix", out);
}

void RfcaConvLayer::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    feature_branch.load_tensors(prefix + ".feature_branch", sections);
    feature_bn.load_tensors(prefix + ".feature_bn", sections);
    reduce_conv.load_tensors(prefix + ".reduce_conv", sections);
    reduce_bn.load_tensors(prefix + ".reduce_bn", sections);
    attn_h.load_tensors(prefix + ".attn_h", sections);
    attn_w.load_tensors(prefix + ".attn_w", sections);
    mix.load_tensors(prefix + ".mix", sections);
}

// ---------------------------------------------------------------------------
// naive pixel-level spatial attention

NaiveSpatialAttnConv NaiveSpatialAttnConv::make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride,
                                                SeededRng& rng) {
    NaiveSpatialAttnConv l;
    l.k = k;
    l.stride = stride;
    l.c_in = c_in;
    l.c_out = c_out;
    l.attention = Conv::make(2, 1, 7, 1, 3, 1, false, rng, "attention");
    l.conv = Conv::make(c_in, c_out, k, stride, k / 2, 1, false, rng, "conv");
    return l;
}

int32_t NaiveSpatialAttnConv::attention_map(Tape& t, int32_t x) {
    return t.sigmoid(attention.forward(t, t.channel_meanmax(x)));
}

int32_t NaiveSpatialAttnConv::forward(Tape& t, int32_t x, const ForwardOpts&) {
    check(t.value(x).c() == c_in, label + ": input has " + std::to_string(t.value(x).c()) +
                                      " channels, layer expects " + std::to_string(c_in));
    const int32_t gate = attention_map(t, x);
    const int32_t weighted = t.mul(x, gate);
    const int32_t out = conv.forward(t, weighted);
    t.set_label(out, label);
    return out;
}

void NaiveSpatialAttnConv::collect(std::vector<Param*>& out) {
    attention.collect(out);
    conv.collect(out);
}

int64_t NaiveSpatialAttnConv::param_count() const {
    return attention.param_count() + conv.param_count();
}

int64_t NaiveSpatialAttnConv::macs(int64_t h, int64_t w) const {
    return attention.macs(h, w) + conv.macs(h, w);
}

void NaiveSpatialAttnConv::named_tensors(const std::string& prefix, NamedTensors& out) const {
    attention.named_tensors(prefix + ".attention", out);
    conv.named_tensors(prefix + ".conv", out);
}

void NaiveSpatialAttnConv::load_tensors(const std::string& prefix,
                                        const std::map<std::string, Tensor>& sections) {
    attention.load_tensors(prefix + ".attention", sections);
    conv.load_tensors(prefix + ".conv", sections);
}

// ---------------------------------------------------------------------------
// weight-sharing audit

AuditReport shared_weight_audit(const Tensor& attention_map, int64_t k) {
    check(attention_map.rank() == 4 && attention_map.c() == 1,
          "shared_weight_audit expects an (N,1,H,W) map, got " + shape_str(attention_map.shape));
    const int64_t n = attention_map.n(), h = attention_map.h(), w = attention_map.w();
    check(k >= 1 && k <= h && k <= w, "audit window k=" + std::to_string(k) + " does not fit an " +
                                          std::to_string(h) + "x" + std::to_string(w) + " map");
    const int64_t oh = h - k + 1, ow = w - k + 1;

    AuditReport report;
    report.windows = n * oh * ow;
    report.dof_pixel = h * w;
    report.dof_rf_per_channel = k * k * oh * ow;

    const RfFeature f = unfold(attention_map, k, 1, 0);
    for (int64_t img = 0; img < n; ++img)
        for (int64_t ph = 0; ph < h; ++ph)
            for (int64_t pw = 0; pw < w; ++pw) {
                // windows whose top-left corner (wh,ww) covers pixel (ph,pw)
                const int64_t wh0 = std::max<int64_t>(0, ph - k + 1), wh1 = std::min(oh - 1, ph);
                const int64_t ww0 = std::max<int64_t>(0, pw - k + 1), ww1 = std::min(ow - 1, pw);
                const int64_t covering = (wh1 - wh0 + 1) * (ww1 - ww0 + 1);
                report.overlapping_pairs += covering * (covering - 1) / 2;
                const double expected = attention_map.at(img, 0, ph, pw);
                for (int64_t wh = wh0; wh <= wh1; ++wh)
                    for (int64_t ww = ww0; ww <= ww1; ++ww) {
                        const int64_t j = (ph - wh) * k + (pw - ww);
                        if (f.at(img, 0, j, wh, ww) != expected) ++report.violations;
                    }
            }
    return report;
}

} // namespace rfa
