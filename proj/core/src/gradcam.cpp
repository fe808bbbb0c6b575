#include "rfa/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rfa {

GradCamResult grad_cam(Network& net, const Tensor& image, int64_t class_index) {
    check(image.rank() == 4 && image.n() == 1,
          "grad_cam expects a single (1,C,H,W) image, got " + shape_str(image.shape));
    check(class_index >= 0 && class_index < net.spec.num_classes,
          "class index " + std::to_string(class_index) + " out of range for " +
              std::to_string(net.spec.num_classes) + " classes");

    Tape tape;
    const int32_t x = tape.leaf(image);
    const ForwardOpts opts{.train = false, .track_running = false};
    const Network::Trace trace = net.forward(tape, x, opts);

    Tensor seed = zeros_like(tape.value(trace.logits));
    seed.at2(0, class_index) = 1.0;
    tape.backward(trace.logits, seed);

    const Tensor& act = tape.value(trace.last_stage); // (1,C,h,w)
    const Tensor& act_grad = tape.grad(trace.last_stage);
    const int64_t c = act.c(), h = act.h(), w = act.w();

    GradCamResult result;
    result.raw = zeros({1, 1, h, w});
    const double inv_hw = 1.0 / static_cast<double>(h * w);
    for (int64_t ch = 0; ch < c; ++ch) {
        double alpha = 0.0;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) alpha += act_grad.at(0, ch, i, j);
        alpha *= inv_hw;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) result.raw.at(0, 0, i, j) += alpha * act.at(0, ch, i, j);
    }
    for (double& v : result.raw.data) v = v > 0.0 ? v : 0.0;

    // min-max normalize; degenerate (flat) maps collapse to zero
    double lo = result.raw.data[0], hi = result.raw.data[0];
    for (double v : result.raw.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor norm = zeros_like(result.raw);
    if (hi - lo > 1e-12)
        for (size_t i = 0; i < norm.data.size(); ++i) norm.data[i] = (result.raw.data[i] - lo) / (hi - lo);

    // nearest-neighbor upsample to the input size
    const int64_t out_h = image.h(), out_w = image.w();
    result.heat = zeros({1, 1, out_h, out_w});
    for (int64_t i = 0; i < out_h; ++i)
        for (int64_t j = 0; j < out_w; ++j)
            result.heat.at(0, 0, i, j) = norm.at(0, 0, i * h / out_h, j * w / out_w);
    return result;
}

static std::pair<int64_t, int64_t> map_extents(const Tensor& map01) {
    if (map01.rank() == 2) return {map01.extent(0), map01.extent(1)};
    check(map01.rank() == 4 && map01.n() == 1 && map01.c() == 1,
          "expected an (H,W) or (1,1,H,W) map, got " + shape_str(map01.shape));
    return {map01.h(), map01.w()};
}

void write_pgm(const std::string& path, const Tensor& map01) {
    const auto [h, w] = map_extents(map01);
    std::ofstream os(path, std::ios::binary);
    check(os.is_open(), "cannot open " + path + " for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    for (double v : map01.data) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        const unsigned char b = static_cast<unsigned char>(std::lround(clamped * 255.0));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    check(static_cast<bool>(os), "PGM write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.is_open(), "cannot open " + path);
    std::string magic;
    is >> magic;
    check(magic == "P5", path + ": not a binary PGM (magic '" + magic + "')");
    int64_t w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    check(w >= 1 && h >= 1 && maxval == 255, path + ": unsupported PGM header");
    is.get(); // single whitespace after maxval
    Tensor out = zeros({1, 1, h, w});
    for (double& v : out.data) {
        unsigned char b;
        is.read(reinterpret_cast<char*>(&b), 1);
        check(static_cast<bool>(is), path + ": truncated PGM payload");
        v = static_cast<double>(b) / 255.0;
    }
    return out;
}

} // namespace rfa
