#include "fpan/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace fpan {

namespace {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
        buf_.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> buf, std::string path)
        : buf_(std::move(buf)), path_(std::move(path)) {}

    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v =
            static_cast<std::uint16_t>(buf_[pos_]) |
            static_cast<std::uint16_t>(static_cast<std::uint16_t>(buf_[pos_ + 1]) << 8);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] std::size_t offset() const { return pos_; }
    [[nodiscard]] bool at_end() const { return pos_ == buf_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError("load_checkpoint: " + what + " at byte offset " +
                      std::to_string(pos_) + " in '" + path_ + "'");
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) {
            throw IoError("load_checkpoint: truncated file at byte offset " +
                          std::to_string(pos_) + " in '" + path_ + "' (need " +
                          std::to_string(n) + " more bytes)");
        }
    }
    std::vector<std::uint8_t> buf_;
    std::string path_;
    std::size_t pos_{0};
};

constexpr char kMagic[4] = {'F', 'P', 'A', 'N'};

std::uint8_t attention_code(Attention a) {
    switch (a) {
        case Attention::none: return 0;
        case Attention::gc: return 1;
        case Attention::pnlb: return 2;
    }
    return 0;
}

Attention attention_from_code(std::uint8_t code, ByteReader& reader) {
    switch (code) {
        case 0: return Attention::none;
        case 1: return Attention::gc;
        case 2: return Attention::pnlb;
        default: reader.fail("invalid attention code " + std::to_string(code));
    }
}

}  // namespace

void save_checkpoint(const FpanModel<float>& model, const std::string& path) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);

    const ModelConfig& cfg = model.config;
    w.u32(static_cast<std::uint32_t>(cfg.scale));
    w.u32(static_cast<std::uint32_t>(cfg.channels));
    w.u32(static_cast<std::uint32_t>(cfg.num_blocks));
    w.u32(static_cast<std::uint32_t>(cfg.stage_depth));
    w.u32(static_cast<std::uint32_t>(cfg.reduction));
    w.u8(static_cast<std::uint8_t>(cfg.pyramid_scales.size()));
    for (int s : cfg.pyramid_scales) w.u32(static_cast<std::uint32_t>(s));
    w.u8(cfg.ablation.feedforward_skips ? 1 : 0);
    w.u8(cfg.ablation.feedback_skips ? 1 : 0);
    w.u8(attention_code(cfg.ablation.attention));

    const auto& entries = model.params.entries();
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) throw UsageError("save_checkpoint: name too long");
        w.u16(static_cast<std::uint16_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        const Shape4 s = e.tensor.shape();
        w.u8(4);
        w.u32(static_cast<std::uint32_t>(s.n));
        w.u32(static_cast<std::uint32_t>(s.c));
        w.u32(static_cast<std::uint32_t>(s.h));
        w.u32(static_cast<std::uint32_t>(s.w));
        for (float v : e.tensor.data()) w.f32(v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(w.buffer().data()),
              static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

FpanModel<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    ByteReader r(std::move(buf), path);

    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw IoError("load_checkpoint: bad magic at byte offset 0 in '" + path + "'");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError("load_checkpoint: unsupported version " + std::to_string(version) +
                      " at byte offset 4 in '" + path + "'");
    }

    ModelConfig cfg;
    cfg.scale = static_cast<int>(r.u32());
    cfg.channels = static_cast<int>(r.u32());
    cfg.num_blocks = static_cast<int>(r.u32());
    cfg.stage_depth = static_cast<int>(r.u32());
    cfg.reduction = static_cast<int>(r.u32());
    const std::uint8_t n_scales = r.u8();
    cfg.pyramid_scales.clear();
    for (int i = 0; i < n_scales; ++i) cfg.pyramid_scales.push_back(static_cast<int>(r.u32()));
    cfg.ablation.feedforward_skips = r.u8() != 0;
    cfg.ablation.feedback_skips = r.u8() != 0;
    cfg.ablation.attention = attention_from_code(r.u8(), r);

    FpanModel<float> model(cfg, /*seed=*/0);

    const std::uint32_t tensor_count = r.u32();
    if (tensor_count != model.params.size()) {
        r.fail("tensor count " + std::to_string(tensor_count) + " does not match the " +
               std::to_string(model.params.size()) + " parameters of this configuration");
    }
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        if (!model.params.contains(name)) r.fail("unexpected tensor name '" + name + "'");
        Tensor<float>& t = model.params.get(name);
        const std::uint8_t ndim = r.u8();
        if (ndim != 4) r.fail("unsupported ndim " + std::to_string(ndim));
        Shape4 s;
        s.n = static_cast<int>(r.u32());
        s.c = static_cast<int>(r.u32());
        s.h = static_cast<int>(r.u32());
        s.w = static_cast<int>(r.u32());
        if (!(s == t.shape())) {
            r.fail("shape " + s.str() + " does not match expected " + t.shape().str() +
                   " for '" + name + "'");
        }
        for (auto& v : t.data()) v = r.f32();
    }
    if (!r.at_end()) r.fail("trailing bytes after the last tensor");
    return model;
}

}  // namespace fpan
