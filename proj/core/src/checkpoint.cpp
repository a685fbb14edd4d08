#include "bvar/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace bvar {

namespace {

constexpr char kMagic[4] = {'B', 'V', 'A', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u64(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

std::uint32_t file_crc(const std::vector<std::uint8_t>& bytes, std::size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, bytes.data(), static_cast<uInt>(len));
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_spec(const NetworkSpec& spec) {
    std::vector<std::uint8_t> out;
    put_u64(out, spec.in_channels);
    put_u64(out, spec.in_h);
    put_u64(out, spec.in_w);
    put_u64(out, spec.layers.size());
    for (const LayerSpec& l : spec.layers) {
        put_u32(out, static_cast<std::uint32_t>(l.kind));
        put_u64(out, l.channels);
        put_u64(out, l.kernel);
        put_u64(out, l.stride);
        put_u32(out, static_cast<std::uint32_t>(l.padding));
        put_u64(out, l.features);
    }
    return out;
}

std::vector<std::uint8_t> encode_blocks(const std::vector<Network::Block>& blocks) {
    std::vector<std::uint8_t> out;
    put_u64(out, blocks.size());
    for (const Network::Block& b : blocks) {
        if (!same_shape(b.mu, b.rho))
            throw ContractError("block '" + b.name + "' has mismatched mu/rho shapes");
        put_str(out, b.name);
        out.push_back(b.in_kl ? 1 : 0);
        put_u64(out, b.mu.rank());
        for (std::size_t d = 0; d < b.mu.rank(); ++d) put_u64(out, b.mu.dim(d));
        for (const double v : b.mu.data()) put_f64(out, v);
        for (const double v : b.rho.data()) put_f64(out, v);
    }
    return out;
}

std::vector<std::uint8_t> encode_config(const TrainingConfig& cfg) {
    std::vector<std::uint8_t> out;
    put_f64(out, cfg.learning_rate);
    put_u64(out, cfg.batch_size);
    put_u64(out, cfg.epochs);
    put_u64(out, cfg.mc_samples_train);
    put_f64(out, cfg.kl_weight);
    put_u64(out, cfg.seed);
    put_u64(out, cfg.early_stop_patience);
    put_u32(out, static_cast<std::uint32_t>(cfg.optimizer));
    put_f64(out, cfg.adam_beta1);
    put_f64(out, cfg.adam_beta2);
    put_f64(out, cfg.adam_eps);
    put_u32(out, static_cast<std::uint32_t>(cfg.prior.kind));
    put_f64(out, cfg.prior.sigma);
    put_f64(out, cfg.prior.pi);
    put_f64(out, cfg.prior.sigma1);
    put_f64(out, cfg.prior.sigma2);
    return out;
}

class Reader {
  public:
    Reader(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
        : bytes_(bytes), pos_(begin), end_(end) {}

    std::size_t pos() const { return pos_; }

    void need(std::uint64_t count, std::size_t elem_size, const char* what) {
        if (count > (end_ - pos_) / elem_size)
            throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }

    std::uint32_t u32(const char* what) {
        need(4, 1, what);
        std::uint32_t v = 0;
        for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << s;
        return v;
    }

    std::uint64_t u64(const char* what) {
        need(8, 1, what);
        std::uint64_t v = 0;
        for (int s = 0; s < 64; s += 8) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << s;
        return v;
    }

    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    std::string str(const char* what) {
        const std::uint64_t len = u64(what);
        need(len, 1, what);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
        pos_ += len;
        return s;
    }

    std::uint8_t byte(const char* what) {
        need(1, 1, what);
        return bytes_[pos_++];
    }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_;
    std::size_t end_;
};

NetworkSpec decode_spec(Reader& r) {
    NetworkSpec spec;
    spec.in_channels = r.u64("input channels");
    spec.in_h = r.u64("input height");
    spec.in_w = r.u64("input width");
    const std::uint64_t n = r.u64("layer count");
    r.need(n, 20, "layer list");  // 20 bytes is a conservative per-layer floor
    for (std::uint64_t i = 0; i < n; ++i) {
        LayerSpec l;
        const std::uint32_t kind = r.u32("layer kind");
        if (kind > static_cast<std::uint32_t>(LayerKind::kSoftmax))
            throw CheckpointError("corrupt layer kind " + std::to_string(kind));
        l.kind = static_cast<LayerKind>(kind);
        l.channels = r.u64("layer channels");
        l.kernel = r.u64("layer kernel");
        l.stride = r.u64("layer stride");
        const std::uint32_t pad = r.u32("layer padding");
        if (pad > static_cast<std::uint32_t>(Padding::kSame))
            throw CheckpointError("corrupt padding mode " + std::to_string(pad));
        l.padding = static_cast<Padding>(pad);
        l.features = r.u64("layer features");
        spec.layers.push_back(l);
    }
    return spec;
}

std::vector<Network::Block> decode_blocks(Reader& r) {
    std::vector<Network::Block> blocks;
    const std::uint64_t n = r.u64("block count");
    r.need(n, 17, "block list");  // conservative per-block floor
    for (std::uint64_t i = 0; i < n; ++i) {
        Network::Block b;
        b.name = r.str("block name");
        b.in_kl = r.byte("block kl flag") != 0;
        const std::uint64_t rank = r.u64("tensor rank");
        r.need(rank, 8, "tensor shape");
        std::vector<std::size_t> shape;
        std::uint64_t numel = 1;
        for (std::uint64_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = r.u64("tensor dimension");
            if (dim == 0 || numel > std::numeric_limits<std::uint64_t>::max() / dim)
                throw CheckpointError("corrupt tensor shape in block '" + b.name + "'");
            numel *= dim;
            shape.push_back(dim);
        }
        r.need(numel, 16, "parameter data");
        std::vector<double> mu(numel), rho(numel);
        for (std::uint64_t t = 0; t < numel; ++t) mu[t] = r.f64("mu data");
        for (std::uint64_t t = 0; t < numel; ++t) rho[t] = r.f64("rho data");
        b.mu = Tensor(shape, std::move(mu));
        b.rho = Tensor(shape, std::move(rho));
        blocks.push_back(std::move(b));
    }
    return blocks;
}

TrainingConfig decode_config(Reader& r) {
    TrainingConfig cfg;
    cfg.learning_rate = r.f64("learning rate");
    cfg.batch_size = r.u64("batch size");
    cfg.epochs = r.u64("epochs");
    cfg.mc_samples_train = r.u64("mc samples");
    cfg.kl_weight = r.f64("kl weight");
    cfg.seed = r.u64("training seed");
    cfg.early_stop_patience = r.u64("patience");
    const std::uint32_t opt = r.u32("optimizer");
    if (opt > static_cast<std::uint32_t>(Optimizer::kAdam))
        throw CheckpointError("corrupt optimizer tag " + std::to_string(opt));
    cfg.optimizer = static_cast<Optimizer>(opt);
    cfg.adam_beta1 = r.f64("adam beta1");
    cfg.adam_beta2 = r.f64("adam beta2");
    cfg.adam_eps = r.f64("adam epsilon");
    const std::uint32_t kind = r.u32("prior kind");
    if (kind > static_cast<std::uint32_t>(Prior::Kind::kScaleMixture))
        throw CheckpointError("corrupt prior kind " + std::to_string(kind));
    cfg.prior.kind = static_cast<Prior::Kind>(kind);
    cfg.prior.sigma = r.f64("prior sigma");
    cfg.prior.pi = r.f64("prior pi");
    cfg.prior.sigma1 = r.f64("prior sigma1");
    cfg.prior.sigma2 = r.f64("prior sigma2");
    return cfg;
}

}  // namespace

Checkpoint make_checkpoint(const Network& net, const TrainingConfig& cfg, std::uint64_t seed) {
    return Checkpoint{net.spec(), net.blocks(), cfg, seed};
}

Network restore_network(const Checkpoint& c) { return Network(c.spec, c.blocks); }

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    put_u32(bytes, kCheckpointVersion);

    const auto append_section = [&bytes](const std::vector<std::uint8_t>& payload) {
        put_u64(bytes, payload.size());
        bytes.insert(bytes.end(), payload.begin(), payload.end());
    };
    append_section(encode_spec(c.spec));
    append_section(encode_blocks(c.blocks));
    append_section(encode_config(c.config));
    std::vector<std::uint8_t> seed_payload;
    put_u64(seed_payload, c.seed);
    append_section(seed_payload);

    put_u32(bytes, file_crc(bytes, bytes.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint to '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing checkpoint to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint from '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());

    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError("bad magic: not a checkpoint file");
    Reader header(bytes, 4, bytes.size());
    const std::uint32_t version = header.u32("format version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");

    // structural walk: four length-prefixed sections, then the CRC trailer
    std::size_t pos = 8;
    std::size_t section_starts[4];
    std::size_t section_lens[4];
    for (int s = 0; s < 4; ++s) {
        Reader r(bytes, pos, bytes.size());
        const std::uint64_t len = r.u64("section length");
        r.need(len, 1, "section payload");
        section_starts[s] = r.pos();
        section_lens[s] = static_cast<std::size_t>(len);
        pos = section_starts[s] + section_lens[s];
    }
    if (bytes.size() - pos < 4) throw CheckpointError("truncated checkpoint: missing CRC trailer");
    if (bytes.size() - pos > 4) throw CheckpointError("trailing bytes after CRC trailer");
    Reader crc_reader(bytes, pos, bytes.size());
    const std::uint32_t stored = crc_reader.u32("CRC trailer");
    const std::uint32_t computed = file_crc(bytes, bytes.size() - 4);
    if (stored != computed) throw CheckpointError("checksum mismatch: checkpoint is corrupt");

    Checkpoint c;
    const auto parse = [&bytes, &section_starts, &section_lens](int s, auto&& fn) {
        Reader r(bytes, section_starts[s], section_starts[s] + section_lens[s]);
        auto value = fn(r);
        if (r.pos() != section_starts[s] + section_lens[s])
            throw CheckpointError("section length mismatch: checkpoint is corrupt");
        return value;
    };
    c.spec = parse(0, [](Reader& r) { return decode_spec(r); });
    c.blocks = parse(1, [](Reader& r) { return decode_blocks(r); });
    c.config = parse(2, [](Reader& r) { return decode_config(r); });
    c.seed = parse(3, [](Reader& r) { return r.u64("pipeline seed"); });
    return c;
}

}  // namespace bvar
