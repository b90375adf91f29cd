#include "divbnn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "divbnn/config.hpp"

namespace divbnn {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'D', 'B', 'N', 'N', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<char*>(b), 8);
}

uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_doubles(std::ostream& out, const std::vector<scalar_t>& v) {
    for (scalar_t x : v) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(out, bits);
    }
}

std::vector<scalar_t> read_doubles(std::istream& in, size_t n) {
    std::vector<scalar_t> v(n);
    for (auto& x : v) {
        uint64_t bits = read_u64(in);
        std::memcpy(&x, &bits, 8);
    }
    return v;
}

} // namespace

uint64_t arch_hash(const ArchSpec& arch, SamplingMode mode, bool deterministic) {
    std::string s = deterministic ? "det" : sampling_mode_name(mode);
    for (size_t w : arch.layer_widths) s += ":" + std::to_string(w);
    s += "|";
    for (size_t b : arch.block_boundaries) s += ":" + std::to_string(b);
    return fnv1a64(s);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["format_version"] = ckpt.version;
    header["arch_hash"] = ckpt.arch_hash;
    header["layer_widths"] = ckpt.arch.layer_widths;
    header["block_boundaries"] = ckpt.arch.block_boundaries;
    header["sampling_mode"] = sampling_mode_name(ckpt.mode);
    header["prior_std"] = ckpt.prior_std;
    header["deterministic"] = ckpt.deterministic;
    header["model_param_count"] = ckpt.model_params.size();
    std::vector<size_t> attn_sizes;
    for (const auto& a : ckpt.attention) attn_sizes.push_back(a.size());
    header["attention_sizes"] = attn_sizes;
    header["has_optimizer"] = ckpt.optimizer.has_value();
    if (ckpt.optimizer) {
        std::vector<size_t> sizes;
        for (const auto& m : ckpt.optimizer->m) sizes.push_back(m.size());
        header["optimizer_sizes"] = sizes;
        header["optimizer_step"] = ckpt.optimizer->t;
    }
    header["rng_state"] = ckpt.rng_state;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, 8);
    std::string hdr = header.dump(); // nlohmann sorts keys: deterministic bytes
    write_u64(out, hdr.size());
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    write_doubles(out, ckpt.model_params);
    for (const auto& a : ckpt.attention) write_doubles(out, a);
    if (ckpt.optimizer) {
        for (const auto& m : ckpt.optimizer->m) write_doubles(out, m);
        for (const auto& v : ckpt.optimizer->v) write_doubles(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint64_t hdr_len = read_u64(in);
    std::string hdr(hdr_len, '\0');
    if (!in.read(hdr.data(), static_cast<std::streamsize>(hdr_len)))
        throw std::runtime_error("checkpoint: truncated header in " + path);
    json header = json::parse(hdr);

    Checkpoint ckpt;
    ckpt.version = header.at("format_version").get<uint32_t>();
    ckpt.arch_hash = header.at("arch_hash").get<uint64_t>();
    ckpt.arch.layer_widths = header.at("layer_widths").get<std::vector<size_t>>();
    ckpt.arch.block_boundaries = header.at("block_boundaries").get<std::vector<size_t>>();
    ckpt.mode = sampling_mode_from(header.at("sampling_mode").get<std::string>());
    ckpt.prior_std = header.at("prior_std").get<scalar_t>();
    ckpt.deterministic = header.at("deterministic").get<bool>();
    ckpt.rng_state = header.at("rng_state").get<uint64_t>();

    uint64_t expected = arch_hash(ckpt.arch, ckpt.mode, ckpt.deterministic);
    if (expected != ckpt.arch_hash)
        throw std::runtime_error("checkpoint: architecture hash mismatch in " + path);

    ckpt.model_params = read_doubles(in, header.at("model_param_count").get<size_t>());
    for (size_t n : header.at("attention_sizes").get<std::vector<size_t>>())
        ckpt.attention.push_back(read_doubles(in, n));
    if (header.at("has_optimizer").get<bool>()) {
        Adam::State st;
        st.t = header.at("optimizer_step").get<size_t>();
        auto sizes = header.at("optimizer_sizes").get<std::vector<size_t>>();
        for (size_t n : sizes) st.m.push_back(read_doubles(in, n));
        for (size_t n : sizes) st.v.push_back(read_doubles(in, n));
        ckpt.optimizer = std::move(st);
    }
    return ckpt;
}

Checkpoint checkpoint_of(const BnnModel& model, const FeatureFuser& fuser, uint64_t rng_state) {
    Checkpoint ckpt;
    ckpt.arch.layer_widths.push_back(model.in_dim());
    for (const auto& l : model.layers) ckpt.arch.layer_widths.push_back(l.out_dim);
    ckpt.arch.block_boundaries = model.block_boundaries;
    ckpt.mode = model.mode;
    ckpt.prior_std = model.prior.std;
    ckpt.arch_hash = arch_hash(ckpt.arch, ckpt.mode, false);
    ckpt.model_params = flatten_params(model);
    for (auto t : fuser.trainable()) ckpt.attention.push_back(t.values());
    ckpt.rng_state = rng_state;
    return ckpt;
}

std::vector<std::vector<scalar_t>> checkpoint_means(const Checkpoint& ckpt) {
    std::vector<std::vector<scalar_t>> means;
    size_t off = 0;
    auto take = [&](size_t n) {
        if (off + n > ckpt.model_params.size())
            throw std::runtime_error("checkpoint: payload shorter than architecture requires");
        std::vector<scalar_t> v(ckpt.model_params.begin() + off,
                                ckpt.model_params.begin() + off + n);
        off += n;
        return v;
    };
    for (size_t i = 0; i + 1 < ckpt.arch.layer_widths.size(); ++i) {
        size_t in = ckpt.arch.layer_widths[i], out = ckpt.arch.layer_widths[i + 1];
        if (ckpt.deterministic) {
            means.push_back(take(in * out)); // w
            means.push_back(take(out));      // b
        } else {
            means.push_back(take(in * out)); // mu_w
            take(in * out);                  // rho_w
            means.push_back(take(out));      // mu_b
            take(out);                       // rho_b
        }
    }
    return means;
}

} // namespace divbnn
