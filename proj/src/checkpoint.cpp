#include "dasr/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dasr/config.hpp"

namespace dasr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

void put_floats(std::string& out, std::span<const float> values) {
    for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t crc_of(const char* data, std::size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in bounded chunks.
    while (len > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        len -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

[[noreturn]] void malformed(const std::string& msg) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint: malformed header: " + msg);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    const std::size_t np = ckpt.parameters.size();
    if (ckpt.adam.m.size() != np || ckpt.adam.v.size() != np) {
        throw Error("checkpoint: optimizer state does not match the parameter list");
    }
    json table = json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < np; ++i) {
        const auto& p = ckpt.parameters[i];
        if (ckpt.adam.m[i].size() != p.value.numel() || ckpt.adam.v[i].size() != p.value.numel()) {
            throw Error("checkpoint: moment size mismatch for '" + p.name + "'");
        }
        table.push_back({{"name", p.name}, {"shape", shape_json(p.value.shape())}, {"offset", offset}});
        offset += p.value.numel();
    }
    json header{{"model", to_json(ckpt.model_config)},
                {"train", to_json(ckpt.train_config)},
                {"iteration", ckpt.iteration},
                {"rng_state", ckpt.rng_state},
                {"loss_history", ckpt.loss_history},
                {"tensors", table},
                {"payload_floats", 3 * offset}};
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put_u32(out, Checkpoint::kVersion);
    put_u64(out, header_text.size());
    out += header_text;
    out.reserve(out.size() + 12 * offset + 4);
    for (const auto& p : ckpt.parameters) put_floats(out, p.value.values());
    for (const auto& m : ckpt.adam.m) put_floats(out, m);
    for (const auto& v : ckpt.adam.v) put_floats(out, v);
    put_u32(out, crc_of(out.data(), out.size()));
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    using K = CheckpointError::Kind;
    if (bytes.size() < sizeof kMagic) throw CheckpointError(K::truncated, "checkpoint: truncated before magic bytes");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(K::bad_magic, "checkpoint: bad magic bytes (not a checkpoint file)");
    }
    if (bytes.size() < 20) throw CheckpointError(K::truncated, "checkpoint: truncated fixed header");
    const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
    if (version != Checkpoint::kVersion) {
        throw CheckpointError(K::version, "checkpoint: format version " + std::to_string(version) +
                                              " is not supported (expected " +
                                              std::to_string(Checkpoint::kVersion) + ")");
    }
    const std::uint64_t header_len = get_le(bytes, 12, 8);
    if (header_len > bytes.size() - 20) throw CheckpointError(K::truncated, "checkpoint: truncated JSON header");
    json header;
    try {
        header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception& e) {
        // A damaged header is reported by the checksum when the file is
        // complete; otherwise the structure itself is broken.
        if (bytes.size() >= 24 && crc_of(bytes.data(), bytes.size() - 4) != get_le(bytes, bytes.size() - 4, 4)) {
            throw CheckpointError(K::checksum, "checkpoint: checksum mismatch (header corrupted)");
        }
        malformed(e.what());
    }
    std::uint64_t payload_floats = 0;
    try {
        payload_floats = header.at("payload_floats").get<std::uint64_t>();
    } catch (const json::exception& e) {
        malformed(e.what());
    }
    const std::uint64_t expected = 20 + header_len + 4 * payload_floats + 4;
    if (bytes.size() < expected) {
        throw CheckpointError(K::truncated, "checkpoint: truncated payload (" + std::to_string(bytes.size()) + " of " +
                                                std::to_string(expected) + " bytes)");
    }
    if (bytes.size() > expected) throw CheckpointError(K::malformed, "checkpoint: trailing bytes after checksum");
    const auto stored_crc = static_cast<std::uint32_t>(get_le(bytes, expected - 4, 4));
    if (crc_of(bytes.data(), expected - 4) != stored_crc) {
        throw CheckpointError(K::checksum, "checkpoint: checksum mismatch (file corrupted)");
    }

    Checkpoint c;
    try {
        c.model_config = model_config_from_json(header.at("model"), "checkpoint.model");
        c.train_config = train_config_from_json(header.at("train"), "checkpoint.train");
        c.iteration = header.at("iteration").get<int>();
        c.rng_state = header.at("rng_state").get<std::string>();
        c.loss_history = header.at("loss_history").get<std::vector<float>>();
        const json& table = header.at("tensors");
        std::uint64_t total = 0;
        for (const auto& t : table) {
            const auto dims = t.at("shape").get<std::vector<int>>();
            if (dims.size() != 4) malformed("tensor shape must have 4 extents");
            Shape s{dims[0], dims[1], dims[2], dims[3]};
            if (t.at("offset").get<std::uint64_t>() != total) malformed("tensor offsets are not contiguous");
            total += s.numel();
            c.parameters.push_back({t.at("name").get<std::string>(), Tensor<float>(s)});
        }
        if (3 * total != payload_floats) malformed("payload size does not match the tensor table");
    } catch (const json::exception& e) {
        malformed(e.what());
    } catch (const ConfigError& e) {
        malformed(e.what());
    }

    std::size_t pos = 20 + header_len;
    auto read_floats = [&](std::span<float> dst) {
        for (float& f : dst) {
            f = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, pos, 4)));
            pos += 4;
        }
    };
    for (auto& p : c.parameters) read_floats(p.value.mutable_values());
    c.adam.m.resize(c.parameters.size());
    c.adam.v.resize(c.parameters.size());
    for (std::size_t i = 0; i < c.parameters.size(); ++i) {
        c.adam.m[i].resize(c.parameters[i].value.numel());
        read_floats(c.adam.m[i]);
    }
    for (std::size_t i = 0; i < c.parameters.size(); ++i) {
        c.adam.v[i].resize(c.parameters[i].value.numel());
        read_floats(c.adam.v[i]);
    }
    return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const Error& e) {
        throw CheckpointError(CheckpointError::Kind::io, std::string("checkpoint: ") + e.what());
    }
    return deserialize_checkpoint(bytes);
}

Checkpoint initial_checkpoint(const Model<float>& model, const TrainConfig& config) {
    Checkpoint c;
    c.model_config = model.config();
    c.train_config = config;
    c.iteration = 0;
    c.rng_state = Rng(config.seed).state();
    for (const auto& p : model.parameters()) c.parameters.push_back({p.name, p.value.clone()});
    c.adam = AdamState::zeros_like(model.parameters());
    return c;
}

std::string content_digest(std::string_view bytes) {
    std::ostringstream s;
    s << std::hex;
    s.width(8);
    s.fill('0');
    s << crc_of(bytes.data(), bytes.size());
    return s.str();
}

std::string parameter_digest(const std::vector<NamedParameter<float>>& params) {
    std::string bytes;
    for (const auto& p : params) {
        bytes += p.name;
        bytes.push_back('\0');
        put_floats(bytes, p.value.values());
    }
    return content_digest(bytes);
}

std::string image_digest(const std::vector<ImageRecord>& records) {
    std::string bytes;
    for (const auto& r : records) {
        bytes += r.id;
        bytes.push_back('\0');
        bytes += r.pixels.shape().str();
        put_floats(bytes, r.pixels.values());
    }
    return content_digest(bytes);
}

}  // namespace dasr
