#include "rim/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "rim/config.hpp"
#include "rim/errors.hpp"

namespace rim::checkpoint {

using torch::Tensor;

namespace {

constexpr char kMagic[8] = {'R', 'I', 'M', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    template <typename T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void put_string32(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }

    std::vector<char> bytes;
};

class Reader {
public:
    Reader(const std::vector<char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <typename T>
    T get() {
        T v;
        get_bytes(&v, sizeof(T));
        return v;
    }
    void get_bytes(void* out, std::size_t n) {
        if (n > end_ - pos_) {
            throw ChecksumError("checkpoint is truncated");
        }
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::string get_string(std::size_t n) {
        std::string s(n, '\0');
        get_bytes(s.data(), n);
        return s;
    }
    bool done() const { return pos_ == end_; }

private:
    const std::vector<char>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay portable.
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

NamedArray from_tensor(const std::string& name, const Tensor& t) {
    NamedArray a;
    a.name = name;
    a.shape.assign(t.sizes().begin(), t.sizes().end());
    const Tensor d = t.detach().to(torch::kFloat64).contiguous();
    a.values.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
    return a;
}

NamedArray from_vector(const std::string& name, const std::vector<double>& v) {
    return {name, {static_cast<int64_t>(v.size())}, v};
}

/// (name, live tensor) for every parameter and optimizer buffer of the state.
std::vector<std::pair<std::string, Tensor>> live_tensors(train::TrainState& state) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& item : state.fhn->named_parameters()) {
        out.emplace_back("fhn." + item.key(), item.value());
    }
    for (const auto& item : state.hrn->named_parameters()) {
        out.emplace_back("hrn." + item.key(), item.value());
    }
    for (auto& [group, opt] : state.optimizers()) {
        auto& buffers = opt->square_avg();
        for (std::size_t i = 0; i < buffers.size(); ++i) {
            out.emplace_back("optim." + group + "." + std::to_string(i), buffers[i]);
        }
    }
    return out;
}

std::string shape_string(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

const NamedArray* Archive::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) {
            return &a;
        }
    }
    return nullptr;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
    Writer w;
    w.put_bytes(kMagic, sizeof kMagic);
    w.put(archive.version);
    const std::string config = archive.config.dump();
    w.put(static_cast<std::uint64_t>(config.size()));
    w.put_bytes(config.data(), config.size());
    w.put(static_cast<std::int64_t>(archive.step));
    w.put(static_cast<std::uint32_t>(archive.arrays.size()));
    for (const auto& a : archive.arrays) {
        w.put_string32(a.name);
        w.put(static_cast<std::uint32_t>(a.shape.size()));
        for (const auto d : a.shape) {
            w.put(static_cast<std::int64_t>(d));
        }
        w.put_bytes(a.values.data(), a.values.size() * sizeof(double));
    }
    w.put(crc_of(w.bytes.data(), w.bytes.size()));

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write checkpoint " + path.string());
        }
        out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
        if (!out) {
            throw IoError("failed writing checkpoint " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof kMagic + sizeof(std::uint32_t) * 2 ||
        std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ChecksumError(path.string() + " is not a checkpoint file");
    }
    const std::size_t body = bytes.size() - sizeof(std::uint32_t);
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    if (stored != crc_of(bytes.data(), body)) {
        throw ChecksumError("checkpoint " + path.string() + " failed its checksum");
    }

    Reader r(bytes, body);
    Archive a;
    char magic[sizeof kMagic];
    r.get_bytes(magic, sizeof magic);
    a.version = r.get<std::uint32_t>();
    if (a.version != kFormatVersion) {
        throw IncompatibleError("checkpoint format version " + std::to_string(a.version) + " (expected " +
                                std::to_string(kFormatVersion) + ")");
    }
    const auto config_len = r.get<std::uint64_t>();
    try {
        a.config = nlohmann::json::parse(r.get_string(config_len));
    } catch (const nlohmann::json::parse_error&) {
        throw ChecksumError("checkpoint config snapshot is corrupt");
    }
    a.step = r.get<std::int64_t>();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray arr;
        arr.name = r.get_string(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            arr.shape.push_back(r.get<std::int64_t>());
            if (arr.shape.back() < 0) {
                throw ChecksumError("checkpoint array " + arr.name + " has a negative dimension");
            }
            n *= static_cast<std::size_t>(arr.shape.back());
        }
        arr.values.resize(n);
        r.get_bytes(arr.values.data(), n * sizeof(double));
        a.arrays.push_back(std::move(arr));
    }
    if (!r.done()) {
        throw ChecksumError("checkpoint has trailing bytes");
    }
    return a;
}

Archive capture(train::TrainState& state) {
    Archive a;
    a.config = {{"fhn", config::to_json(state.fhn_cfg)},
                {"hrn", config::to_json(state.hrn_cfg)},
                {"train", config::to_json(state.cfg)}};
    a.step = state.step;
    for (const auto& [name, t] : live_tensors(state)) {
        a.arrays.push_back(from_tensor(name, t));
    }
    a.arrays.push_back(from_vector("kernel.sigmas", state.kernel.sigmas));
    a.arrays.push_back(from_vector("kernel.betas", state.kernel.betas));
    return a;
}

void restore(const Archive& archive, train::TrainState& state) {
    const auto live = live_tensors(state);
    // Validate everything first so a mismatch leaves the state untouched.
    for (const auto& [name, t] : live) {
        const NamedArray* a = archive.find(name);
        if (a == nullptr) {
            throw IncompatibleError("checkpoint has no array '" + name + "'");
        }
        const std::vector<int64_t> shape(t.sizes().begin(), t.sizes().end());
        if (a->shape != shape) {
            throw IncompatibleError("array '" + name + "' has shape " + shape_string(a->shape) +
                                    " in the checkpoint but " + shape_string(shape) + " in the model");
        }
    }
    const NamedArray* sigmas = archive.find("kernel.sigmas");
    const NamedArray* betas = archive.find("kernel.betas");
    if (sigmas == nullptr || betas == nullptr || sigmas->values.size() != betas->values.size()) {
        throw IncompatibleError("checkpoint kernel bank arrays are missing or inconsistent");
    }
    if (archive.arrays.size() != live.size() + 2) {
        for (const auto& a : archive.arrays) {
            const bool known = a.name == "kernel.sigmas" || a.name == "kernel.betas" ||
                               std::any_of(live.begin(), live.end(), [&](const auto& l) { return l.first == a.name; });
            if (!known) {
                throw IncompatibleError("checkpoint array '" + a.name + "' has no counterpart in the model");
            }
        }
    }

    torch::NoGradGuard guard;
    for (const auto& [name, t] : live) {
        const NamedArray* a = archive.find(name);
        const Tensor src = torch::from_blob(const_cast<double*>(a->values.data()), t.sizes(), torch::kFloat64);
        t.copy_(src.to(t.scalar_type()));
    }
    state.kernel.sigmas = sigmas->values;
    state.kernel.betas = betas->values;
    state.step = archive.step;
}

void save_checkpoint(train::TrainState& state, const std::filesystem::path& path) {
    write_archive(capture(state), path);
}

std::unique_ptr<train::TrainState> load_checkpoint(const std::filesystem::path& path) {
    const Archive archive = read_archive(path);
    fhn::FhnConfig fhn_cfg;
    hrn::HrnConfig hrn_cfg;
    train::TrainConfig train_cfg;
    try {
        config::merge(fhn_cfg, archive.config.at("fhn"));
        config::merge(hrn_cfg, archive.config.at("hrn"));
        config::merge(train_cfg, archive.config.at("train"));
    } catch (const nlohmann::json::exception& e) {
        throw IncompatibleError(std::string("checkpoint config snapshot is incomplete: ") + e.what());
    } catch (const ValidationError& e) {
        throw IncompatibleError(std::string("checkpoint config snapshot: ") + e.what());
    }
    auto state = train::make_state(fhn_cfg, hrn_cfg, train_cfg);
    restore(archive, *state);
    return state;
}

void load_checkpoint(const std::filesystem::path& path, train::TrainState& state) {
    restore(read_archive(path), state);
}

}  // namespace rim::checkpoint
