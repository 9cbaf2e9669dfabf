#include "checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <map>

#include "tensor_io.hpp"

namespace voxseed {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::int64_t kMaxExactCounter = std::int64_t{1} << 24;

struct Entry {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const std::vector<int>& shape,
                const float* data, std::size_t n) {
    if (name.size() > 0xFFFF) throw InvalidArgument("checkpoint tensor name too long");
    le::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < n; ++i) le::put_f32(out, data[i]);
}

// Hyperparameters are stored as f32; read them back as the shortest decimal
// that round-trips, so 0.15 comes back as 0.15 rather than 0.150000006.
double widen(float x) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, x).ptr;
    double out = 0.0;
    std::from_chars(buf, end, out);
    return out;
}

std::int64_t counter(float x, const char* what) {
    if (!(x >= 0.0f) || x > static_cast<float>(kMaxExactCounter)) {
        throw FormatError(std::string("checkpoint counter out of range: ") + what);
    }
    return static_cast<std::int64_t>(x);
}

const Entry& need(const std::map<std::string, Entry>& entries, const std::string& name, std::size_t len) {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("checkpoint missing tensor " + name);
    if (it->second.data.size() != len) throw FormatError("checkpoint tensor " + name + " has wrong size");
    return it->second;
}

}  // namespace

std::vector<std::uint8_t> encode_vck1(const Checkpoint& ck) {
    require_same_layout(ck.student, ck.teacher, "checkpoint");
    if (ck.optimizer.m.size() != ck.student.tensors.size() || ck.optimizer.v.size() != ck.student.tensors.size()) {
        throw ShapeError("checkpoint: optimizer state does not match params");
    }
    for (auto c : {ck.iteration, ck.total_iterations, ck.optimizer.step}) {
        if (c < 0 || c > kMaxExactCounter) throw InvalidArgument("checkpoint counter out of range");
    }
    const auto& cfg = ck.student.config;
    const std::vector<float> config{static_cast<float>(cfg.in_channels), static_cast<float>(cfg.out_classes),
                                    static_cast<float>(cfg.levels), static_cast<float>(cfg.base_filters),
                                    static_cast<float>(cfg.dropout_rate)};
    const auto& h = ck.optimizer.hyper;
    const std::vector<float> adam{static_cast<float>(h.lr), static_cast<float>(h.beta1), static_cast<float>(h.beta2),
                                  static_cast<float>(h.eps)};
    const std::vector<float> counters{static_cast<float>(ck.iteration), static_cast<float>(ck.total_iterations),
                                      static_cast<float>(ck.optimizer.step)};

    const std::size_t n_params = ck.student.tensors.size();
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    le::put_u32(out, kVersion);
    le::put_u32(out, static_cast<std::uint32_t>(3 + 4 * n_params));
    put_tensor(out, "meta/config", {5}, config.data(), config.size());
    put_tensor(out, "meta/adam", {4}, adam.data(), adam.size());
    put_tensor(out, "meta/counters", {3}, counters.data(), counters.size());
    for (const auto& t : ck.student.tensors) put_tensor(out, "student/" + t.name, t.shape, t.data.data(), t.data.size());
    for (const auto& t : ck.teacher.tensors) put_tensor(out, "teacher/" + t.name, t.shape, t.data.data(), t.data.size());
    for (std::size_t i = 0; i < n_params; ++i) {
        const auto& t = ck.student.tensors[i];
        put_tensor(out, "adam.m/" + t.name, t.shape, ck.optimizer.m[i].data(), ck.optimizer.m[i].size());
    }
    for (std::size_t i = 0; i < n_params; ++i) {
        const auto& t = ck.student.tensors[i];
        put_tensor(out, "adam.v/" + t.name, t.shape, ck.optimizer.v[i].data(), ck.optimizer.v[i].size());
    }
    return out;
}

Checkpoint decode_vck1(const std::vector<std::uint8_t>& bytes) {
    le::Reader r(bytes, "VCK1");
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("VCK1: bad magic");
    if (auto v = r.u32(); v != kVersion) throw FormatError("VCK1: unsupported version " + std::to_string(v));
    const std::uint32_t count = r.u32();

    std::map<std::string, Entry> entries;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t len = r.u16();
        std::string name(len, '\0');
        r.raw(name.data(), len);
        Entry e;
        const std::uint8_t rank = r.u8();
        std::size_t n = 1;
        for (int i = 0; i < rank; ++i) {
            e.dims.push_back(r.u32());
            n *= e.dims.back();
        }
        if (n * 4 > r.remaining()) throw FormatError("VCK1: tensor " + name + " truncated");
        e.data.resize(n);
        for (auto& x : e.data) x = r.f32();
        if (!entries.emplace(name, std::move(e)).second) throw FormatError("VCK1: duplicate tensor " + name);
    }
    if (!r.at_end()) throw FormatError("VCK1: trailing bytes");

    const auto& config = need(entries, "meta/config", 5).data;
    NetConfig cfg;
    cfg.in_channels = static_cast<int>(config[0]);
    cfg.out_classes = static_cast<int>(config[1]);
    cfg.levels = static_cast<int>(config[2]);
    cfg.base_filters = static_cast<int>(config[3]);
    cfg.dropout_rate = widen(config[4]);
    try {
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("VCK1: bad network config: ") + e.what());
    }
    const auto& adam = need(entries, "meta/adam", 4).data;
    const auto& counters = need(entries, "meta/counters", 3).data;

    Checkpoint ck;
    ck.student = make_params<float>(cfg);
    ck.teacher = make_params<float>(cfg);
    ck.optimizer = OptimizerState::fresh(ck.student, AdamHyper{widen(adam[0]), widen(adam[1]), widen(adam[2]), widen(adam[3])});
    ck.iteration = counter(counters[0], "iteration");
    ck.total_iterations = counter(counters[1], "total_iterations");
    ck.optimizer.step = counter(counters[2], "adam step");

    for (std::size_t i = 0; i < ck.student.tensors.size(); ++i) {
        const auto& name = ck.student.tensors[i].name;
        const std::size_t n = ck.student.tensors[i].data.size();
        ck.student.tensors[i].data = need(entries, "student/" + name, n).data;
        ck.teacher.tensors[i].data = need(entries, "teacher/" + name, n).data;
        ck.optimizer.m[i] = need(entries, "adam.m/" + name, n).data;
        ck.optimizer.v[i] = need(entries, "adam.v/" + name, n).data;
    }
    if (entries.size() != 3 + 4 * ck.student.tensors.size()) throw FormatError("VCK1: unexpected extra tensors");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_bytes(path, encode_vck1(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_vck1(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace voxseed
