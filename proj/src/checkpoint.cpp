#include "fdnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fdnet/config.hpp"
#include "fdnet/error.hpp"

namespace fdnet::train {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'D', 'N', 'C', 'K', 'P', 'T', '\0'};

class Writer {
  public:
    explicit Writer(std::ostream& out) : out_(out) {}
    template <class T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void reals(const std::vector<double>& v) {
        pod(static_cast<std::uint64_t>(v.size()));
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }

  private:
    std::ostream& out_;
};

class Reader {
  public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
    template <class T>
    T pod() {
        T v{};
        if (!in_.read(reinterpret_cast<char*>(&v), sizeof(T))) fail();
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        if (n > (1u << 24)) fail();
        std::string s(n, '\0');
        if (n && !in_.read(s.data(), n)) fail();
        return s;
    }
    std::vector<double> reals() {
        const auto n = pod<std::uint64_t>();
        if (n > (1ull << 32)) fail();
        std::vector<double> v(n);
        if (n && !in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)))) fail();
        return v;
    }
    [[noreturn]] void fail() const { throw IoError("truncated or corrupt checkpoint " + path_); }

  private:
    std::istream& in_;
    std::string path_;
};

}  // namespace

Checkpoint capture(const model::FDNet& net, const Adam* optimizer, std::uint64_t step, std::string train_config) {
    Checkpoint c;
    c.model_config = config::model_echo(net.config());
    c.train_config = std::move(train_config);
    c.step = step;
    for (const auto& p : net.params().params()) {
        c.params.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
    }
    if (optimizer) c.optimizer = optimizer->state();
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ostringstream buf(std::ios::binary);
    Writer w(buf);
    buf.write(kMagic, sizeof kMagic);
    w.pod(ckpt.version_major);
    w.pod(ckpt.version_minor);
    w.str(ckpt.model_config);
    w.str(ckpt.train_config);
    w.pod(ckpt.step);
    w.pod(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
        w.str(p.name);
        w.pod(static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) w.pod(static_cast<std::uint32_t>(d));
        w.reals(p.values);
    }
    w.pod(static_cast<std::uint8_t>(ckpt.optimizer ? 1 : 0));
    if (ckpt.optimizer) {
        w.pod(ckpt.optimizer->step);
        for (const auto& m : ckpt.optimizer->m) w.reals(m);
        for (const auto& v : ckpt.optimizer->v) w.reals(v);
    }

    // Write to a sibling temp file first so an interrupted save never leaves
    // a truncated checkpoint behind.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        const std::string bytes = buf.str();
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint not found: " + path.string());
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw IoError("not an FDNet checkpoint: " + path.string());
    }
    Reader r(in, path.string());
    Checkpoint c;
    c.version_major = r.pod<std::uint32_t>();
    c.version_minor = r.pod<std::uint32_t>();
    if (c.version_major != kCheckpointMajor) {
        throw VersionError("checkpoint " + path.string() + " has format v" + std::to_string(c.version_major) + "." +
                           std::to_string(c.version_minor) + " but this build reads v" +
                           std::to_string(kCheckpointMajor) + ".x; migrate it with the matching release or retrain");
    }
    c.model_config = r.str();
    c.train_config = r.str();
    c.step = r.pod<std::uint64_t>();
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) r.fail();
        for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(static_cast<int>(r.pod<std::uint32_t>()));
        a.values = r.reals();
        if (a.values.size() != ag::numel(a.shape)) r.fail();
        c.params.push_back(std::move(a));
    }
    if (r.pod<std::uint8_t>()) {
        Adam::State s;
        s.step = r.pod<std::uint64_t>();
        for (std::uint32_t i = 0; i < count; ++i) s.m.push_back(r.reals());
        for (std::uint32_t i = 0; i < count; ++i) s.v.push_back(r.reals());
        c.optimizer = std::move(s);
    }
    if (in.peek() != std::char_traits<char>::eof()) r.fail();
    return c;
}

void restore_params(model::FDNet& net, const Checkpoint& ckpt) {
    auto& ps = net.params().params();
    if (ps.size() != ckpt.params.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, model expects " +
                          std::to_string(ps.size()));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& src = ckpt.params[i];
        if (src.name != ps[i].name || src.shape != ps[i].tensor.shape()) {
            throw ConfigError("checkpoint tensor " + src.name + " " + ag::shape_str(src.shape) +
                              " does not match model tensor " + ps[i].name + " " +
                              ag::shape_str(ps[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto t = ps[i].tensor;
        std::copy(ckpt.params[i].values.begin(), ckpt.params[i].values.end(), t.mutable_values().begin());
    }
}

model::FDNet model_from_checkpoint(const Checkpoint& ckpt) {
    model::FDNet net(config::parse_model_echo(ckpt.model_config));
    restore_params(net, ckpt);
    return net;
}

}  // namespace fdnet::train
