#include <cstring>
#include <fstream>
#include <sstream>

#include "fedl2t/error.hpp"
#include "fedl2t/harness.hpp"

namespace fedl2t {

namespace {

constexpr char kMagic[8] = {'F', 'L', '2', 'T', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    template <class T>
    void pod(const T& v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void u64(std::uint64_t v) { pod(v); }
    void str(const std::string& s) {
        u64(s.size());
        buf_ += s;
    }
    void doubles(std::span<const double> v) {
        u64(v.size());
        buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    void batch(const SampleBatch& b) {
        u64(static_cast<std::uint64_t>(b.x.rows()));
        u64(static_cast<std::uint64_t>(b.x.cols()));
        buf_.append(reinterpret_cast<const char*>(b.x.data()), b.x.size() * sizeof(double));
        for (int y : b.y) pod(static_cast<std::int32_t>(y));
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string_view bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

    template <class T>
    T pod() {
        T v;
        take(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    std::size_t count(std::size_t elem_size) {
        const std::uint64_t n = u64();
        if (elem_size > 0 && n > remaining() / elem_size) fail("length field exceeds file size");
        return static_cast<std::size_t>(n);
    }
    std::string str() {
        const std::size_t n = count(1);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void doubles_into(std::span<double> out) {
        if (count(sizeof(double)) != out.size()) fail("parameter count does not match model spec");
        take(out.data(), out.size() * sizeof(double));
    }
    SampleBatch batch() {
        const std::size_t rows = count(0);
        const std::size_t cols = count(0);
        if (cols != 0 && rows > remaining() / (cols * sizeof(double) + sizeof(std::int32_t))) fail("batch too large");
        SampleBatch b;
        b.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        take(b.x.data(), rows * cols * sizeof(double));
        b.y.resize(rows);
        for (auto& y : b.y) y = pod<std::int32_t>();
        return b;
    }
    bool done() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& why) const { throw IoError("corrupt checkpoint " + path_ + ": " + why); }

private:
    std::size_t remaining() const { return bytes_.size() - pos_; }
    void take(void* dst, std::size_t n) {
        if (n > remaining()) fail("truncated");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
    std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const Federation& fed) {
    Writer w;
    w.str(format_config(config));
    w.u64(static_cast<std::uint64_t>(fed.algorithm()));
    w.u64(fed.hyper().seed);
    w.u64(fed.global().round);

    const ModelSpec& spec = fed.global().t_global.spec();
    w.u64(spec.input_dim);
    w.u64(spec.base_hidden.size());
    for (auto width : spec.base_hidden) w.u64(width);
    w.u64(spec.feature_dim);
    w.u64(spec.num_classes);

    w.doubles(fed.global().t_global.values());
    w.str(fed.server_rng().serialize());

    w.u64(fed.clients().size());
    for (const auto& c : fed.clients()) {
        w.u64(c.id);
        w.doubles(c.personalized.values());
        w.doubles(c.transfer.values());
        w.batch(c.train);
        w.batch(c.test);
        w.str(c.rng.serialize());
    }

    w.u64(fed.history().size());
    for (const auto& r : fed.history()) {
        w.u64(r.round);
        w.u64(r.clients.size());
        for (const auto& c : r.clients) {
            w.u64(c.client);
            w.pod(c.acc);
            w.pod(c.losses.task);
            w.pod(c.losses.kl);
            w.pod(c.losses.feat);
            w.pod(c.losses.prox);
            w.pod(c.global_gap);
        }
    }

    const std::string& payload = w.bytes();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t size = payload.size();
    const std::uint64_t sum = fnv1a(payload);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&size), sizeof size);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&sum), sizeof sum);
    out.close();
    if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream raw;
    raw << in.rdbuf();
    const std::string file = raw.str();
    const std::string where = path.string();

    constexpr std::size_t header = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (file.size() < header + sizeof(std::uint64_t) || std::memcmp(file.data(), kMagic, sizeof kMagic) != 0)
        throw IoError("not a checkpoint: " + where);
    std::uint32_t version;
    std::memcpy(&version, file.data() + sizeof kMagic, sizeof version);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint " + where + " has format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
    std::uint64_t size;
    std::memcpy(&size, file.data() + sizeof kMagic + sizeof version, sizeof size);
    if (size != file.size() - header - sizeof(std::uint64_t)) throw IoError("corrupt checkpoint " + where + ": size");
    const std::string_view payload(file.data() + header, size);
    std::uint64_t sum;
    std::memcpy(&sum, file.data() + header + size, sizeof sum);
    if (sum != fnv1a(payload)) throw IoError("corrupt checkpoint " + where + ": checksum mismatch");

    Reader r(payload, where);
    ExperimentConfig config;
    try {
        config = parse_config(r.str());
    } catch (const ConfigError& e) {
        r.fail(std::string("embedded config: ") + e.what());
    }
    const auto alg_raw = r.u64();
    if (alg_raw >= std::size(kAllAlgorithms)) r.fail("unknown algorithm");
    const auto algorithm = static_cast<Algorithm>(alg_raw);
    const std::uint64_t seed = r.u64();
    const std::size_t round = r.u64();

    ModelSpec spec;
    spec.input_dim = r.u64();
    spec.base_hidden.resize(r.count(sizeof(std::uint64_t)));
    for (auto& width : spec.base_hidden) width = r.u64();
    spec.feature_dim = r.u64();
    spec.num_classes = r.u64();
    try {
        spec.validate();
    } catch (const ConfigError& e) {
        r.fail(std::string("model spec: ") + e.what());
    }
    if (!(spec == config.model)) r.fail("model spec does not match embedded config");

    GlobalState global{ModelParams(spec), round};
    r.doubles_into(global.t_global.values());
    RngStream server_rng = RngStream::deserialize(r.str());

    std::vector<ClientState> clients;
    const std::size_t K = r.count(1);
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t id = r.u64();
        ModelParams personalized(spec);
        r.doubles_into(personalized.values());
        ModelParams transfer(spec);
        r.doubles_into(transfer.values());
        SampleBatch train = r.batch();
        SampleBatch test = r.batch();
        RngStream rng = RngStream::deserialize(r.str());
        clients.push_back(ClientState{id, std::move(personalized), std::move(transfer), std::move(train),
                                      std::move(test), std::move(rng)});
    }

    std::vector<RoundMetrics> history(r.count(1));
    for (auto& m : history) {
        m.round = r.u64();
        m.clients.resize(r.count(1));
        for (auto& c : m.clients) {
            c.client = r.u64();
            c.acc = r.pod<double>();
            c.losses.task = r.pod<double>();
            c.losses.kl = r.pod<double>();
            c.losses.feat = r.pod<double>();
            c.losses.prox = r.pod<double>();
            c.global_gap = r.pod<double>();
        }
    }
    if (!r.done()) r.fail("trailing bytes");
    if (history.size() != round) r.fail("history length does not match round");

    HyperParams hp = config.hyper;
    hp.seed = seed;
    hp.algorithm = algorithm;
    return Checkpoint{config, Federation(algorithm, hp, std::move(clients), std::move(global), std::move(server_rng),
                                         std::move(history))};
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.config.model == expected)) throw ConfigError("checkpoint model spec differs from the requested one", "model");
    return ck;
}

}  // namespace fedl2t
