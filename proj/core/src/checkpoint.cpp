#include "evonas/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace evonas {

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

constexpr char kMagic[4] = {'E', 'V', 'N', 'S'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint8_t kKindTrain = 1;
constexpr std::uint8_t kKindSearch = 2;

class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i32(std::int32_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void str(const std::string& s) {
        u64(s.size());
        buf_.append(s);
    }
    void matrix(const MatrixXd& m) {
        i64(m.rows());
        i64(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
    }
    const std::string& buffer() const { return buf_; }

private:
    void raw(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    std::string buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::string_view data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    std::int32_t i32() { return scalar<std::int32_t>(); }
    std::int64_t i64() { return scalar<std::int64_t>(); }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        return std::string(take(n));
    }
    MatrixXd matrix() {
        const std::int64_t rows = i64();
        const std::int64_t cols = i64();
        if (rows < 0 || cols < 0) throw ChecksumError("checkpoint: bad tensor shape");
        MatrixXd m(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = f64();
        return m;
    }
    bool exhausted() const { return pos_ == data_.size(); }

private:
    template <typename T>
    T scalar() {
        T v;
        std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
        return v;
    }
    std::string_view take(std::size_t n) {
        if (pos_ + n > data_.size())
            throw ChecksumError("checkpoint: truncated payload");
        std::string_view out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

// --- domain serialization ---

void put_space(BinaryWriter& w, const SearchSpace& s) {
    w.i32(s.num_stages);
    w.u64(s.d_state_candidates.size());
    for (int v : s.d_state_candidates) w.i32(v);
    w.u64(s.ssd_expand_candidates.size());
    for (double v : s.ssd_expand_candidates) w.f64(v);
    w.u64(s.mlp_ratio_candidates.size());
    for (double v : s.mlp_ratio_candidates) w.f64(v);
    for (int v : s.max_depth_per_stage) w.i32(v);
}

SearchSpace get_space(BinaryReader& r) {
    SearchSpace s;
    s.num_stages = r.i32();
    s.d_state_candidates.resize(r.u64());
    for (int& v : s.d_state_candidates) v = r.i32();
    s.ssd_expand_candidates.resize(r.u64());
    for (double& v : s.ssd_expand_candidates) v = r.f64();
    s.mlp_ratio_candidates.resize(r.u64());
    for (double& v : s.mlp_ratio_candidates) v = r.f64();
    s.max_depth_per_stage.resize(s.num_stages);
    for (int& v : s.max_depth_per_stage) v = r.i32();
    return s;
}

void put_dims(BinaryWriter& w, const SupernetDims& d) {
    w.i32(d.grid_size);
    w.i32(d.patch_size);
    w.u64(d.d_model.size());
    for (int v : d.d_model) w.i32(v);
    w.i32(d.d_state_max);
    for (int v : d.e_max) w.i32(v);
    for (int v : d.h_max) w.i32(v);
    for (int v : d.max_depth) w.i32(v);
    w.i32(d.teacher_tokens);
    w.i32(d.teacher_dim);
    w.u64(d.init_seed);
}

SupernetDims get_dims(BinaryReader& r) {
    SupernetDims d;
    d.grid_size = r.i32();
    d.patch_size = r.i32();
    d.d_model.resize(r.u64());
    for (int& v : d.d_model) v = r.i32();
    d.d_state_max = r.i32();
    d.e_max.resize(d.d_model.size());
    for (int& v : d.e_max) v = r.i32();
    d.h_max.resize(d.d_model.size());
    for (int& v : d.h_max) v = r.i32();
    d.max_depth.resize(d.d_model.size());
    for (int& v : d.max_depth) v = r.i32();
    d.teacher_tokens = r.i32();
    d.teacher_dim = r.i32();
    d.init_seed = r.u64();
    return d;
}

void put_params(BinaryWriter& w, const SupernetParams& p) {
    put_dims(w, p.dims);
    for_each_tensor(const_cast<SupernetParams&>(p),
                    [&](const std::string&, MatrixXd& m) { w.matrix(m); });
}

SupernetParams get_params(BinaryReader& r) {
    const SupernetDims dims = get_dims(r);
    SupernetParams p = allocate_params(dims);
    for_each_tensor(p, [&](const std::string&, MatrixXd& m) {
        MatrixXd loaded = r.matrix();
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
            throw ChecksumError("checkpoint: tensor shape mismatch");
        m = std::move(loaded);
    });
    return p;
}

void put_genotype(BinaryWriter& w, const Genotype& g) {
    w.u64(g.integer_segment.size());
    for (int v : g.integer_segment) w.i32(v);
    w.str(depth_bits_string(g));
}

Genotype get_genotype(BinaryReader& r) {
    std::vector<int> ints(r.u64());
    for (int& v : ints) v = r.i32();
    return genotype_from_parts(ints, r.str());
}

void put_objectives(BinaryWriter& w, const ObjectiveVector& v) {
    w.f64(v.err);
    w.f64(v.latency_ms);
    w.f64(v.macs);
}

ObjectiveVector get_objectives(BinaryReader& r) {
    ObjectiveVector v;
    v.err = r.f64();
    v.latency_ms = r.f64();
    v.macs = r.f64();
    return v;
}

void put_population(BinaryWriter& w, const Population& p) {
    w.u64(p.members.size());
    for (const Genotype& g : p.members) put_genotype(w, g);
    w.u64(p.fitness.rows.size());
    for (const ObjectiveVector& v : p.fitness.rows) put_objectives(w, v);
}

Population get_population(BinaryReader& r) {
    Population p;
    p.members.resize(r.u64());
    for (Genotype& g : p.members) g = get_genotype(r);
    p.fitness.rows.resize(r.u64());
    for (ObjectiveVector& v : p.fitness.rows) v = get_objectives(r);
    return p;
}

void put_state(BinaryWriter& w, const SearchState& s) {
    w.u8(s.initialized ? 1 : 0);
    w.i32(s.next_generation);
    put_population(w, s.population);
    w.u64(s.archive.size());
    for (const auto& e : s.archive.entries()) {
        put_genotype(w, e.genotype);
        put_objectives(w, e.objectives);
    }
    w.u64(s.trajectory.records.size());
    for (const GenerationRecord& rec : s.trajectory.records) {
        w.i32(rec.generation);
        w.u64(rec.population.size());
        for (const Genotype& g : rec.population) put_genotype(w, g);
        w.u64(rec.fitness.rows.size());
        for (const ObjectiveVector& v : rec.fitness.rows) put_objectives(w, v);
        w.u64(rec.evaluated.size());
        for (const Genotype& g : rec.evaluated) put_genotype(w, g);
        w.u64(rec.evaluated_fitness.rows.size());
        for (const ObjectiveVector& v : rec.evaluated_fitness.rows)
            put_objectives(w, v);
        w.u64(rec.front0.size());
        for (int v : rec.front0) w.i32(v);
        w.f64(rec.archive_hv);
        w.f64(rec.archive_hv_norm);
        w.i32(rec.archive_size);
        w.f64(rec.time_per_gen_ms);
        w.i32(rec.evaluations);
        w.i32(rec.cache_hits);
    }
    put_objectives(w, s.hv_ref);
    put_objectives(w, s.hv_ideal);
    w.str(s.evo_rng.serialize());
}

SearchState get_state(BinaryReader& r) {
    SearchState s;
    s.initialized = r.u8() != 0;
    s.next_generation = r.i32();
    s.population = get_population(r);
    const std::uint64_t n_arch = r.u64();
    for (std::uint64_t i = 0; i < n_arch; ++i) {
        const Genotype g = get_genotype(r);
        const ObjectiveVector v = get_objectives(r);
        s.archive.insert(g, v);
    }
    s.trajectory.records.resize(r.u64());
    for (GenerationRecord& rec : s.trajectory.records) {
        rec.generation = r.i32();
        rec.population.resize(r.u64());
        for (Genotype& g : rec.population) g = get_genotype(r);
        rec.fitness.rows.resize(r.u64());
        for (ObjectiveVector& v : rec.fitness.rows) v = get_objectives(r);
        rec.evaluated.resize(r.u64());
        for (Genotype& g : rec.evaluated) g = get_genotype(r);
        rec.evaluated_fitness.rows.resize(r.u64());
        for (ObjectiveVector& v : rec.evaluated_fitness.rows) v = get_objectives(r);
        rec.front0.resize(r.u64());
        for (int& v : rec.front0) v = r.i32();
        rec.archive_hv = r.f64();
        rec.archive_hv_norm = r.f64();
        rec.archive_size = r.i32();
        rec.time_per_gen_ms = r.f64();
        rec.evaluations = r.i32();
        rec.cache_hits = r.i32();
    }
    s.hv_ref = get_objectives(r);
    s.hv_ideal = get_objectives(r);
    Rng rng;
    rng.deserialize(r.str());
    s.evo_rng = rng;
    return s;
}

// --- envelope ---

void write_file(const std::string& path, std::uint8_t kind,
                const std::string& payload) {
    std::string out;
    out.append(kMagic, 4);
    BinaryWriter header;
    header.u32(kFormatVersion);
    header.u8(kind);
    header.u64(payload.size());
    out += header.buffer();
    out += payload;
    BinaryWriter sum;
    sum.u64(fnv1a64(payload));
    out += sum.buffer();

    const std::filesystem::path target(path);
    if (target.has_parent_path())
        std::filesystem::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw EvonasError("checkpoint: cannot open " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw EvonasError("checkpoint: short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::string& path, std::uint8_t expected_kind) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw EvonasError("checkpoint: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    if (data.size() < 4 + 4 + 1 + 8 + 8)
        throw ChecksumError("checkpoint: file too short");
    if (std::memcmp(data.data(), kMagic, 4) != 0)
        throw UnsupportedCheckpoint("checkpoint: bad magic");
    BinaryReader header(std::string_view(data).substr(4, 13));
    const std::uint32_t version = header.u32();
    if (version != kFormatVersion)
        throw UnsupportedCheckpoint("checkpoint: format version " +
                                    std::to_string(version) + " unsupported");
    const std::uint8_t kind = header.u8();
    const std::uint64_t payload_len = header.u64();
    if (data.size() != 4 + 13 + payload_len + 8)
        throw ChecksumError("checkpoint: length mismatch");
    const std::string_view payload = std::string_view(data).substr(17, payload_len);
    BinaryReader tail(std::string_view(data).substr(17 + payload_len, 8));
    if (tail.u64() != fnv1a64(payload))
        throw ChecksumError("checkpoint: checksum failure");
    if (kind != expected_kind)
        throw UnsupportedCheckpoint("checkpoint: wrong kind for this command");
    return std::string(payload);
}

} // namespace

void save_train_checkpoint(const std::string& path, const TrainCheckpoint& ckpt) {
    BinaryWriter w;
    put_space(w, ckpt.space);
    put_params(w, ckpt.params);
    w.i32(ckpt.schedule_cursor);
    w.str(ckpt.rng_state);
    w.u64(ckpt.config_hash);
    write_file(path, kKindTrain, w.buffer());
}

TrainCheckpoint load_train_checkpoint(const std::string& path) {
    const std::string payload = read_file(path, kKindTrain);
    BinaryReader r(payload);
    TrainCheckpoint ckpt;
    ckpt.space = get_space(r);
    ckpt.params = get_params(r);
    ckpt.schedule_cursor = r.i32();
    ckpt.rng_state = r.str();
    ckpt.config_hash = r.u64();
    if (!r.exhausted()) throw ChecksumError("checkpoint: trailing bytes");
    return ckpt;
}

void save_search_checkpoint(const std::string& path, const SearchCheckpoint& ckpt) {
    BinaryWriter w;
    put_space(w, ckpt.space);
    put_params(w, ckpt.params);
    put_state(w, ckpt.state);
    w.u64(ckpt.config_hash);
    write_file(path, kKindSearch, w.buffer());
}

SearchCheckpoint load_search_checkpoint(const std::string& path) {
    const std::string payload = read_file(path, kKindSearch);
    BinaryReader r(payload);
    SearchCheckpoint ckpt;
    ckpt.space = get_space(r);
    ckpt.params = get_params(r);
    ckpt.state = get_state(r);
    ckpt.config_hash = r.u64();
    if (!r.exhausted()) throw ChecksumError("checkpoint: trailing bytes");
    return ckpt;
}

} // namespace evonas
