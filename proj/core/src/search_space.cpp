#include "evonas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace evonas {

namespace {

constexpr double kValueTol = 1e-12;

int find_candidate(const std::vector<int>& cands, int value) {
    for (std::size_t i = 0; i < cands.size(); ++i)
        if (cands[i] == value) return static_cast<int>(i);
    return -1;
}

int find_candidate(const std::vector<double>& cands, double value) {
    for (std::size_t i = 0; i < cands.size(); ++i)
        if (std::abs(cands[i] - value) <= kValueTol) return static_cast<int>(i);
    return -1;
}

template <typename T>
bool strictly_increasing(const std::vector<T>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i - 1] < v[i])) return false;
    return true;
}

} // namespace

SearchSpace SearchSpace::paper_default() {
    SearchSpace s;
    s.d_state_candidates = {16, 32, 48, 64};
    s.ssd_expand_candidates = {0.5, 1.0, 2.0, 3.0, 4.0};
    s.mlp_ratio_candidates = {0.5, 1.0, 2.0, 3.0, 3.5, 4.0};
    s.max_depth_per_stage = {2, 2, 4, 2};
    s.num_stages = 4;
    return s;
}

SearchSpace SearchSpace::micro() {
    SearchSpace s;
    s.d_state_candidates = {2, 4};
    s.ssd_expand_candidates = {0.5, 1.0};
    s.mlp_ratio_candidates = {0.5, 1.0};
    s.max_depth_per_stage = {2, 2};
    s.num_stages = 2;
    return s;
}

void SearchSpace::check() const {
    if (num_stages < 1) throw InvalidConfig("search space: num_stages must be >= 1");
    if (static_cast<int>(max_depth_per_stage.size()) != num_stages)
        throw InvalidConfig("search space: max_depth_per_stage size != num_stages");
    if (d_state_candidates.empty() || ssd_expand_candidates.empty() ||
        mlp_ratio_candidates.empty())
        throw InvalidConfig("search space: empty candidate list");
    if (!strictly_increasing(d_state_candidates) ||
        !strictly_increasing(ssd_expand_candidates) ||
        !strictly_increasing(mlp_ratio_candidates))
        throw InvalidConfig("search space: candidate lists must be strictly increasing");
    for (int d : max_depth_per_stage)
        if (d < 1) throw InvalidConfig("search space: max depth per stage must be >= 1");
    for (int v : d_state_candidates)
        if (v < 1) throw InvalidConfig("search space: d_state candidates must be positive");
    for (double v : ssd_expand_candidates)
        if (!(v > 0.0)) throw InvalidConfig("search space: ssd_expand candidates must be positive");
    for (double v : mlp_ratio_candidates)
        if (!(v > 0.0)) throw InvalidConfig("search space: mlp_ratio candidates must be positive");
}

int SearchSpace::total_depth_bits() const {
    return std::accumulate(max_depth_per_stage.begin(), max_depth_per_stage.end(), 0);
}

int SearchSpace::depth_offset(int stage) const {
    return std::accumulate(max_depth_per_stage.begin(),
                           max_depth_per_stage.begin() + stage, 0);
}

std::uint64_t SearchSpace::cardinality() const {
    std::uint64_t n = 1;
    for (int s = 0; s < num_stages; ++s) {
        n *= d_state_candidates.size();
        n *= ssd_expand_candidates.size();
        n *= mlp_ratio_candidates.size();
        n *= static_cast<std::uint64_t>(max_depth_per_stage[s]);
    }
    return n;
}

std::string Genotype::key() const {
    std::ostringstream os;
    for (int v : integer_segment) os << v << ',';
    os << '|';
    for (std::uint8_t b : depth_segment) os << (b ? '1' : '0');
    return os.str();
}

// --- codec ---

bool validate(const Genotype& g, const SearchSpace& space) {
    if (static_cast<int>(g.integer_segment.size()) != space.integer_genes())
        return false;
    if (static_cast<int>(g.depth_segment.size()) != space.total_depth_bits())
        return false;
    const std::size_t sizes[3] = {space.d_state_candidates.size(),
                                  space.ssd_expand_candidates.size(),
                                  space.mlp_ratio_candidates.size()};
    for (int s = 0; s < space.num_stages; ++s) {
        for (int k = 0; k < 3; ++k) {
            const int idx = g.integer_segment[s * 3 + k];
            if (idx < 0 || idx >= static_cast<int>(sizes[k])) return false;
        }
        const int off = space.depth_offset(s);
        const int len = space.max_depth_per_stage[s];
        // Active bits must form a non-empty prefix.
        bool seen_zero = false;
        int active = 0;
        for (int i = 0; i < len; ++i) {
            const std::uint8_t bit = g.depth_segment[off + i];
            if (bit != 0 && bit != 1) return false;
            if (bit) {
                if (seen_zero) return false;
                ++active;
            } else {
                seen_zero = true;
            }
        }
        if (active == 0) return false;
    }
    return true;
}

ArchConfig decode(const Genotype& g, const SearchSpace& space) {
    if (!validate(g, space)) throw InvalidGenotype("decode: genotype invalid for space");
    ArchConfig cfg;
    cfg.stages.resize(space.num_stages);
    for (int s = 0; s < space.num_stages; ++s) {
        StageConfig& st = cfg.stages[s];
        st.d_state = space.d_state_candidates[g.integer_segment[s * 3 + 0]];
        st.ssd_expand = space.ssd_expand_candidates[g.integer_segment[s * 3 + 1]];
        st.mlp_ratio = space.mlp_ratio_candidates[g.integer_segment[s * 3 + 2]];
        const int off = space.depth_offset(s);
        int depth = 0;
        for (int i = 0; i < space.max_depth_per_stage[s]; ++i)
            depth += g.depth_segment[off + i] ? 1 : 0;
        st.depth = depth;
    }
    return cfg;
}

namespace {

void write_prefix_depth(Genotype& g, const SearchSpace& space, int stage, int depth) {
    const int off = space.depth_offset(stage);
    for (int i = 0; i < space.max_depth_per_stage[stage]; ++i)
        g.depth_segment[off + i] = (i < depth) ? 1 : 0;
}

} // namespace

Genotype encode(const ArchConfig& cfg, const SearchSpace& space) {
    if (static_cast<int>(cfg.stages.size()) != space.num_stages)
        throw NotInSearchSpace("encode: stage count mismatch");
    Genotype g;
    g.integer_segment.resize(space.integer_genes());
    g.depth_segment.assign(space.total_depth_bits(), 0);
    for (int s = 0; s < space.num_stages; ++s) {
        const StageConfig& st = cfg.stages[s];
        const int i0 = find_candidate(space.d_state_candidates, st.d_state);
        const int i1 = find_candidate(space.ssd_expand_candidates, st.ssd_expand);
        const int i2 = find_candidate(space.mlp_ratio_candidates, st.mlp_ratio);
        if (i0 < 0 || i1 < 0 || i2 < 0)
            throw NotInSearchSpace("encode: value not in candidate set");
        if (st.depth < 1 || st.depth > space.max_depth_per_stage[s])
            throw NotInSearchSpace("encode: depth outside [1, max_depth]");
        g.integer_segment[s * 3 + 0] = i0;
        g.integer_segment[s * 3 + 1] = i1;
        g.integer_segment[s * 3 + 2] = i2;
        write_prefix_depth(g, space, s, st.depth);
    }
    return g;
}

Genotype random_genotype(const SearchSpace& space, Rng& rng) {
    Genotype g;
    g.integer_segment.resize(space.integer_genes());
    g.depth_segment.assign(space.total_depth_bits(), 0);
    for (int s = 0; s < space.num_stages; ++s) {
        g.integer_segment[s * 3 + 0] =
            static_cast<int>(rng.uniform_index(space.d_state_candidates.size()));
        g.integer_segment[s * 3 + 1] =
            static_cast<int>(rng.uniform_index(space.ssd_expand_candidates.size()));
        g.integer_segment[s * 3 + 2] =
            static_cast<int>(rng.uniform_index(space.mlp_ratio_candidates.size()));
        const int depth = rng.uniform_int(1, space.max_depth_per_stage[s]);
        write_prefix_depth(g, space, s, depth);
    }
    return g;
}

ArchConfig maximal_config(const SearchSpace& space) {
    ArchConfig cfg;
    cfg.stages.resize(space.num_stages);
    for (int s = 0; s < space.num_stages; ++s) {
        cfg.stages[s] = {space.d_state_candidates.back(),
                         space.ssd_expand_candidates.back(),
                         space.mlp_ratio_candidates.back(),
                         space.max_depth_per_stage[s]};
    }
    return cfg;
}

ArchConfig minimal_config(const SearchSpace& space) {
    ArchConfig cfg;
    cfg.stages.resize(space.num_stages);
    for (int s = 0; s < space.num_stages; ++s) {
        cfg.stages[s] = {space.d_state_candidates.front(),
                         space.ssd_expand_candidates.front(),
                         space.mlp_ratio_candidates.front(), 1};
    }
    return cfg;
}

std::vector<ArchConfig> enumerate_space(const SearchSpace& space) {
    std::vector<ArchConfig> out;
    out.reserve(space.cardinality());
    ArchConfig cfg;
    cfg.stages.resize(space.num_stages);

    // Odometer over (d_state, ssd, mlp, depth) per stage.
    struct Counter { int i0 = 0, i1 = 0, i2 = 0, d = 1; };
    std::vector<Counter> ctr(space.num_stages);
    while (true) {
        for (int s = 0; s < space.num_stages; ++s) {
            cfg.stages[s] = {space.d_state_candidates[ctr[s].i0],
                             space.ssd_expand_candidates[ctr[s].i1],
                             space.mlp_ratio_candidates[ctr[s].i2], ctr[s].d};
        }
        out.push_back(cfg);
        int s = space.num_stages - 1;
        for (; s >= 0; --s) {
            Counter& c = ctr[s];
            if (++c.d <= space.max_depth_per_stage[s]) break;
            c.d = 1;
            if (++c.i2 < static_cast<int>(space.mlp_ratio_candidates.size())) break;
            c.i2 = 0;
            if (++c.i1 < static_cast<int>(space.ssd_expand_candidates.size())) break;
            c.i1 = 0;
            if (++c.i0 < static_cast<int>(space.d_state_candidates.size())) break;
            c.i0 = 0;
        }
        if (s < 0) break;
    }
    return out;
}

// --- genetic operators ---

namespace {

void require_same_shape(const Genotype& a, const Genotype& b, const SearchSpace& space) {
    if (!validate(a, space) || !validate(b, space) ||
        a.integer_segment.size() != b.integer_segment.size() ||
        a.depth_segment.size() != b.depth_segment.size())
        throw SpaceMismatch("crossover: parents do not share a search space");
}

int stage_depth(const Genotype& g, const SearchSpace& space, int stage) {
    const int off = space.depth_offset(stage);
    int d = 0;
    for (int i = 0; i < space.max_depth_per_stage[stage]; ++i)
        d += g.depth_segment[off + i] ? 1 : 0;
    return d;
}

} // namespace

std::pair<Genotype, Genotype> two_point_crossover_int(
    const Genotype& a, const Genotype& b, const SearchSpace& space, Rng& rng) {
    require_same_shape(a, b, space);
    const int len = static_cast<int>(a.integer_segment.size());
    int c1 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(len) + 1));
    int c2 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(len) + 1));
    if (c1 > c2) std::swap(c1, c2);
    Genotype ca = a, cb = b;
    for (int i = c1; i < c2; ++i)
        std::swap(ca.integer_segment[i], cb.integer_segment[i]);
    return {std::move(ca), std::move(cb)};
}

Genotype polynomial_mutation_int(const Genotype& g, const SearchSpace& space,
                                 double eta_m, double p_gene, Rng& rng) {
    if (!validate(g, space)) throw InvalidGenotype("mutation: invalid genotype");
    const std::size_t sizes[3] = {space.d_state_candidates.size(),
                                  space.ssd_expand_candidates.size(),
                                  space.mlp_ratio_candidates.size()};
    Genotype out = g;
    for (std::size_t i = 0; i < out.integer_segment.size(); ++i) {
        const int n = static_cast<int>(sizes[i % 3]);
        const double u_fire = rng.uniform();
        if (n < 2) continue; // single candidate: the only legal value
        if (u_fire >= p_gene) continue;

        // Deb's bounded polynomial perturbation in index space [0, n-1].
        const int x = out.integer_segment[i];
        const double hi = static_cast<double>(n - 1);
        const double u = rng.uniform();
        const double mpow = 1.0 / (eta_m + 1.0);
        double delta;
        if (u < 0.5) {
            const double dl = x / hi; // normalized room below
            const double val = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - dl, eta_m + 1.0);
            delta = std::pow(val, mpow) - 1.0;
        } else {
            const double du = (hi - x) / hi;
            const double val =
                2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - du, eta_m + 1.0);
            delta = 1.0 - std::pow(val, mpow);
        }
        double y = x + delta * hi;

        // Discretize: round half away from the current value, enforce a
        // minimum step of one so a firing gene always changes, and flip
        // direction at a blocked bound.
        int target;
        if (y > x)
            target = static_cast<int>(std::floor(y + 0.5)); // .5 rounds up, away from x
        else if (y < x)
            target = static_cast<int>(std::ceil(y - 0.5)); // .5 rounds down, away from x
        else
            target = x;
        if (target == x) target = (u < 0.5) ? x - 1 : x + 1;
        if (target < 0) target = x + (x - target); // reflect step above x
        if (target > n - 1) target = x - (target - (n - 1));
        target = std::clamp(target, 0, n - 1);
        if (target == x) target = (x == 0) ? 1 : x - 1;
        out.integer_segment[i] = target;
    }
    return out;
}

std::pair<Genotype, Genotype> uniform_crossover_depth(
    const Genotype& a, const Genotype& b, const SearchSpace& space, Rng& rng) {
    require_same_shape(a, b, space);
    Genotype ca = a, cb = b;
    for (int s = 0; s < space.num_stages; ++s) {
        const bool swap_stage = rng.bernoulli(0.5);
        if (!swap_stage) continue;
        const int da = stage_depth(a, space, s);
        const int db = stage_depth(b, space, s);
        write_prefix_depth(ca, space, s, db);
        write_prefix_depth(cb, space, s, da);
    }
    return {std::move(ca), std::move(cb)};
}

Genotype bitflip_mutation_depth(const Genotype& g, const SearchSpace& space,
                                double p_stage, Rng& rng) {
    if (!validate(g, space)) throw InvalidGenotype("mutation: invalid genotype");
    Genotype out = g;
    for (int s = 0; s < space.num_stages; ++s) {
        const int max_d = space.max_depth_per_stage[s];
        const bool fire = rng.bernoulli(p_stage);
        if (max_d < 2 || !fire) continue;
        const int cur = stage_depth(out, space, s);
        // Uniform over legal depths excluding the current one.
        int pick = rng.uniform_int(1, max_d - 1);
        if (pick >= cur) ++pick;
        write_prefix_depth(out, space, s, pick);
    }
    return out;
}

// --- serialization helpers ---

std::string depth_bits_string(const Genotype& g) {
    std::string s;
    s.reserve(g.depth_segment.size());
    for (std::uint8_t b : g.depth_segment) s.push_back(b ? '1' : '0');
    return s;
}

Genotype genotype_from_parts(const std::vector<int>& integer_segment,
                             const std::string& depth_bits) {
    Genotype g;
    g.integer_segment = integer_segment;
    g.depth_segment.reserve(depth_bits.size());
    for (char c : depth_bits) {
        if (c != '0' && c != '1')
            throw InvalidGenotype("genotype_from_parts: bad depth bit");
        g.depth_segment.push_back(c == '1' ? 1 : 0);
    }
    return g;
}

} // namespace evonas
