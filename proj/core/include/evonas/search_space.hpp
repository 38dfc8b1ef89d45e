#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evonas/errors.hpp"
#include "evonas/rng.hpp"

namespace evonas {

// Four-dimensional encoder search space: per-stage state dimension, content
// expansion factor, MLP expansion ratio, and block depth. Candidate lists
// are strictly increasing; depth is encoded per stage as a prefix of active
// block bits.
struct SearchSpace {
    std::vector<int> d_state_candidates;
    std::vector<double> ssd_expand_candidates;
    std::vector<double> mlp_ratio_candidates;
    std::vector<int> max_depth_per_stage;
    int num_stages = 0;

    // Candidate sets from the published search space; four stages with a
    // deeper third stage.
    static SearchSpace paper_default();

    // Scaled-down space small enough to enumerate exhaustively in tests.
    static SearchSpace micro();

    void check() const; // throws InvalidConfig on malformed candidate lists

    int genes_per_stage() const { return 3; }
    int integer_genes() const { return num_stages * genes_per_stage(); }
    int total_depth_bits() const;
    int depth_offset(int stage) const; // first bit index of a stage's slice

    int max_d_state() const { return d_state_candidates.back(); }
    double max_ssd_expand() const { return ssd_expand_candidates.back(); }
    double max_mlp_ratio() const { return mlp_ratio_candidates.back(); }

    // Number of distinct architectures (for exhaustive enumeration).
    std::uint64_t cardinality() const;

    bool operator==(const SearchSpace&) const = default;
};

// Hybrid encoding: integer segment holds candidate-set indices as per-stage
// (d_state, ssd_expand, mlp_ratio) triples; depth segment holds one bit per
// potential block, prefix-coded within each stage.
struct Genotype {
    std::vector<int> integer_segment;
    std::vector<std::uint8_t> depth_segment;

    bool operator==(const Genotype&) const = default;

    // Stable identity for dedup caching and logs: ints then bit string.
    std::string key() const;
};

struct StageConfig {
    int d_state = 0;
    double ssd_expand = 0.0;
    double mlp_ratio = 0.0;
    int depth = 0;

    bool operator==(const StageConfig&) const = default;
};

struct ArchConfig {
    std::vector<StageConfig> stages;

    bool operator==(const ArchConfig&) const = default;
};

// --- codec ---

ArchConfig decode(const Genotype& g, const SearchSpace& space);
Genotype encode(const ArchConfig& cfg, const SearchSpace& space);
bool validate(const Genotype& g, const SearchSpace& space);

Genotype random_genotype(const SearchSpace& space, Rng& rng);

ArchConfig maximal_config(const SearchSpace& space);
ArchConfig minimal_config(const SearchSpace& space);

// Enumerate the whole space in lexicographic genotype order.
std::vector<ArchConfig> enumerate_space(const SearchSpace& space);

// --- genetic operators ---
// All operators map valid genotypes to valid genotypes and are pure
// functions of (inputs, rng state).

// Swaps the integer-segment slice between two cut points; depth untouched.
std::pair<Genotype, Genotype> two_point_crossover_int(
    const Genotype& a, const Genotype& b, const SearchSpace& space, Rng& rng);

// Perturbs each integer gene with probability p_gene in continuous index
// space (distribution index eta_m), discretized so a firing gene always
// moves when the candidate set has at least two entries.
Genotype polynomial_mutation_int(const Genotype& g, const SearchSpace& space,
                                 double eta_m, double p_gene, Rng& rng);

// Exchanges per-stage depth counts with probability 1/2, re-encoded as
// prefix bits; integer segments untouched.
std::pair<Genotype, Genotype> uniform_crossover_depth(
    const Genotype& a, const Genotype& b, const SearchSpace& space, Rng& rng);

// Per stage, with probability p_stage resamples depth uniformly over the
// legal values excluding the current one.
Genotype bitflip_mutation_depth(const Genotype& g, const SearchSpace& space,
                                double p_stage, Rng& rng);

// --- serialization helpers (checkpoint + trajectory logs) ---

std::string depth_bits_string(const Genotype& g);
Genotype genotype_from_parts(const std::vector<int>& integer_segment,
                             const std::string& depth_bits);

} // namespace evonas
