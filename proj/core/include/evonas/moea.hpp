#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "evonas/errors.hpp"
#include "evonas/search_space.hpp"

namespace evonas {

// One candidate's objectives, all minimized.
struct ObjectiveVector {
    double err = 0.0;        // validation prediction error
    double latency_ms = 0.0; // measured inference latency
    double macs = 0.0;       // analytic multiply-accumulate count

    std::array<double, 3> values() const { return {err, latency_ms, macs}; }
    bool finite() const;

    bool operator==(const ObjectiveVector&) const = default;
};

struct FitnessMatrix {
    std::vector<ObjectiveVector> rows;

    std::size_t size() const { return rows.size(); }
    void check() const; // throws InvalidObjective on NaN entries
};

struct Population {
    std::vector<Genotype> members;
    FitnessMatrix fitness; // empty until evaluated

    bool has_fitness() const { return fitness.size() == members.size() && !members.empty(); }
};

// Mutually non-dominated (genotype, objectives) entries. Insertion drops
// dominated newcomers and evicts entries the newcomer dominates.
class ParetoArchive {
public:
    struct Entry {
        Genotype genotype;
        ObjectiveVector objectives;
    };

    // Returns true when the candidate was added.
    bool insert(const Genotype& g, const ObjectiveVector& obj);

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<Entry> entries_;
};

// true iff a <= b componentwise with strict improvement somewhere.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b);

// Deb's fast non-dominated sort; fronts partition all row indices.
std::vector<std::vector<int>> fast_nondominated_sort(const FitnessMatrix& F);

// Per-objective boundary points get +inf; interior points the normalized
// neighbor-gap sum; zero-width objective ranges contribute 0.
std::vector<double> crowding_distance(const std::vector<ObjectiveVector>& front);

// NSGA-II environmental selection: whole fronts in rank order, straddling
// front truncated by descending crowding distance (population index breaks
// ties for determinism). Also reports which union indices survived.
Population survival(const Population& union_pop, int n_survivors);
std::vector<int> survival_indices(const FitnessMatrix& F, int n_survivors);

ParetoArchive pareto_front(const Population& pop);

// Exact hypervolume for up to three objectives (all minimized). Points that
// fail to dominate the reference are skipped and counted.
struct HypervolumeResult {
    double volume = 0.0;
    int skipped = 0;
};

HypervolumeResult hypervolume(const std::vector<std::vector<double>>& points,
                              const std::vector<double>& ref);
HypervolumeResult hypervolume(const std::vector<ObjectiveVector>& points,
                              const ObjectiveVector& ref);

// --- exports ---

// CSV with header: id,err,latency_ms,macs,rank,crowding
std::string fitness_csv(const FitnessMatrix& F);

constexpr double kInfinity = std::numeric_limits<double>::infinity();

} // namespace evonas
