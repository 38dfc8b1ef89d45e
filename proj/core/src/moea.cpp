#include "evonas/moea.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace evonas {

bool ObjectiveVector::finite() const {
    return std::isfinite(err) && std::isfinite(latency_ms) && std::isfinite(macs);
}

void FitnessMatrix::check() const {
    for (const ObjectiveVector& v : rows)
        if (std::isnan(v.err) || std::isnan(v.latency_ms) || std::isnan(v.macs))
            throw InvalidObjective("fitness matrix contains NaN");
}

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
    const auto av = a.values();
    const auto bv = b.values();
    bool strict = false;
    for (int k = 0; k < 3; ++k) {
        if (std::isnan(av[k]) || std::isnan(bv[k]))
            throw InvalidObjective("dominates: NaN objective");
        if (av[k] > bv[k]) return false;
        if (av[k] < bv[k]) strict = true;
    }
    return strict;
}

std::vector<std::vector<int>> fast_nondominated_sort(const FitnessMatrix& F) {
    const int n = static_cast<int>(F.size());
    std::vector<std::vector<int>> dominated(n);
    std::vector<int> dom_count(n, 0);

    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (dominates(F.rows[i], F.rows[j])) {
                dominated[i].push_back(j);
                ++dom_count[j];
            } else if (dominates(F.rows[j], F.rows[i])) {
                dominated[j].push_back(i);
                ++dom_count[i];
            }
        }
    }

    std::vector<std::vector<int>> fronts;
    std::vector<int> current;
    for (int i = 0; i < n; ++i)
        if (dom_count[i] == 0) current.push_back(i);
    while (!current.empty()) {
        fronts.push_back(current);
        std::vector<int> next;
        for (int i : current)
            for (int j : dominated[i])
                if (--dom_count[j] == 0) next.push_back(j);
        std::sort(next.begin(), next.end());
        current = std::move(next);
    }
    return fronts;
}

std::vector<double> crowding_distance(const std::vector<ObjectiveVector>& front) {
    const int n = static_cast<int>(front.size());
    std::vector<double> dist(n, 0.0);
    if (n <= 2) {
        std::fill(dist.begin(), dist.end(), kInfinity);
        return dist;
    }
    std::vector<int> order(n);
    for (int k = 0; k < 3; ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double va = front[a].values()[k];
            const double vb = front[b].values()[k];
            if (va != vb) return va < vb;
            return a < b;
        });
        const double lo = front[order.front()].values()[k];
        const double hi = front[order.back()].values()[k];
        dist[order.front()] = kInfinity;
        dist[order.back()] = kInfinity;
        const double width = hi - lo;
        if (width <= 0.0) continue; // degenerate objective: contributes 0
        for (int i = 1; i + 1 < n; ++i) {
            const int idx = order[i];
            if (dist[idx] == kInfinity) continue;
            const double gap = front[order[i + 1]].values()[k] -
                               front[order[i - 1]].values()[k];
            dist[idx] += gap / width;
        }
    }
    return dist;
}

std::vector<int> survival_indices(const FitnessMatrix& F, int n_survivors) {
    const int n = static_cast<int>(F.size());
    if (n_survivors > n)
        throw InsufficientPopulation("survival: n_survivors exceeds union size");
    const auto fronts = fast_nondominated_sort(F);

    std::vector<int> selected;
    selected.reserve(n_survivors);
    for (const auto& front : fronts) {
        if (static_cast<int>(selected.size()) + static_cast<int>(front.size()) <=
            n_survivors) {
            selected.insert(selected.end(), front.begin(), front.end());
            if (static_cast<int>(selected.size()) == n_survivors) break;
            continue;
        }
        // Straddling front: keep the most crowded-out first.
        std::vector<ObjectiveVector> objs;
        objs.reserve(front.size());
        for (int idx : front) objs.push_back(F.rows[idx]);
        const auto crowd = crowding_distance(objs);
        std::vector<int> order(front.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (crowd[a] != crowd[b]) return crowd[a] > crowd[b];
            return front[a] < front[b]; // stable tie-break by population index
        });
        const int need = n_survivors - static_cast<int>(selected.size());
        for (int i = 0; i < need; ++i) selected.push_back(front[order[i]]);
        break;
    }
    return selected;
}

Population survival(const Population& union_pop, int n_survivors) {
    if (!union_pop.has_fitness())
        throw IncompleteEvaluation("survival: union population lacks fitness");
    const auto idx = survival_indices(union_pop.fitness, n_survivors);
    Population out;
    out.members.reserve(idx.size());
    out.fitness.rows.reserve(idx.size());
    for (int i : idx) {
        out.members.push_back(union_pop.members[i]);
        out.fitness.rows.push_back(union_pop.fitness.rows[i]);
    }
    return out;
}

bool ParetoArchive::insert(const Genotype& g, const ObjectiveVector& obj) {
    for (const Entry& e : entries_) {
        if (dominates(e.objectives, obj)) return false;
        if (e.objectives == obj && e.genotype == g) return false; // exact duplicate
    }
    std::erase_if(entries_,
                  [&](const Entry& e) { return dominates(obj, e.objectives); });
    entries_.push_back({g, obj});
    return true;
}

ParetoArchive pareto_front(const Population& pop) {
    if (!pop.has_fitness())
        throw IncompleteEvaluation("pareto_front: population lacks fitness");
    const auto fronts = fast_nondominated_sort(pop.fitness);
    ParetoArchive archive;
    if (!fronts.empty())
        for (int i : fronts.front())
            archive.insert(pop.members[i], pop.fitness.rows[i]);
    return archive;
}

// --- hypervolume ---

namespace {

// 2D hypervolume of minimized points against ref, all strictly dominating.
double hv2d(std::vector<std::array<double, 2>> pts, double rx, double ry) {
    std::sort(pts.begin(), pts.end());
    double volume = 0.0;
    double best_y = ry;
    for (const auto& p : pts) {
        if (p[1] < best_y) {
            volume += (rx - p[0]) * (best_y - p[1]);
            best_y = p[1];
        }
    }
    return volume;
}

} // namespace

HypervolumeResult hypervolume(const std::vector<std::vector<double>>& points,
                              const std::vector<double>& ref) {
    const std::size_t dim = ref.size();
    if (dim < 1 || dim > 3)
        throw InvalidInput("hypervolume: supports 1 to 3 objectives");

    HypervolumeResult res;
    std::vector<std::vector<double>> pts;
    for (const auto& p : points) {
        if (p.size() != dim) throw ShapeError("hypervolume: point dimension mismatch");
        bool dominates_ref = true;
        for (std::size_t k = 0; k < dim; ++k)
            if (!(p[k] < ref[k])) { dominates_ref = false; break; }
        if (dominates_ref)
            pts.push_back(p);
        else
            ++res.skipped;
    }
    if (pts.empty()) return res;

    if (dim == 1) {
        double best = pts.front()[0];
        for (const auto& p : pts) best = std::min(best, p[0]);
        res.volume = ref[0] - best;
        return res;
    }
    if (dim == 2) {
        std::vector<std::array<double, 2>> p2;
        p2.reserve(pts.size());
        for (const auto& p : pts) p2.push_back({p[0], p[1]});
        res.volume = hv2d(std::move(p2), ref[0], ref[1]);
        return res;
    }

    // 3D: sweep slabs between consecutive z-levels; each slab contributes
    // (2D hypervolume of points with z <= slab bottom) x slab thickness.
    std::vector<double> zs;
    zs.reserve(pts.size() + 1);
    for (const auto& p : pts) zs.push_back(p[2]);
    std::sort(zs.begin(), zs.end());
    zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
    zs.push_back(ref[2]);

    double volume = 0.0;
    for (std::size_t i = 0; i + 1 < zs.size(); ++i) {
        const double z0 = zs[i], z1 = zs[i + 1];
        std::vector<std::array<double, 2>> slab;
        for (const auto& p : pts)
            if (p[2] <= z0) slab.push_back({p[0], p[1]});
        if (!slab.empty())
            volume += hv2d(std::move(slab), ref[0], ref[1]) * (z1 - z0);
    }
    res.volume = volume;
    return res;
}

HypervolumeResult hypervolume(const std::vector<ObjectiveVector>& points,
                              const ObjectiveVector& ref) {
    std::vector<std::vector<double>> pts;
    pts.reserve(points.size());
    for (const auto& p : points) pts.push_back({p.err, p.latency_ms, p.macs});
    return hypervolume(pts, {ref.err, ref.latency_ms, ref.macs});
}

// --- exports ---

std::string fitness_csv(const FitnessMatrix& F) {
    const auto fronts = fast_nondominated_sort(F);
    std::vector<int> rank(F.size(), 0);
    std::vector<double> crowd(F.size(), 0.0);
    for (std::size_t r = 0; r < fronts.size(); ++r) {
        std::vector<ObjectiveVector> objs;
        objs.reserve(fronts[r].size());
        for (int idx : fronts[r]) objs.push_back(F.rows[idx]);
        const auto cd = crowding_distance(objs);
        for (std::size_t i = 0; i < fronts[r].size(); ++i) {
            rank[fronts[r][i]] = static_cast<int>(r);
            crowd[fronts[r][i]] = cd[i];
        }
    }
    std::string out = "id,err,latency_ms,macs,rank,crowding\n";
    char line[256];
    for (std::size_t i = 0; i < F.size(); ++i) {
        const ObjectiveVector& v = F.rows[i];
        std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%d,%.17g\n", i,
                      v.err, v.latency_ms, v.macs, rank[i], crowd[i]);
        out += line;
    }
    return out;
}

} // namespace evonas
