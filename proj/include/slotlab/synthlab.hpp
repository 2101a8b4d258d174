#pragma once

// Latent bin grids with Cartesian in/out-of-domain splits, deterministic
// dataset sampling against a ground-truth generator, binary + CSV dataset
// serialization, and the pixel-partition generator family (each output
// coordinate owned by exactly one slot).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slotlab/errors.hpp"
#include "slotlab/generator.hpp"
#include "slotlab/rng.hpp"
#include "slotlab/slots.hpp"

namespace slotlab {

// One axis-aligned box of slot values in R^m; lo == hi encodes an anchor value.
struct LatentBin {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
};

// One bin index per slot.
using BinTuple = std::vector<int>;

namespace detail {

inline bool bins_overlap(const LatentBin& a, const LatentBin& b) {
    bool strict = true;
    for (Eigen::Index j = 0; j < a.lo.size(); ++j)
        if (!(a.lo[j] < b.hi[j] && b.lo[j] < a.hi[j])) strict = false;
    if (strict) return true;
    return (a.lo.array() == b.lo.array()).all() && (a.hi.array() == b.hi.array()).all();
}

} // namespace detail

// Per-slot bin lists plus the in-domain mask over bin tuples. The out-of-domain
// set is never stored: it is always derived as product-minus-mask.
struct SlotBinGrid {
    SlotStructure slots;
    std::vector<std::vector<LatentBin>> bins; // bins[k]: bins of slot k
    std::set<BinTuple> id_mask;

    SlotBinGrid() = default;
    SlotBinGrid(SlotStructure s, std::vector<std::vector<LatentBin>> b, std::set<BinTuple> mask)
        : slots(s), bins(std::move(b)), id_mask(std::move(mask)) {
        validate();
    }

    void validate() const {
        if (static_cast<int>(bins.size()) != slots.K)
            throw DimensionError("SlotBinGrid: need one bin list per slot");
        for (int k = 0; k < slots.K; ++k) {
            const auto& bk = bins[static_cast<std::size_t>(k)];
            if (bk.empty()) throw ConfigError("SlotBinGrid: slot has no bins");
            for (const auto& bin : bk) {
                if (bin.lo.size() != slots.m || bin.hi.size() != slots.m)
                    throw DimensionError("SlotBinGrid: bin bounds must have m entries");
                if ((bin.hi.array() < bin.lo.array()).any())
                    throw ConfigError("SlotBinGrid: bin upper bound below lower bound");
            }
            for (std::size_t a = 0; a < bk.size(); ++a)
                for (std::size_t b = a + 1; b < bk.size(); ++b)
                    if (detail::bins_overlap(bk[a], bk[b]))
                        throw ConfigError("SlotBinGrid: overlapping bins within a slot");
        }
        if (id_mask.empty()) throw ConfigError("SlotBinGrid: in-domain mask is empty");
        for (const auto& t : id_mask) {
            if (static_cast<int>(t.size()) != slots.K)
                throw DimensionError("SlotBinGrid: mask tuple arity != slot count");
            for (int k = 0; k < slots.K; ++k)
                if (t[static_cast<std::size_t>(k)] < 0 ||
                    t[static_cast<std::size_t>(k)] >=
                        static_cast<int>(bins[static_cast<std::size_t>(k)].size()))
                    throw ConfigError("SlotBinGrid: mask tuple references unknown bin");
        }
    }
};

// Explicit enumeration of both sides of the split, in lexicographic order.
struct SplitSets {
    std::vector<BinTuple> id;
    std::vector<BinTuple> ood;
};

// Enumerates the full bin-tuple product and partitions it by mask membership.
// Every declared bin must occur in at least one in-domain tuple: a bin visible
// only through out-of-domain tuples would break the marginal support condition
// the split semantics rest on.
inline SplitSets make_split(const SlotBinGrid& grid) {
    grid.validate();
    for (int k = 0; k < grid.slots.K; ++k) {
        std::set<int> seen;
        for (const auto& t : grid.id_mask) seen.insert(t[static_cast<std::size_t>(k)]);
        for (int b = 0; b < static_cast<int>(grid.bins[static_cast<std::size_t>(k)].size()); ++b)
            if (!seen.count(b)) {
                std::ostringstream os;
                os << "make_split: slot " << k << " bin " << b
                   << " never occurs in an in-domain tuple";
                throw SupportError(os.str(), k);
            }
    }
    SplitSets out;
    BinTuple t(static_cast<std::size_t>(grid.slots.K), 0);
    for (;;) {
        (grid.id_mask.count(t) ? out.id : out.ood).push_back(t);
        int k = grid.slots.K - 1;
        for (; k >= 0; --k) {
            std::size_t ks = static_cast<std::size_t>(k);
            if (++t[ks] < static_cast<int>(grid.bins[ks].size())) break;
            t[ks] = 0;
        }
        if (k < 0) break;
    }
    return out;
}

// One sampled observation; the bin tuple doubles as the per-slot class label.
struct DatasetRecord {
    Eigen::VectorXd z;
    Eigen::VectorXd x;
    BinTuple bins;
    bool ood = false;
};

struct DatasetSplit {
    std::uint64_t generator_hash = 0;
    std::uint64_t seed = 0;
    int d_x = 0;
    SlotBinGrid grid;
    std::vector<DatasetRecord> records; // in-domain block first, then out-of-domain

    int n_id() const {
        return static_cast<int>(std::count_if(records.begin(), records.end(),
                                              [](const DatasetRecord& r) { return !r.ood; }));
    }
    int n_ood() const { return static_cast<int>(records.size()) - n_id(); }
};

// Draws records with one RNG stream per record index, so the dataset is a pure
// function of (generator, grid, counts, seed) and record order is fixed.
inline DatasetSplit sample_dataset(const InteractionGenerator& G, const SlotBinGrid& grid,
                                   int n_id, int n_ood, std::uint64_t seed) {
    if (G.slots.K != grid.slots.K || G.slots.m != grid.slots.m)
        throw DimensionError("sample_dataset: generator and grid slot structures differ");
    if (n_id < 0 || n_ood < 0) throw ConfigError("sample_dataset: negative sample count");
    SplitSets split = make_split(grid);
    if (n_ood > 0 && split.ood.empty())
        throw ConfigError("sample_dataset: out-of-domain samples requested but the split is empty");

    DatasetSplit ds;
    ds.generator_hash = generator_hash(G);
    ds.seed = seed;
    ds.d_x = G.d_x;
    ds.grid = grid;
    ds.records.reserve(static_cast<std::size_t>(n_id + n_ood));
    for (int i = 0; i < n_id + n_ood; ++i) {
        bool ood = i >= n_id;
        const auto& pool = ood ? split.ood : split.id;
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        DatasetRecord rec;
        rec.ood = ood;
        rec.bins = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
        rec.z.resize(grid.slots.d_z());
        for (int k = 0; k < grid.slots.K; ++k) {
            const LatentBin& bin =
                grid.bins[static_cast<std::size_t>(k)][static_cast<std::size_t>(
                    rec.bins[static_cast<std::size_t>(k)])];
            for (int j = 0; j < grid.slots.m; ++j)
                rec.z[static_cast<Eigen::Index>(k * grid.slots.m + j)] =
                    rng.uniform(bin.lo[j], bin.hi[j]);
        }
        rec.x = G.eval(rec.z);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Serialization: fixed-width binary records under a self-describing header,
// plus a human-readable CSV export.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    os.write(b, 8);
}
inline void put_f64(std::ostream& os, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    os.write(b, 8);
}
inline std::uint32_t get_u32(std::istream& is) {
    char b[4];
    if (!is.read(b, 4)) throw IoError("dataset read: truncated stream");
    std::uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}
inline std::uint64_t get_u64(std::istream& is) {
    char b[8];
    if (!is.read(b, 8)) throw IoError("dataset read: truncated stream");
    std::uint64_t v;
    std::memcpy(&v, b, 8);
    return v;
}
inline double get_f64(std::istream& is) {
    char b[8];
    if (!is.read(b, 8)) throw IoError("dataset read: truncated stream");
    double v;
    std::memcpy(&v, b, 8);
    return v;
}

} // namespace detail

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

inline void write_dataset(const DatasetSplit& ds, std::ostream& os) {
    os.write("SLDS", 4);
    detail::put_u32(os, kDatasetFormatVersion);
    detail::put_u64(os, ds.generator_hash);
    detail::put_u64(os, ds.seed);
    detail::put_u32(os, static_cast<std::uint32_t>(ds.grid.slots.K));
    detail::put_u32(os, static_cast<std::uint32_t>(ds.grid.slots.m));
    detail::put_u32(os, static_cast<std::uint32_t>(ds.d_x));
    for (const auto& bk : ds.grid.bins) {
        detail::put_u32(os, static_cast<std::uint32_t>(bk.size()));
        for (const auto& bin : bk) {
            for (Eigen::Index j = 0; j < bin.lo.size(); ++j) detail::put_f64(os, bin.lo[j]);
            for (Eigen::Index j = 0; j < bin.hi.size(); ++j) detail::put_f64(os, bin.hi[j]);
        }
    }
    detail::put_u32(os, static_cast<std::uint32_t>(ds.grid.id_mask.size()));
    for (const auto& t : ds.grid.id_mask)
        for (int b : t) detail::put_u32(os, static_cast<std::uint32_t>(b));
    detail::put_u64(os, static_cast<std::uint64_t>(ds.records.size()));
    for (const auto& r : ds.records) {
        for (Eigen::Index j = 0; j < r.z.size(); ++j) detail::put_f64(os, r.z[j]);
        for (Eigen::Index j = 0; j < r.x.size(); ++j) detail::put_f64(os, r.x[j]);
        for (int b : r.bins) detail::put_u32(os, static_cast<std::uint32_t>(b));
        os.put(r.ood ? '\1' : '\0');
    }
    if (!os) throw IoError("dataset write: stream failure");
}

inline void write_dataset_file(const DatasetSplit& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("dataset write: cannot open " + path);
    write_dataset(ds, os);
}

inline DatasetSplit read_dataset(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SLDS", 4) != 0)
        throw IoError("dataset read: bad magic");
    if (detail::get_u32(is) != kDatasetFormatVersion)
        throw IoError("dataset read: unsupported format version");
    DatasetSplit ds;
    ds.generator_hash = detail::get_u64(is);
    ds.seed = detail::get_u64(is);
    int K = static_cast<int>(detail::get_u32(is));
    int m = static_cast<int>(detail::get_u32(is));
    ds.d_x = static_cast<int>(detail::get_u32(is));
    ds.grid.slots = SlotStructure(K, m);
    ds.grid.bins.resize(static_cast<std::size_t>(K));
    for (auto& bk : ds.grid.bins) {
        bk.resize(detail::get_u32(is));
        for (auto& bin : bk) {
            bin.lo.resize(m);
            bin.hi.resize(m);
            for (int j = 0; j < m; ++j) bin.lo[j] = detail::get_f64(is);
            for (int j = 0; j < m; ++j) bin.hi[j] = detail::get_f64(is);
        }
    }
    std::uint32_t mask_n = detail::get_u32(is);
    for (std::uint32_t i = 0; i < mask_n; ++i) {
        BinTuple t(static_cast<std::size_t>(K));
        for (auto& b : t) b = static_cast<int>(detail::get_u32(is));
        ds.grid.id_mask.insert(std::move(t));
    }
    ds.grid.validate();
    std::uint64_t n = detail::get_u64(is);
    ds.records.resize(n);
    for (auto& r : ds.records) {
        r.z.resize(K * m);
        r.x.resize(ds.d_x);
        for (Eigen::Index j = 0; j < r.z.size(); ++j) r.z[j] = detail::get_f64(is);
        for (Eigen::Index j = 0; j < r.x.size(); ++j) r.x[j] = detail::get_f64(is);
        r.bins.resize(static_cast<std::size_t>(K));
        for (auto& b : r.bins) b = static_cast<int>(detail::get_u32(is));
        int tag = is.get();
        if (tag != 0 && tag != 1) throw IoError("dataset read: bad split tag");
        r.ood = tag == 1;
    }
    return ds;
}

inline DatasetSplit read_dataset_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("dataset read: cannot open " + path);
    return read_dataset(is);
}

// CSV companion: full z, x truncated to the first eight coordinates. Numbers
// use max round-trip precision so the export is deterministic.
inline void write_dataset_csv(const DatasetSplit& ds, std::ostream& os) {
    int d_z = ds.grid.slots.d_z();
    int x_cols = std::min(ds.d_x, 8);
    os << "index,tag";
    for (int k = 0; k < ds.grid.slots.K; ++k) os << ",bin_" << k;
    for (int j = 0; j < d_z; ++j) os << ",z_" << j;
    for (int j = 0; j < x_cols; ++j) os << ",x_" << j;
    os << "\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        os << i << "," << (r.ood ? "OOD" : "ID");
        for (int b : r.bins) os << "," << b;
        for (Eigen::Index j = 0; j < r.z.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", r.z[j]);
            os << "," << buf;
        }
        for (int j = 0; j < x_cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", r.x[j]);
            os << "," << buf;
        }
        os << "\n";
    }
    if (!os) throw IoError("dataset csv write: stream failure");
}

// ---------------------------------------------------------------------------
// Grid construction helpers
// ---------------------------------------------------------------------------

// Equal-width bins per slot over [lo, hi]^m, same subdivision in every slot
// coordinate. Touching endpoints are fine: sampling is half-open.
inline std::vector<std::vector<LatentBin>> uniform_bins(const SlotStructure& slots,
                                                        const std::vector<int>& bins_per_slot,
                                                        double lo, double hi) {
    if (static_cast<int>(bins_per_slot.size()) != slots.K)
        throw DimensionError("uniform_bins: need one bin count per slot");
    if (!(hi > lo)) throw ConfigError("uniform_bins: need hi > lo");
    std::vector<std::vector<LatentBin>> bins(static_cast<std::size_t>(slots.K));
    for (int k = 0; k < slots.K; ++k) {
        int nb = bins_per_slot[static_cast<std::size_t>(k)];
        if (nb < 1) throw ConfigError("uniform_bins: need at least one bin per slot");
        double w = (hi - lo) / nb;
        for (int b = 0; b < nb; ++b) {
            LatentBin bin;
            bin.lo = Eigen::VectorXd::Constant(slots.m, lo + w * b);
            bin.hi = Eigen::VectorXd::Constant(slots.m, lo + w * (b + 1));
            bins[static_cast<std::size_t>(k)].push_back(std::move(bin));
        }
    }
    return bins;
}

// Tuples with at least one zero coordinate: the axis-hugging mask whose
// complement is every strictly interior recombination. Covers every bin of
// every slot, so the split support condition holds by construction.
inline std::set<BinTuple> l_shaped_mask(const std::vector<int>& bins_per_slot) {
    std::set<BinTuple> mask;
    BinTuple t(bins_per_slot.size(), 0);
    for (;;) {
        if (std::find(t.begin(), t.end(), 0) != t.end()) mask.insert(t);
        int k = static_cast<int>(bins_per_slot.size()) - 1;
        for (; k >= 0; --k) {
            std::size_t ks = static_cast<std::size_t>(k);
            if (++t[ks] < bins_per_slot[ks]) break;
            t[ks] = 0;
        }
        if (k < 0) break;
    }
    return mask;
}

// Every tuple of the product: no out-of-domain region.
inline std::set<BinTuple> full_mask(const std::vector<int>& bins_per_slot) {
    std::set<BinTuple> mask;
    BinTuple t(bins_per_slot.size(), 0);
    for (;;) {
        mask.insert(t);
        int k = static_cast<int>(bins_per_slot.size()) - 1;
        for (; k >= 0; --k) {
            std::size_t ks = static_cast<std::size_t>(k);
            if (++t[ks] < bins_per_slot[ks]) break;
            t[ks] = 0;
        }
        if (k < 0) break;
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Pixel-partition generators: output coordinates split into one group per
// slot, each group a smooth injective polynomial map of its own slot.
// ---------------------------------------------------------------------------

// Group k owns `group_sizes[k]` consecutive output coordinates. The first m
// coordinates of a group form a diagonal strictly monotone cubic (positive
// linear part, nonnegative cubic part), which makes the group map injective;
// remaining coordinates carry free odd-cubic mixtures of the slot variables.
// Draws that fail the structural injectivity check are retried on derived
// seeds before erroring.
inline InteractionGenerator make_pixel_partition_generator(int K,
                                                           const std::vector<int>& group_sizes,
                                                           std::uint64_t seed, int m = 1) {
    if (static_cast<int>(group_sizes.size()) != K)
        throw DimensionError("pixel partition: need one group size per slot");
    int d_x = 0;
    for (int g : group_sizes) {
        if (g < m)
            throw PreconditionError(
                "pixel partition: each group needs at least m coordinates for injectivity");
        d_x += g;
    }
    const int attempts = 5;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(attempt));
        std::vector<SlotComponent> comps;
        int offset = 0;
        bool ok = true;
        for (int k = 0; k < K; ++k) {
            PolyMap p;
            p.in_dim = m;
            p.out_dim = d_x;
            for (int j = 0; j < m; ++j) {
                MultiIndex lin(static_cast<std::size_t>(m), 0), cub(static_cast<std::size_t>(m), 0);
                lin[static_cast<std::size_t>(j)] = 1;
                cub[static_cast<std::size_t>(j)] = 3;
                p.alphas.push_back(lin);
                p.alphas.push_back(cub);
            }
            p.coef = Eigen::MatrixXd::Zero(d_x, static_cast<Eigen::Index>(p.alphas.size()));
            int g = group_sizes[static_cast<std::size_t>(k)];
            for (int r = 0; r < g; ++r) {
                int row = offset + r;
                if (r < m) {
                    // Anchor row r: monotone cubic in variable r alone.
                    p.coef(row, 2 * r) = 0.5 + std::abs(rng.normal());
                    p.coef(row, 2 * r + 1) = 0.3 * std::abs(rng.normal());
                } else {
                    for (int j = 0; j < m; ++j) {
                        p.coef(row, 2 * j) = rng.normal();
                        p.coef(row, 2 * j + 1) = 0.3 * rng.normal();
                    }
                }
            }
            // Structural check: every anchor row must be strictly increasing.
            for (int r = 0; r < m; ++r)
                if (!(p.coef(offset + r, 2 * r) > 0.0) || p.coef(offset + r, 2 * r + 1) < 0.0)
                    ok = false;
            comps.push_back(std::move(p));
            offset += g;
        }
        if (!ok) continue;
        // Sampled check: distinct slot values map to distinct group outputs.
        InteractionGenerator gen =
            InteractionGenerator::make(SlotStructure(K, m), d_x, 0, std::move(comps));
        Rng check = Rng::stream(seed ^ 0xC4ECull, static_cast<std::uint64_t>(attempt));
        bool injective = true;
        for (int t = 0; t < 20 && injective; ++t) {
            for (int k = 0; k < K; ++k) {
                Eigen::VectorXd u = check.uniform_vec(m, -1.0, 1.0);
                Eigen::VectorXd v = check.uniform_vec(m, -1.0, 1.0);
                if ((u - v).cwiseAbs().maxCoeff() < 1e-3) continue;
                const auto& c = gen.components[static_cast<std::size_t>(k)];
                if ((component_eval(c, u) - component_eval(c, v)).cwiseAbs().maxCoeff() < 1e-9)
                    injective = false;
            }
        }
        if (injective) return gen;
    }
    throw NumericError("pixel partition: injectivity check failed on every attempt");
}

} // namespace slotlab
