#pragma once

#include "slotlab/errors.hpp"

namespace slotlab {

// Partition of the latent coordinates into K contiguous slots of dimension m.
// Coordinate i belongs to slot i / m; the K index sets partition [0, d_z).
struct SlotStructure {
    int K = 1;
    int m = 1;

    SlotStructure() = default;
    SlotStructure(int K_, int m_) : K(K_), m(m_) {
        if (K < 1 || m < 1) throw PreconditionError("SlotStructure: K and m must be >= 1");
    }

    int d_z() const { return K * m; }

    int slot_of(int coord) const {
        if (coord < 0 || coord >= d_z())
            throw DimensionError("SlotStructure::slot_of: coordinate out of range");
        return coord / m;
    }

    // First coordinate of slot k.
    int slot_begin(int k) const {
        if (k < 0 || k >= K) throw DimensionError("SlotStructure: slot index out of range");
        return k * m;
    }

    bool operator==(const SlotStructure& o) const { return K == o.K && m == o.m; }
};

} // namespace slotlab
