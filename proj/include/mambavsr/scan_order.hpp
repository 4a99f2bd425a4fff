#pragma once

#include <vector>

namespace mvsr {

struct Grid {
    int h = 0;
    int w = 0;

    int size() const noexcept { return h * w; }
    friend bool operator==(const Grid&, const Grid&) = default;
};

// A traversal of the sites of `target_grid`: perm[rank] = site (raster index)
// and inv[site] = rank. `source_grid` records the grid the order was derived
// on (equal to the target for orders built at full resolution).
class ScanOrder {
public:
    ScanOrder() = default;

    // Throws ShapeError unless perm is a bijection on {0..target.size()-1}.
    static ScanOrder from_perm(std::vector<int> perm, Grid source, Grid target);

    const std::vector<int>& perm() const noexcept { return perm_; }
    const std::vector<int>& inv() const noexcept { return inv_; }
    Grid source_grid() const noexcept { return source_; }
    Grid target_grid() const noexcept { return target_; }
    int size() const noexcept { return static_cast<int>(perm_.size()); }

    // Re-checks the bijection and the inverse relation from scratch.
    bool is_valid() const;

    friend bool operator==(const ScanOrder&, const ScanOrder&) = default;

private:
    std::vector<int> perm_;
    std::vector<int> inv_;
    Grid source_;
    Grid target_;
};

// Identity permutation in row-major order.
ScanOrder raster_order(int h, int w);

// Visits the sites of `order` grouped into non-overlapping win x win windows
// (partial windows at the right/bottom edge included). Windows are taken in
// the order in which `order` first reaches them; inside a window, pixels keep
// their relative order from `order`.
ScanOrder windowed_order(const ScanOrder& order, int win);

// Drops sites outside `sub` (a top-left sub-grid of the target grid) while
// keeping relative order; the result is an order on `sub`.
ScanOrder restrict_order(const ScanOrder& order, Grid sub);

} // namespace mvsr
