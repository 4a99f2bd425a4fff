#include "mambavsr/scan_order.hpp"

#include "mambavsr/errors.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace mvsr {

ScanOrder ScanOrder::from_perm(std::vector<int> perm, Grid source, Grid target)
{
    const int n = target.size();
    if (static_cast<int>(perm.size()) != n || n < 1)
        throw ShapeError("scan order length " + std::to_string(perm.size()) +
                         " does not match grid of " + std::to_string(n) + " sites");
    std::vector<int> inv(n, -1);
    for (int rank = 0; rank < n; ++rank) {
        const int site = perm[rank];
        if (site < 0 || site >= n || inv[site] != -1)
            throw ShapeError("scan order is not a permutation (site " + std::to_string(site) + ")");
        inv[site] = rank;
    }
    ScanOrder o;
    o.perm_ = std::move(perm);
    o.inv_ = std::move(inv);
    o.source_ = source;
    o.target_ = target;
    return o;
}

bool ScanOrder::is_valid() const
{
    const int n = target_.size();
    if (static_cast<int>(perm_.size()) != n || static_cast<int>(inv_.size()) != n)
        return false;
    std::vector<char> seen(n, 0);
    for (int rank = 0; rank < n; ++rank) {
        const int site = perm_[rank];
        if (site < 0 || site >= n || seen[site])
            return false;
        seen[site] = 1;
        if (inv_[site] != rank)
            return false;
    }
    return true;
}

ScanOrder raster_order(int h, int w)
{
    if (h < 1 || w < 1)
        throw ShapeError("raster_order: extents must be positive");
    std::vector<int> perm(static_cast<std::size_t>(h) * w);
    std::iota(perm.begin(), perm.end(), 0);
    return ScanOrder::from_perm(std::move(perm), {h, w}, {h, w});
}

ScanOrder windowed_order(const ScanOrder& order, int win)
{
    if (win < 1)
        throw ShapeError("windowed_order: window must be >= 1");
    const Grid g = order.target_grid();
    const int nwx = (g.w + win - 1) / win;
    const int nwy = (g.h + win - 1) / win;
    std::vector<std::vector<int>> members(static_cast<std::size_t>(nwx) * nwy);
    std::vector<int> window_sequence;
    for (int site : order.perm()) {
        const int wid = (site / g.w / win) * nwx + (site % g.w) / win;
        if (members[wid].empty())
            window_sequence.push_back(wid);
        members[wid].push_back(site);
    }
    std::vector<int> perm;
    perm.reserve(order.perm().size());
    for (int wid : window_sequence)
        perm.insert(perm.end(), members[wid].begin(), members[wid].end());
    return ScanOrder::from_perm(std::move(perm), order.source_grid(), g);
}

ScanOrder restrict_order(const ScanOrder& order, Grid sub)
{
    const Grid g = order.target_grid();
    if (sub.h > g.h || sub.w > g.w || sub.h < 1 || sub.w < 1)
        throw ShapeError("restrict_order: sub-grid exceeds the order's grid");
    if (sub == g)
        return order;
    std::vector<int> perm;
    perm.reserve(sub.size());
    for (int site : order.perm()) {
        const int y = site / g.w, x = site % g.w;
        if (y < sub.h && x < sub.w)
            perm.push_back(y * sub.w + x);
    }
    return ScanOrder::from_perm(std::move(perm), order.source_grid(), sub);
}

} // namespace mvsr
