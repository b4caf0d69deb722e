#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvar/dense.hpp"

namespace mvar::data {

/// Gridded meteorological fields, [time][channel][row][col], stored as the
/// same 32-bit floats the file format carries so round trips are bit-exact.
struct MeteoGrid {
    std::vector<std::string> variables;  // channel names, length C
    double lat0 = 0.0;                   // latitude of row 0
    double lon0 = 0.0;                   // longitude of col 0
    double dlat = 1.0;
    double dlon = 1.0;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<int64_t> times;  // epoch hours, strictly increasing
    std::vector<float> values;   // T * C * H * W

    int n_channels() const { return static_cast<int>(variables.size()); }
    int n_times() const { return static_cast<int>(times.size()); }

    size_t idx(int t, int c, int y, int x) const {
        return ((static_cast<size_t>(t) * variables.size() + static_cast<size_t>(c)) *
                    static_cast<size_t>(grid_h) +
                static_cast<size_t>(y)) *
                   static_cast<size_t>(grid_w) +
               static_cast<size_t>(x);
    }
    float value(int t, int c, int y, int x) const { return values[idx(t, c, y, x)]; }

    void allocate() {
        values.assign(static_cast<size_t>(n_times()) * variables.size() *
                          static_cast<size_t>(grid_h) * static_cast<size_t>(grid_w),
                      0.0f);
    }

    int find_time(int64_t hour) const;
    /// One [channel][position] slice as doubles, C x (H*W).
    num::DenseMatrix slice(int t) const;
    /// (H*W) x 2 matrix of grid point (lat, lon) in row-major position order.
    num::DenseMatrix point_coords() const;
    void validate() const;
};

/// Binary container: magic "MVGR", four u32 little-endian dims (T, C, H, W),
/// a u32-length-prefixed UTF-8 metadata block (variable names, grid origin
/// and spacing, timestamps), then T*C*H*W float32 little-endian values in
/// [t][c][h][w] order.
void write_meteo_grid(const std::string& path, const MeteoGrid& grid);
MeteoGrid read_meteo_grid(const std::string& path);

}  // namespace mvar::data
