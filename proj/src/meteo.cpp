#include "mvar/meteo.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvar/util.hpp"

namespace mvar::data {

namespace {
void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::string& in, size_t& off) {
    if (off + 4 > in.size()) throw ParseError("meteo grid file truncated", 0);
    const auto b = [&](size_t i) { return static_cast<uint32_t>(static_cast<uint8_t>(in[off + i])); };
    const uint32_t v = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
    off += 4;
    return v;
}
}  // namespace

int MeteoGrid::find_time(int64_t hour) const {
    auto it = std::lower_bound(times.begin(), times.end(), hour);
    if (it == times.end() || *it != hour) return -1;
    return static_cast<int>(it - times.begin());
}

num::DenseMatrix MeteoGrid::slice(int t) const {
    num::DenseMatrix m(n_channels(), grid_h * grid_w);
    for (int c = 0; c < n_channels(); ++c)
        for (int y = 0; y < grid_h; ++y)
            for (int x = 0; x < grid_w; ++x)
                m.at(c, y * grid_w + x) = static_cast<double>(value(t, c, y, x));
    return m;
}

num::DenseMatrix MeteoGrid::point_coords() const {
    num::DenseMatrix m(grid_h * grid_w, 2);
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            m.at(y * grid_w + x, 0) = lat0 + y * dlat;
            m.at(y * grid_w + x, 1) = lon0 + x * dlon;
        }
    }
    return m;
}

void MeteoGrid::validate() const {
    if (variables.empty()) throw ConfigError("meteo grid has no channels");
    if (grid_h < 1 || grid_w < 1) throw ConfigError("meteo grid has empty extent");
    if (times.empty()) throw ConfigError("meteo grid has no timesteps");
    for (size_t i = 1; i < times.size(); ++i)
        if (times[i] <= times[i - 1]) throw ConfigError("meteo grid times not increasing");
    const size_t want = static_cast<size_t>(n_times()) * variables.size() *
                        static_cast<size_t>(grid_h) * static_cast<size_t>(grid_w);
    if (values.size() != want) throw ShapeError("meteo grid payload size mismatch");
}

void write_meteo_grid(const std::string& path, const MeteoGrid& grid) {
    grid.validate();
    std::ostringstream meta;
    meta << "mvar-meteo v1\n";
    meta << "variables";
    for (const auto& v : grid.variables) meta << ' ' << v;
    meta << '\n';
    meta << "origin " << format_full(grid.lat0) << ' ' << format_full(grid.lon0) << '\n';
    meta << "spacing " << format_full(grid.dlat) << ' ' << format_full(grid.dlon) << '\n';
    for (int64_t t : grid.times) meta << "time " << format_iso_hour(t) << '\n';
    const std::string meta_str = meta.str();

    std::string out;
    out.reserve(20 + meta_str.size() + grid.values.size() * 4);
    out += "MVGR";
    put_u32(out, static_cast<uint32_t>(grid.n_times()));
    put_u32(out, static_cast<uint32_t>(grid.n_channels()));
    put_u32(out, static_cast<uint32_t>(grid.grid_h));
    put_u32(out, static_cast<uint32_t>(grid.grid_w));
    put_u32(out, static_cast<uint32_t>(meta_str.size()));
    out += meta_str;
    const size_t payload_off = out.size();
    out.resize(payload_off + grid.values.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + payload_off, grid.values.data(), grid.values.size() * 4);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

MeteoGrid read_meteo_grid(const std::string& path) {
    const std::string in = read_text_file(path);
    if (in.size() < 20 || in.compare(0, 4, "MVGR") != 0)
        throw ParseError("not a meteo grid file (bad magic): " + path, 0);
    size_t off = 4;
    MeteoGrid grid;
    const uint32_t t_count = get_u32(in, off);
    const uint32_t c_count = get_u32(in, off);
    grid.grid_h = static_cast<int>(get_u32(in, off));
    grid.grid_w = static_cast<int>(get_u32(in, off));
    const uint32_t meta_len = get_u32(in, off);
    if (off + meta_len > in.size()) throw ParseError("meteo grid metadata truncated", 0);
    const std::string meta = in.substr(off, meta_len);
    off += meta_len;

    std::istringstream ms(meta);
    std::string line;
    if (!std::getline(ms, line) || trim(line) != "mvar-meteo v1")
        throw ParseError("bad meteo metadata header in " + path, 1);
    while (std::getline(ms, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::vector<std::string> parts = split(t, ' ');
        if (parts[0] == "variables") {
            grid.variables.assign(parts.begin() + 1, parts.end());
        } else if (parts[0] == "origin" && parts.size() == 3) {
            grid.lat0 = std::strtod(parts[1].c_str(), nullptr);
            grid.lon0 = std::strtod(parts[2].c_str(), nullptr);
        } else if (parts[0] == "spacing" && parts.size() == 3) {
            grid.dlat = std::strtod(parts[1].c_str(), nullptr);
            grid.dlon = std::strtod(parts[2].c_str(), nullptr);
        } else if (parts[0] == "time" && parts.size() == 2) {
            grid.times.push_back(parse_iso_hour(parts[1]));
        } else {
            throw ParseError("unknown meteo metadata line '" + parts[0] + "'", 0);
        }
    }
    if (grid.variables.size() != c_count)
        throw ParseError("meteo channel count mismatch in " + path, 0);
    if (grid.times.size() != t_count)
        throw ParseError("meteo timestamp count mismatch in " + path, 0);

    const size_t want = static_cast<size_t>(t_count) * c_count *
                        static_cast<size_t>(grid.grid_h) * static_cast<size_t>(grid.grid_w);
    if (in.size() - off != want * 4)
        throw ParseError("meteo grid payload size mismatch in " + path, 0);
    grid.values.resize(want);
    std::memcpy(grid.values.data(), in.data() + off, want * 4);
    grid.validate();
    return grid;
}

}  // namespace mvar::data
