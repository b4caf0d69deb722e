#include "mvar/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mvar/util.hpp"

namespace mvar::model {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'C', 'K'};
constexpr uint8_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::string& in, size_t& off) {
    if (off + 4 > in.size()) throw ParseError("checkpoint file truncated", 0);
    const auto b = [&](size_t i) {
        return static_cast<uint32_t>(static_cast<uint8_t>(in[off + i]));
    };
    const uint32_t v = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
    off += 4;
    return v;
}

void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

float get_f32(const std::string& in, size_t& off) {
    const uint32_t bits = get_u32(in, off);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

int parse_int_field(const std::string& text, const std::string& what, int line) {
    try {
        size_t pos = 0;
        const int v = std::stoi(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(what);
        return v;
    } catch (const std::exception&) {
        throw ParseError("bad integer for " + what + ": '" + text + "'", line);
    }
}

double parse_double_field(const std::string& text, const std::string& what, int line) {
    try {
        size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(what);
        return v;
    } catch (const std::exception&) {
        throw ParseError("bad number for " + what + ": '" + text + "'", line);
    }
}

size_t parse_size_field(const std::string& text, const std::string& what, int line) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(what);
        return static_cast<size_t>(v);
    } catch (const std::exception&) {
        throw ParseError("bad offset for " + what + ": '" + text + "'", line);
    }
}

}  // namespace

void write_checkpoint(const std::string& path, const MvarModel& model) {
    model.hp.validate();
    std::ostringstream h;
    h << "mvar-checkpoint v1\n";
    const auto& hp = model.hp;
    h << "hyper n_cities " << hp.n_cities << "\n";
    h << "hyper n_pollutants " << hp.n_pollutants << "\n";
    h << "hyper meteo_channels " << hp.meteo_channels << "\n";
    h << "hyper grid_h " << hp.grid_h << "\n";
    h << "hyper grid_w " << hp.grid_w << "\n";
    h << "hyper blocks " << hp.blocks << "\n";
    h << "hyper d_in " << hp.d_in << "\n";
    h << "hyper d_pa " << hp.d_pa << "\n";
    h << "hyper d_pm " << hp.d_pm << "\n";
    h << "hyper d_t " << hp.d_t << "\n";
    h << "hyper heads " << hp.heads << "\n";
    h << "hyper ds_channels " << hp.ds_channels << "\n";
    h << "hyper ln_eps " << format_full(hp.ln_eps) << "\n";
    h << "hyper use_meteo " << (hp.use_meteo ? 1 : 0) << "\n";
    h << "lead_hours " << model.lead_hours << "\n";
    h << "normstats " << model.normstats_ref << "\n";
    h << "frame " << format_full(model.frame.lat0) << " "
      << format_full(model.frame.lon0) << " " << format_full(model.frame.scale)
      << "\n";
    for (const auto& c : model.cities) {
        h << "city " << format_full(c.lat) << " " << format_full(c.lon) << " " << c.id
          << "\n";
    }
    for (size_t c = 0; c < model.meteo_mean.size(); ++c) {
        h << "meteo_stat " << c << " " << format_full(model.meteo_mean[c]) << " "
          << format_full(model.meteo_std[c]) << "\n";
    }
    size_t offset = 0;
    for (const auto& t : model.params.tensors()) {
        h << "tensor " << t.name << " " << t.value.rows << " " << t.value.cols << " " << offset
          << "\n";
        offset += static_cast<size_t>(t.value.rows) * static_cast<size_t>(t.value.cols) * 4;
    }
    const std::string header = h.str();

    std::string blob;
    blob.reserve(9 + header.size() + offset);
    blob.append(kMagic, 4);
    blob.push_back(static_cast<char>(kVersion));
    put_u32(blob, static_cast<uint32_t>(header.size()));
    blob += header;
    for (const auto& t : model.params.tensors()) {
        for (double v : t.value.v) put_f32(blob, static_cast<float>(v));
    }
    write_text_file(path, blob);
}

MvarModel read_checkpoint(const std::string& path) {
    if (!file_exists(path)) throw MissingArtifactError("checkpoint not found: " + path);
    const std::string blob = read_text_file(path);
    if (blob.size() < 9 || std::memcmp(blob.data(), kMagic, 4) != 0) {
        throw ParseError("not a checkpoint file (bad magic): " + path, 0);
    }
    if (static_cast<uint8_t>(blob[4]) != kVersion) {
        throw ParseError("unsupported checkpoint version", 0);
    }
    size_t off = 5;
    const uint32_t header_len = get_u32(blob, off);
    if (off + header_len > blob.size()) throw ParseError("checkpoint header truncated", 0);
    const std::string header = blob.substr(off, header_len);
    const size_t payload_start = off + header_len;

    MvarModel m;
    struct ManifestEntry {
        std::string name;
        int rows, cols;
        size_t offset;
    };
    std::vector<ManifestEntry> manifest;

    std::istringstream lines(header);
    std::string line;
    int lineno = 0;
    bool saw_format = false;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1) {
            if (line != "mvar-checkpoint v1") {
                throw ParseError("unsupported checkpoint format line: '" + line + "'", lineno);
            }
            saw_format = true;
            continue;
        }
        std::vector<std::string> parts = split(line, ' ');
        const std::string& key = parts[0];
        if (key == "hyper") {
            if (parts.size() != 3) throw ParseError("malformed hyper line", lineno);
            const std::string& f = parts[1];
            const std::string& v = parts[2];
            if (f == "n_cities") m.hp.n_cities = parse_int_field(v, f, lineno);
            else if (f == "n_pollutants") m.hp.n_pollutants = parse_int_field(v, f, lineno);
            else if (f == "meteo_channels") m.hp.meteo_channels = parse_int_field(v, f, lineno);
            else if (f == "grid_h") m.hp.grid_h = parse_int_field(v, f, lineno);
            else if (f == "grid_w") m.hp.grid_w = parse_int_field(v, f, lineno);
            else if (f == "blocks") m.hp.blocks = parse_int_field(v, f, lineno);
            else if (f == "d_in") m.hp.d_in = parse_int_field(v, f, lineno);
            else if (f == "d_pa") m.hp.d_pa = parse_int_field(v, f, lineno);
            else if (f == "d_pm") m.hp.d_pm = parse_int_field(v, f, lineno);
            else if (f == "d_t") m.hp.d_t = parse_int_field(v, f, lineno);
            else if (f == "heads") m.hp.heads = parse_int_field(v, f, lineno);
            else if (f == "ds_channels") m.hp.ds_channels = parse_int_field(v, f, lineno);
            else if (f == "ln_eps") m.hp.ln_eps = parse_double_field(v, f, lineno);
            else if (f == "use_meteo") m.hp.use_meteo = parse_int_field(v, f, lineno) != 0;
            else throw ParseError("unknown hyperparameter '" + f + "'", lineno);
        } else if (key == "lead_hours") {
            if (parts.size() != 2) throw ParseError("malformed lead_hours line", lineno);
            m.lead_hours = parse_int_field(parts[1], "lead_hours", lineno);
        } else if (key == "normstats") {
            m.normstats_ref = line.size() > 10 ? line.substr(10) : std::string();
        } else if (key == "frame") {
            if (parts.size() != 4) throw ParseError("malformed frame line", lineno);
            m.frame.lat0 = parse_double_field(parts[1], "frame lat0", lineno);
            m.frame.lon0 = parse_double_field(parts[2], "frame lon0", lineno);
            m.frame.scale = parse_double_field(parts[3], "frame scale", lineno);
        } else if (key == "city") {
            if (parts.size() < 4) throw ParseError("malformed city line", lineno);
            data::CityInfo c;
            c.lat = parse_double_field(parts[1], "city lat", lineno);
            c.lon = parse_double_field(parts[2], "city lon", lineno);
            c.id = line.substr(7 + parts[1].size() + parts[2].size());
            m.cities.push_back(c);
        } else if (key == "meteo_stat") {
            if (parts.size() != 4) throw ParseError("malformed meteo_stat line", lineno);
            const int c = parse_int_field(parts[1], "meteo_stat channel", lineno);
            if (c != static_cast<int>(m.meteo_mean.size())) {
                throw ParseError("meteo_stat channels out of order", lineno);
            }
            m.meteo_mean.push_back(parse_double_field(parts[2], "meteo_stat mean", lineno));
            m.meteo_std.push_back(parse_double_field(parts[3], "meteo_stat std", lineno));
        } else if (key == "tensor") {
            if (parts.size() != 5) throw ParseError("malformed tensor line", lineno);
            ManifestEntry e;
            e.name = parts[1];
            e.rows = parse_int_field(parts[2], "tensor rows", lineno);
            e.cols = parse_int_field(parts[3], "tensor cols", lineno);
            e.offset = parse_size_field(parts[4], "tensor offset", lineno);
            manifest.push_back(std::move(e));
        } else {
            throw ParseError("unknown checkpoint header key '" + key + "'", lineno);
        }
    }
    if (!saw_format) throw ParseError("checkpoint header is empty", 0);
    m.hp.validate();
    if (static_cast<int>(m.cities.size()) != m.hp.n_cities) {
        throw ParseError("checkpoint city list does not match n_cities", 0);
    }
    if (m.hp.use_meteo && static_cast<int>(m.meteo_mean.size()) != m.hp.meteo_channels) {
        throw ParseError("checkpoint meteorology statistics incomplete", 0);
    }

    m.params = make_param_set(m.hp);
    if (manifest.size() != m.params.count()) {
        throw ParseError("checkpoint tensor manifest does not match the architecture", 0);
    }
    for (size_t i = 0; i < manifest.size(); ++i) {
        auto& t = m.params.tensor(i);
        const auto& e = manifest[i];
        if (e.name != t.name || e.rows != t.value.rows || e.cols != t.value.cols) {
            throw ParseError("checkpoint tensor '" + e.name + "' does not match expected '" +
                                       t.name + "' " + t.value.shape_str(),
                                   0);
        }
        size_t pos = payload_start + e.offset;
        const size_t need = static_cast<size_t>(e.rows) * static_cast<size_t>(e.cols) * 4;
        if (pos + need > blob.size()) {
            throw ParseError("checkpoint payload truncated at tensor '" + e.name + "'", 0);
        }
        for (double& v : t.value.v) v = static_cast<double>(get_f32(blob, pos));
    }
    return m;
}

}  // namespace mvar::model
