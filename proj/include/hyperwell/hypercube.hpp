#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hyperwell/common.hpp"
#include "hyperwell/errors.hpp"

namespace hyperwell::cube {

struct CubeMeta {
    std::string acquisition_time; // UTC ISO-8601; empty when unknown
    std::string exposure;
    std::map<std::string, std::string> extra;

    bool operator==(const CubeMeta&) const = default;
};

// Raw sensor frame: uint16 counts stored band-interleaved-by-line, i.e. the
// flat index is (line * bands + band) * samples + sample.
struct Hypercube {
    std::size_t lines = 0;
    std::size_t samples = 0;
    std::size_t bands = 0;
    std::vector<double> wavelengths; // nm, strictly increasing, one per band
    std::vector<std::uint16_t> data;
    CubeMeta meta;

    static std::vector<double> default_wavelengths(std::size_t bands, double lo = 400.0,
                                                   double hi = 1000.0) {
        std::vector<double> w(bands);
        if (bands == 1) {
            w[0] = lo;
            return w;
        }
        for (std::size_t i = 0; i < bands; ++i)
            w[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bands - 1);
        return w;
    }

    std::size_t index(std::size_t line, std::size_t sample, std::size_t band) const {
        return (line * bands + band) * samples + sample;
    }
    std::uint16_t at(std::size_t line, std::size_t sample, std::size_t band) const {
        return data[index(line, sample, band)];
    }
    std::uint16_t& at(std::size_t line, std::size_t sample, std::size_t band) {
        return data[index(line, sample, band)];
    }

    void validate() const {
        require(lines >= 1 && samples >= 1 && bands >= 1, ErrorKind::Format,
                "cube dimensions must all be >= 1");
        require(data.size() == lines * samples * bands, ErrorKind::Format,
                "cube data length does not match lines*samples*bands");
        require(wavelengths.size() == bands, ErrorKind::Format,
                "wavelength count must equal band count");
        for (std::size_t i = 1; i < wavelengths.size(); ++i)
            require(wavelengths[i] > wavelengths[i - 1], ErrorKind::Format,
                    "wavelengths must be strictly increasing");
    }

    bool operator==(const Hypercube&) const = default;
};

// White/dark reference frames. A single-line reference is broadcast along
// the line axis (push-broom references are one scan line).
struct ReferenceFrames {
    Hypercube white;
    Hypercube dark;

    void validate_against(const Hypercube& target) const {
        for (const Hypercube* ref : {&white, &dark}) {
            require(ref->samples == target.samples && ref->bands == target.bands,
                    ErrorKind::Dimension, "reference frame samples/bands differ from target");
            require(ref->lines == target.lines || ref->lines == 1, ErrorKind::Dimension,
                    "reference frame lines must match target or be 1");
        }
    }
};

// Reflectance cube. Validity is tracked per element; invalid entries hold 0
// in `values` and are never NaN/inf.
struct CalibratedCube {
    std::size_t lines = 0;
    std::size_t samples = 0;
    std::size_t bands = 0;
    std::vector<double> wavelengths;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;
    double scale = 1.0;
    CubeMeta meta;

    std::size_t index(std::size_t line, std::size_t sample, std::size_t band) const {
        return (line * bands + band) * samples + sample;
    }
    double at(std::size_t line, std::size_t sample, std::size_t band) const {
        return values[index(line, sample, band)];
    }
    bool is_valid(std::size_t line, std::size_t sample, std::size_t band) const {
        return valid[index(line, sample, band)] != 0;
    }

    bool operator==(const CalibratedCube&) const = default;
};

struct GrayImage {
    std::size_t lines = 0;
    std::size_t samples = 0;
    std::vector<double> values;       // normalized to [0,1] where valid
    std::vector<std::uint8_t> valid;

    std::size_t index(std::size_t line, std::size_t sample) const {
        return line * samples + sample;
    }
    double at(std::size_t line, std::size_t sample) const { return values[index(line, sample)]; }
    bool is_valid(std::size_t line, std::size_t sample) const {
        return valid[index(line, sample)] != 0;
    }
};

namespace detail {

inline std::filesystem::path strip_cube_ext(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".hdr" || ext == ".raw") {
        auto base = path;
        base.replace_extension();
        return base;
    }
    return path;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace detail

// Writes <base>.hdr + <base>.raw. The payload is little-endian uint16 in BIL
// order; the header is plain `key = value` text. Both are byte-stable for a
// given cube so saved frames can be compared as goldens.
inline void save_cube(const Hypercube& cube, const std::filesystem::path& path) {
    cube.validate();
    const auto base = detail::strip_cube_ext(path);

    std::ostringstream hdr;
    hdr << "ENVI\n";
    hdr << "samples = " << cube.samples << "\n";
    hdr << "lines = " << cube.lines << "\n";
    hdr << "bands = " << cube.bands << "\n";
    hdr << "data type = 12\n";
    hdr << "interleave = bil\n";
    hdr << "byte order = 0\n";
    hdr << "wavelength = {";
    for (std::size_t i = 0; i < cube.wavelengths.size(); ++i) {
        if (i) hdr << ", ";
        hdr << fmt_double(cube.wavelengths[i]);
    }
    hdr << "}\n";
    if (!cube.meta.acquisition_time.empty())
        hdr << "acquisition time = " << cube.meta.acquisition_time << "\n";
    if (!cube.meta.exposure.empty()) hdr << "exposure = " << cube.meta.exposure << "\n";
    for (const auto& [k, v] : cube.meta.extra) hdr << k << " = " << v << "\n";

    {
        std::ofstream out(base.string() + ".hdr", std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot open header for writing: " + base.string() + ".hdr");
        out << hdr.str();
        require(out.good(), ErrorKind::Io, "failed writing header: " + base.string() + ".hdr");
    }
    {
        std::ofstream out(base.string() + ".raw", std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot open payload for writing: " + base.string() + ".raw");
        if constexpr (std::endian::native == std::endian::little) {
            out.write(reinterpret_cast<const char*>(cube.data.data()),
                      static_cast<std::streamsize>(cube.data.size() * 2));
        } else {
            std::vector<char> buf(cube.data.size() * 2);
            for (std::size_t i = 0; i < cube.data.size(); ++i) {
                buf[2 * i] = static_cast<char>(cube.data[i] & 0xff);
                buf[2 * i + 1] = static_cast<char>(cube.data[i] >> 8);
            }
            out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        }
        require(out.good(), ErrorKind::Io, "failed writing payload: " + base.string() + ".raw");
    }
}

inline Hypercube load_cube(const std::filesystem::path& path) {
    const auto base = detail::strip_cube_ext(path);
    const auto hdr_path = base.string() + ".hdr";
    const auto raw_path = base.string() + ".raw";

    std::ifstream hdr(hdr_path);
    require(hdr.good(), ErrorKind::Io, "cannot open header: " + hdr_path);

    Hypercube cube;
    bool have_wavelength = false;
    std::string declared_type = "12", declared_interleave = "bil", declared_order = "0";

    std::string line;
    while (std::getline(hdr, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key == "wavelength") {
            // brace list may wrap over several lines
            while (value.find('}') == std::string::npos && std::getline(hdr, line))
                value += " " + detail::trim(line);
            const auto open = value.find('{');
            const auto close = value.find('}');
            require(open != std::string::npos && close != std::string::npos && close > open,
                    ErrorKind::Format, "malformed wavelength list in " + hdr_path);
            std::stringstream items(value.substr(open + 1, close - open - 1));
            std::string item;
            cube.wavelengths.clear();
            while (std::getline(items, item, ',')) {
                const std::string token = detail::trim(item);
                if (token.empty()) continue;
                try {
                    cube.wavelengths.push_back(std::stod(token));
                } catch (const std::exception&) {
                    raise(ErrorKind::Format, "bad wavelength value '" + token + "' in " + hdr_path);
                }
            }
            have_wavelength = true;
        } else if (key == "samples" || key == "lines" || key == "bands") {
            std::size_t n = 0;
            try {
                n = static_cast<std::size_t>(std::stoull(value));
            } catch (const std::exception&) {
                raise(ErrorKind::Format, "bad integer for '" + key + "' in " + hdr_path);
            }
            (key == "samples" ? cube.samples : key == "lines" ? cube.lines : cube.bands) = n;
        } else if (key == "data type") {
            declared_type = value;
        } else if (key == "interleave") {
            declared_interleave = value;
        } else if (key == "byte order") {
            declared_order = value;
        } else if (key == "acquisition time") {
            cube.meta.acquisition_time = value;
        } else if (key == "exposure") {
            cube.meta.exposure = value;
        } else {
            cube.meta.extra[key] = value;
        }
    }

    require(declared_type == "12", ErrorKind::UnsupportedFormat,
            "unsupported data type " + declared_type + " (only 12 = uint16)");
    require(declared_interleave == "bil", ErrorKind::UnsupportedFormat,
            "unsupported interleave '" + declared_interleave + "' (only bil)");
    require(declared_order == "0", ErrorKind::UnsupportedFormat,
            "unsupported byte order " + declared_order + " (only 0 = little-endian)");
    require(cube.lines >= 1 && cube.samples >= 1 && cube.bands >= 1, ErrorKind::Format,
            "header must declare samples, lines and bands >= 1");
    if (!have_wavelength) cube.wavelengths = Hypercube::default_wavelengths(cube.bands);

    std::ifstream raw(raw_path, std::ios::binary | std::ios::ate);
    require(raw.good(), ErrorKind::Format, "payload file missing: " + raw_path);
    const auto actual = static_cast<std::size_t>(raw.tellg());
    const std::size_t expected = cube.lines * cube.samples * cube.bands * 2;
    require(actual == expected, ErrorKind::Format,
            "payload size mismatch for " + raw_path + ": expected " + std::to_string(expected) +
                " bytes, got " + std::to_string(actual));
    raw.seekg(0);
    cube.data.resize(cube.lines * cube.samples * cube.bands);
    if constexpr (std::endian::native == std::endian::little) {
        raw.read(reinterpret_cast<char*>(cube.data.data()), static_cast<std::streamsize>(expected));
    } else {
        std::vector<unsigned char> buf(expected);
        raw.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
        for (std::size_t i = 0; i < cube.data.size(); ++i)
            cube.data[i] = static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8));
    }
    require(raw.good(), ErrorKind::Io, "failed reading payload: " + raw_path);

    cube.validate();
    return cube;
}

// Flat-field correction C = (R - D) / (W - D) * m. Elements where the
// references are degenerate (W <= D) are flagged invalid rather than
// producing NaN or infinities.
inline CalibratedCube flat_field(const Hypercube& raw, const ReferenceFrames& refs, double m = 1.0) {
    raw.validate();
    refs.validate_against(raw);
    require(m > 0.0, ErrorKind::InvalidArgument, "scaling constant m must be > 0");

    CalibratedCube out;
    out.lines = raw.lines;
    out.samples = raw.samples;
    out.bands = raw.bands;
    out.wavelengths = raw.wavelengths;
    out.meta = raw.meta;
    out.scale = m;
    out.values.assign(raw.data.size(), 0.0);
    out.valid.assign(raw.data.size(), 0);

    std::size_t n_valid = 0;
    for (std::size_t line = 0; line < raw.lines; ++line) {
        const std::size_t wl = refs.white.lines == 1 ? 0 : line;
        const std::size_t dl = refs.dark.lines == 1 ? 0 : line;
        for (std::size_t band = 0; band < raw.bands; ++band) {
            for (std::size_t sample = 0; sample < raw.samples; ++sample) {
                const double w = refs.white.at(wl, sample, band);
                const double d = refs.dark.at(dl, sample, band);
                const std::size_t i = raw.index(line, sample, band);
                if (w > d) {
                    out.values[i] = (static_cast<double>(raw.data[i]) - d) / (w - d) * m;
                    out.valid[i] = 1;
                    ++n_valid;
                }
            }
        }
    }
    require(n_valid > 0, ErrorKind::DegenerateInput,
            "degenerate references: no element has white > dark");
    return out;
}

namespace detail {

template <typename ValueAt, typename ValidAt>
GrayImage project_gray_impl(std::size_t lines, std::size_t samples, std::size_t bands,
                            ValueAt value_at, ValidAt valid_at) {
    GrayImage img;
    img.lines = lines;
    img.samples = samples;
    img.values.assign(lines * samples, 0.0);
    img.valid.assign(lines * samples, 0);

    for (std::size_t line = 0; line < lines; ++line) {
        for (std::size_t sample = 0; sample < samples; ++sample) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t band = 0; band < bands; ++band) {
                if (!valid_at(line, sample, band)) continue;
                sum += value_at(line, sample, band);
                ++n;
            }
            const std::size_t i = img.index(line, sample);
            if (n > 0) {
                img.values[i] = sum / static_cast<double>(n);
                img.valid[i] = 1;
            }
        }
    }

    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        if (!img.valid[i]) continue;
        if (!any) {
            lo = hi = img.values[i];
            any = true;
        } else {
            lo = std::min(lo, img.values[i]);
            hi = std::max(hi, img.values[i]);
        }
    }
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        if (!img.valid[i]) continue;
        img.values[i] = hi > lo ? (img.values[i] - lo) / (hi - lo) : 0.5;
    }
    return img;
}

} // namespace detail

// Band-mean image normalized to [0,1] by min-max; a constant image maps to
// 0.5 everywhere by convention.
inline GrayImage project_gray(const CalibratedCube& cal) {
    return detail::project_gray_impl(
        cal.lines, cal.samples, cal.bands,
        [&](std::size_t l, std::size_t s, std::size_t b) { return cal.at(l, s, b); },
        [&](std::size_t l, std::size_t s, std::size_t b) { return cal.is_valid(l, s, b); });
}

inline GrayImage project_gray(const Hypercube& raw) {
    return detail::project_gray_impl(
        raw.lines, raw.samples, raw.bands,
        [&](std::size_t l, std::size_t s, std::size_t b) {
            return static_cast<double>(raw.at(l, s, b));
        },
        [](std::size_t, std::size_t, std::size_t) { return true; });
}

} // namespace hyperwell::cube
