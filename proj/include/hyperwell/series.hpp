#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperwell/common.hpp"
#include "hyperwell/errors.hpp"
#include "hyperwell/hypercube.hpp"
#include "hyperwell/roi.hpp"

namespace hyperwell::series {

// Advisory sample context. rho_area outside 2-3 mg/cm^2 degrades the optical
// linearity assumption, so it triggers a warning but never blocks analysis.
struct SeriesMeta {
    std::string label;
    std::optional<double> ph;
    std::optional<double> rho_area; // mg/cm^2

    bool operator==(const SeriesMeta&) const = default;
};

struct SeriesPoint {
    double t_hours = 0.0;
    double intensity = 0.0;

    bool operator==(const SeriesPoint&) const = default;
};

struct IntensitySeries {
    std::string sample_id;
    int well_index = -1;
    std::vector<SeriesPoint> points;
    SeriesMeta meta;

    void validate() const {
        require(!points.empty(), ErrorKind::InsufficientData,
                "series " + sample_id + " has no points");
        for (std::size_t i = 0; i < points.size(); ++i) {
            require(points[i].intensity >= 0.0, ErrorKind::InvalidArgument,
                    "series " + sample_id + " has negative intensity");
            if (i > 0)
                require(points[i].t_hours > points[i - 1].t_hours, ErrorKind::InvalidArgument,
                        "series " + sample_id + " times must be strictly increasing");
        }
    }

    std::vector<double> times() const {
        std::vector<double> t;
        t.reserve(points.size());
        for (const auto& p : points) t.push_back(p.t_hours);
        return t;
    }
    std::vector<double> intensities() const {
        std::vector<double> v;
        v.reserve(points.size());
        for (const auto& p : points) v.push_back(p.intensity);
        return v;
    }
};

struct ReplicateStats {
    std::size_t n = 0;
    double mean = 0.0;
    double std_dev = 0.0;        // n-1 denominator
    double ci95_half_width = 0.0; // 2 * std_dev by convention
};

inline ReplicateStats replicate_stats(const std::vector<double>& values) {
    require(values.size() >= 2, ErrorKind::InsufficientData,
            "replicate statistics need at least 2 values, got " + std::to_string(values.size()));
    ReplicateStats s;
    s.n = values.size();
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.ci95_half_width = 2.0 * s.std_dev;
    return s;
}

inline std::string well_sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "well_%02d", index);
    return buf;
}

struct Reading {
    std::string sample_id;
    int well_index = -1;
    double intensity = 0.0;
};

struct ExtractionResult {
    std::vector<Reading> readings;      // usable wells, ordered by index
    std::vector<std::string> warnings;  // one entry per skipped well
};

// Per-well total reflected intensity: mean over mask pixels of the band-sum
// of reflectance. The pixel mean makes the value invariant to mask size, so
// saturation exclusion does not bias uniform wells.
inline ExtractionResult extract_intensity(const cube::CalibratedCube& cal, const roi::RoiSet& rois) {
    require(!rois.circles.empty(), ErrorKind::InvalidArgument, "ROI set is empty");
    require(rois.masks.size() == rois.circles.size(), ErrorKind::Contract,
            "masks not populated; run build_masks first");

    ExtractionResult out;
    for (std::size_t ci = 0; ci < rois.circles.size(); ++ci) {
        const int index = rois.circles[ci].index;
        if (!rois.usable[ci] || rois.masks[ci].empty()) {
            out.warnings.push_back("well " + well_sample_id(index) +
                                   " unusable (mask emptied by saturation)");
            continue;
        }
        double sum = 0.0;
        for (std::uint32_t pix : rois.masks[ci]) {
            const std::size_t line = pix / cal.samples;
            const std::size_t sample = pix % cal.samples;
            for (std::size_t band = 0; band < cal.bands; ++band) {
                const std::size_t i = cal.index(line, sample, band);
                if (cal.valid[i]) sum += cal.values[i];
            }
        }
        out.readings.push_back(
            {well_sample_id(index), index, sum / static_cast<double>(rois.masks[ci].size())});
    }
    require(!out.readings.empty(), ErrorKind::DegenerateInput,
            "extraction failed: no usable wells");
    return out;
}

// CSV-backed store for per-well time series. Every mutation rewrites the
// whole file through a temp+rename so readers never observe a torn file.
class SeriesStore {
public:
    SeriesStore() = default;

    static SeriesStore open(const std::filesystem::path& csv_path) {
        SeriesStore store;
        store.csv_path_ = csv_path;
        if (std::filesystem::exists(csv_path)) store.load();
        return store;
    }

    const std::filesystem::path& path() const { return csv_path_; }

    std::vector<std::string> sample_ids() const {
        std::vector<std::string> ids;
        for (const auto& [id, s] : series_) ids.push_back(id);
        return ids;
    }

    const IntensitySeries& at(const std::string& sample_id) const {
        const auto it = series_.find(sample_id);
        require(it != series_.end(), ErrorKind::InvalidArgument,
                "no series for sample '" + sample_id + "'");
        return it->second;
    }

    bool contains(const std::string& sample_id) const { return series_.count(sample_id) > 0; }
    std::size_t size() const { return series_.size(); }

    void set_meta(const std::string& sample_id, const SeriesMeta& meta) {
        series_[sample_id].sample_id = sample_id;
        series_[sample_id].meta = meta;
    }

    void append(const std::vector<Reading>& readings, double t_hours) {
        for (const auto& r : readings) {
            auto& s = series_[r.sample_id];
            if (s.sample_id.empty()) {
                s.sample_id = r.sample_id;
                s.well_index = r.well_index;
            }
            if (!s.points.empty())
                require(t_hours > s.points.back().t_hours, ErrorKind::InvalidArgument,
                        "non-monotone time for " + r.sample_id + ": have t=" +
                            fmt_double(s.points.back().t_hours) + " h, got t=" +
                            fmt_double(t_hours) + " h");
            require(r.intensity >= 0.0, ErrorKind::InvalidArgument,
                    "negative intensity for " + r.sample_id);
            s.points.push_back({t_hours, r.intensity});
        }
        if (!csv_path_.empty()) save();
    }

    void save() const {
        require(!csv_path_.empty(), ErrorKind::Contract, "store has no backing path");
        std::ostringstream csv;
        csv << "sample_id,time_hours,intensity\n";
        for (const auto& [id, s] : series_)
            for (const auto& p : s.points)
                csv << id << "," << fmt_double(p.t_hours) << "," << fmt_double(p.intensity) << "\n";
        write_atomic(csv_path_, csv.str());

        nlohmann::ordered_json meta;
        for (const auto& [id, s] : series_) {
            nlohmann::ordered_json m;
            m["well_index"] = s.well_index;
            m["label"] = s.meta.label;
            if (s.meta.ph) m["ph"] = *s.meta.ph;
            if (s.meta.rho_area) m["rho_area_mg_cm2"] = *s.meta.rho_area;
            meta[id] = m;
        }
        write_atomic(sidecar_path(), meta.dump(2) + "\n");
    }

    std::filesystem::path sidecar_path() const {
        auto p = csv_path_;
        p.replace_extension(".meta.json");
        return p;
    }

    const std::map<std::string, IntensitySeries>& all() const { return series_; }

private:
    static void write_atomic(const std::filesystem::path& path, const std::string& content) {
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            require(out.good(), ErrorKind::Io, "cannot write " + tmp);
            out << content;
            require(out.good(), ErrorKind::Io, "failed writing " + tmp);
        }
        std::filesystem::rename(tmp, path);
    }

    void load() {
        std::ifstream in(csv_path_);
        require(in.good(), ErrorKind::Io, "cannot open " + csv_path_.string());
        std::string line;
        require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format,
                "empty series CSV: " + csv_path_.string());
        require(cube::detail::trim(line) == "sample_id,time_hours,intensity", ErrorKind::Format,
                "unexpected CSV header in " + csv_path_.string() + ": '" + line + "'");
        int line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (cube::detail::trim(line).empty()) continue;
            std::stringstream row(line);
            std::string id, t_str, i_str;
            const bool ok = static_cast<bool>(std::getline(row, id, ',')) &&
                            static_cast<bool>(std::getline(row, t_str, ',')) &&
                            static_cast<bool>(std::getline(row, i_str));
            require(ok, ErrorKind::Format,
                    csv_path_.string() + ":" + std::to_string(line_no) + ": malformed row");
            try {
                auto& s = series_[id];
                s.sample_id = id;
                s.points.push_back({std::stod(t_str), std::stod(i_str)});
            } catch (const std::exception&) {
                raise(ErrorKind::Format,
                      csv_path_.string() + ":" + std::to_string(line_no) + ": bad number");
            }
        }
        if (std::filesystem::exists(sidecar_path())) {
            std::ifstream ms(sidecar_path());
            nlohmann::json meta = nlohmann::json::parse(ms, nullptr, false);
            if (!meta.is_discarded()) {
                for (auto& [id, m] : meta.items()) {
                    auto it = series_.find(id);
                    if (it == series_.end()) continue;
                    it->second.well_index = m.value("well_index", -1);
                    it->second.meta.label = m.value("label", std::string{});
                    if (m.contains("ph")) it->second.meta.ph = m["ph"].get<double>();
                    if (m.contains("rho_area_mg_cm2"))
                        it->second.meta.rho_area = m["rho_area_mg_cm2"].get<double>();
                }
            }
        }
        for (auto& [id, s] : series_) s.validate();
    }

    std::filesystem::path csv_path_;
    std::map<std::string, IntensitySeries> series_;
};

// Advisory mass-per-area window check; returns a warning string when the tag
// exists and sits outside the 2-3 mg/cm^2 band.
inline std::optional<std::string> rho_area_warning(const SeriesMeta& meta) {
    if (!meta.rho_area) return std::nullopt;
    if (*meta.rho_area >= 2.0 && *meta.rho_area <= 3.0) return std::nullopt;
    return "rho_area " + fmt_double(*meta.rho_area) +
           " mg/cm^2 outside the recommended 2-3 mg/cm^2 window; optical linearity may degrade";
}

} // namespace hyperwell::series
