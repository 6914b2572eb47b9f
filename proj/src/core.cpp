#include "shapex/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string_view>

namespace shapex {

namespace {

constexpr std::string_view kHeaderTag = "# shapex-dataset";

char delimiter_for(TextFormat format) { return format == TextFormat::csv ? ',' : '\t'; }

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

double parse_value(std::string_view tok, std::size_t row, std::size_t col) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    if (!tok.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (tok.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                         ": invalid numeric token '" + std::string(tok) + "'");
    }
    return v;
}

int parse_label(std::string_view tok, std::size_t row) {
    int label = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), label);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || label < 0) {
        throw ParseError("row " + std::to_string(row) + ": invalid label '" + std::string(tok) + "'");
    }
    return label;
}

struct Header {
    bool saliency = false;
    int classes = 0;
    std::string name;
};

std::optional<Header> parse_header(std::string_view line) {
    if (!line.starts_with(kHeaderTag)) return std::nullopt;
    Header h;
    std::istringstream in(std::string(line.substr(kHeaderTag.size())));
    std::string kv;
    while (in >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq);
        const auto val = kv.substr(eq + 1);
        if (key == "saliency") h.saliency = (val == "1");
        else if (key == "classes") h.classes = std::atoi(val.c_str());
        else if (key == "name") h.name = val;
    }
    return h;
}

} // namespace

void TimeSeries::validate() const {
    if (values.empty()) throw ShapeError("time series must have at least one timestep");
    for (double v : values) {
        if (!std::isfinite(v)) throw ParseError("time series contains a non-finite value");
    }
    if (label && *label < 0) throw ConfigError("negative class label");
    if (gt_saliency) {
        if (gt_saliency->size() != values.size()) {
            throw ShapeError("ground-truth saliency length differs from series length");
        }
        for (auto b : *gt_saliency) {
            if (b > 1) throw ParseError("ground-truth saliency must be binary");
        }
    }
}

bool Dataset::has_saliency() const noexcept {
    return !instances.empty() &&
           std::all_of(instances.begin(), instances.end(),
                       [](const TimeSeries& ts) { return ts.gt_saliency.has_value(); });
}

void Dataset::validate() const {
    if (instances.empty()) throw EmptyDataset();
    if (num_classes < 1) throw ConfigError("num_classes must be positive");
    const std::size_t T = series_length();
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& ts = instances[i];
        ts.validate();
        if (ts.length() != T) throw FormatError(i + 1, "series length differs from first instance");
        if (ts.label && *ts.label >= num_classes) {
            throw ConfigError("label " + std::to_string(*ts.label) + " out of range for " +
                              std::to_string(num_classes) + " classes");
        }
    }
}

bool SaliencyMap::normalized() const noexcept {
    return std::all_of(scores.begin(), scores.end(),
                       [](double s) { return std::isfinite(s) && s >= 0.0 && s <= 1.0; });
}

TextFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? TextFormat::csv : TextFormat::tsv;
}

Dataset parse_dataset(const std::string& text, TextFormat format, SaliencyColumns saliency,
                      std::string name) {
    const char delim = delimiter_for(format);
    Dataset ds;
    ds.name = std::move(name);
    bool with_saliency = saliency == SaliencyColumns::present;
    int header_classes = 0;
    std::size_t expected_fields = 0;
    std::size_t row = 0;
    int max_label = -1;

    std::istringstream in(text);
    std::string raw;
    while (std::getline(in, raw)) {
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            if (row == 0 && saliency == SaliencyColumns::detect) {
                if (auto h = parse_header(line)) {
                    with_saliency = h->saliency;
                    header_classes = h->classes;
                    if (!h->name.empty()) ds.name = h->name;
                }
            }
            continue;
        }
        ++row;
        if (line.find(':') != std::string_view::npos) {
            throw FormatError(row, "multivariate series are not supported");
        }
        const auto fields = split(line, delim);
        if (row == 1) {
            expected_fields = fields.size();
            const std::size_t payload = fields.size() - 1;
            if (payload == 0 || (with_saliency && payload % 2 != 0)) {
                throw FormatError(row, "expected label followed by series values");
            }
        } else if (fields.size() != expected_fields) {
            throw FormatError(row, "expected " + std::to_string(expected_fields) + " fields, got " +
                                       std::to_string(fields.size()));
        }
        const std::size_t T = with_saliency ? (fields.size() - 1) / 2 : fields.size() - 1;

        TimeSeries ts;
        if (fields[0] != "?") {
            ts.label = parse_label(fields[0], row);
            max_label = std::max(max_label, *ts.label);
        }
        ts.values.reserve(T);
        for (std::size_t j = 0; j < T; ++j) ts.values.push_back(parse_value(fields[1 + j], row, 1 + j));
        if (with_saliency) {
            std::vector<std::uint8_t> flags(T);
            for (std::size_t j = 0; j < T; ++j) {
                const auto tok = fields[1 + T + j];
                if (tok == "0") flags[j] = 0;
                else if (tok == "1") flags[j] = 1;
                else throw ParseError("row " + std::to_string(row) + ": saliency flag must be 0 or 1, got '" +
                                      std::string(tok) + "'");
            }
            ts.gt_saliency = std::move(flags);
        }
        ds.instances.push_back(std::move(ts));
    }
    if (ds.instances.empty()) throw EmptyDataset();
    ds.num_classes = std::max({1, max_label + 1, header_classes});
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, TextFormat format, SaliencyColumns saliency) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), format, saliency, path.stem().string());
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_dataset(const Dataset& ds, TextFormat format) {
    if (ds.empty()) throw EmptyDataset();
    ds.validate();
    const char delim = delimiter_for(format);
    const bool with_saliency = ds.has_saliency();
    std::string out;
    out += kHeaderTag;
    // Names with whitespace would break the key=value header.
    std::string name = ds.name;
    std::replace_if(name.begin(), name.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }, '_');
    if (!name.empty()) out += " name=" + name;
    out += " classes=" + std::to_string(ds.num_classes);
    out += with_saliency ? " saliency=1\n" : " saliency=0\n";
    for (const auto& ts : ds.instances) {
        out += ts.label ? std::to_string(*ts.label) : std::string("?");
        for (double v : ts.values) {
            out += delim;
            out += format_double(v);
        }
        if (with_saliency) {
            for (auto b : *ts.gt_saliency) {
                out += delim;
                out += b ? '1' : '0';
            }
        }
        out += '\n';
    }
    return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    const auto text = format_dataset(ds, format_from_path(path));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace shapex
