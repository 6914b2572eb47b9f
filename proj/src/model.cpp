#include "shapex/model.hpp"

#include <algorithm>

namespace shapex {

std::vector<std::vector<double>> Classifier::predict_batch(std::span<const std::vector<double>> xs) const {
    std::vector<std::vector<double>> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(predict_proba(x));
    return out;
}

std::size_t argmax(std::span<const double> v) {
    return std::size_t(std::max_element(v.begin(), v.end()) - v.begin());
}

double accuracy(const Classifier& f, const Dataset& ds) {
    if (ds.empty()) throw EmptyDataset();
    std::size_t hits = 0;
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& ts = ds.instances[i];
        if (!ts.label) throw MissingLabel(i);
        ++labeled;
        if (argmax(f.predict_proba(ts.values)) == std::size_t(*ts.label)) ++hits;
    }
    return double(hits) / double(labeled);
}

ClassifierHandle open_classifier(const std::string& spec, std::size_t num_classes) {
    constexpr std::string_view builtin = "builtin:";
    constexpr std::string_view external = "external:";
    if (spec.starts_with(builtin)) return load_cnn(spec.substr(builtin.size()));
    if (spec.starts_with(external)) {
        return std::make_shared<ExternalClassifier>(spec.substr(external.size()), num_classes);
    }
    throw ConfigError("model must be builtin:PATH or external:CMD, got '" + spec + "'");
}

} // namespace shapex
