#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "app/app.hpp"
#include "rmab/errors.hpp"
#include "rmab/io.hpp"
#include "rmab/planning.hpp"

namespace rmab::app {

namespace {

// Splits "log_<label>_seed<S>.jsonl" into (label, S).
bool parse_log_name(const std::string& name, std::string& label, std::uint64_t& seed) {
    const std::string prefix = "log_", suffix = ".jsonl";
    if (name.size() <= prefix.size() + suffix.size() || name.rfind(prefix, 0) != 0 ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
        return false;
    const std::string core = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    const auto at = core.rfind("_seed");
    if (at == std::string::npos)
        return false;
    label = core.substr(0, at);
    try {
        seed = std::stoull(core.substr(at + 5));
    } catch (const std::exception&) {
        return false;
    }
    return true;
}

} // namespace

std::string dq_vs_epoch_csv(const fs::path& results_dir, const std::string& manifest_hash) {
    if (!fs::is_directory(results_dir))
        throw InputError(fmt::format("{} is not a results directory", results_dir.string()));
    std::vector<fs::path> logs;
    for (const auto& entry : fs::directory_iterator(results_dir))
        if (entry.is_regular_file())
            logs.push_back(entry.path());
    std::sort(logs.begin(), logs.end());

    std::string out = "loss,seed,epoch,validation_normalized_decomposed_dq,manifest_hash,version\n";
    int found = 0;
    for (const fs::path& path : logs) {
        std::string label;
        std::uint64_t seed = 0;
        if (!parse_log_name(path.filename().string(), label, seed))
            continue;
        ++found;
        std::istringstream in(read_file(path));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty())
                continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
                if (j.at("split").get<std::string>() != "validation")
                    continue;
                out += fmt::format("{},{},{},{:.17g},{},{}\n", label, seed,
                                   j.at("epoch").get<int>(),
                                   j.at("normalized_decomposed_dq").get<double>(), manifest_hash,
                                   toolkit_version());
            } catch (const nlohmann::json::exception& e) {
                throw InputError(fmt::format("{}: {}", path.string(), e.what()));
            }
        }
    }
    if (found == 0)
        throw InputError(fmt::format("no training logs in {}", results_dir.string()));
    return out;
}

std::string wi_scatter_csv(const SavedModel& saved, const Dataset& data,
                           const std::vector<int>& cohort_ids) {
    std::string out = "cohort,arm,true_wi,predicted_wi,selected,loss,seed,manifest_hash,version\n";
    for (int id : cohort_ids) {
        const Cohort& c = data.cohorts.at(static_cast<std::size_t>(id)).cohort;
        std::vector<std::vector<double>> features;
        for (const Arm& a : c.arms)
            features.push_back(a.features);
        const auto pred = saved.model.predict(features);
        const RewardSpec R = RewardSpec::engagement(c.num_states());
        std::vector<double> true_wi, pred_wi;
        for (int i = 0; i < c.num_arms(); ++i) {
            true_wi.push_back(whittle_index(c.arms[i].truth, R, c.setup).wi[0]);
            pred_wi.push_back(whittle_index(pred[i], R, c.setup).wi[0]);
        }
        std::vector<int> order(c.arms.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return pred_wi[a] > pred_wi[b]; });
        std::vector<bool> selected(order.size(), false);
        const auto picks = static_cast<std::size_t>(std::floor(c.budget));
        for (std::size_t k = 0; k < std::min(picks, order.size()); ++k)
            selected[static_cast<std::size_t>(order[k])] = true;
        for (int i = 0; i < c.num_arms(); ++i)
            out += fmt::format("{},{},{:.17g},{:.17g},{},{},{},{},{}\n", id, i, true_wi[i],
                               pred_wi[i], selected[i] ? 1 : 0, saved.loss, saved.seed,
                               saved.manifest_hash, saved.version);
    }
    return out;
}

} // namespace rmab::app
