#include "objdino/metrics.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace objdino {

namespace {

void require_valid(const Box& b) {
    if (!b.valid()) throw MetricError("invalid box: min must be < max");
}

Box box_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 4) throw MetricError("box must have 4 coordinates");
    Box b{v[0], v[1], v[2], v[3]};
    require_valid(b);
    return b;
}

template <class Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw MetricError("cannot open " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw MetricError(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

bool yes_no(const nlohmann::json& j) {
    if (j.is_boolean()) return j.get<bool>();
    std::string s = j.get<std::string>();
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (s == "yes") return true;
    if (s == "no") return false;
    throw MetricError("expected yes/no, got '" + s + "'");
}

}  // namespace

double iou(const Box& a, const Box& b) {
    require_valid(a);
    require_valid(b);
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (w <= 0 || h <= 0) return 0.0;
    const double inter = w * h;
    return inter / (a.area() + b.area() - inter);
}

double corloc(const std::map<std::string, Box>& preds, const std::map<std::string, std::vector<Box>>& gts) {
    if (preds.empty()) throw MetricError("no predictions");
    std::size_t correct = 0;
    for (const auto& [image, pred] : preds) {
        const auto it = gts.find(image);
        if (it == gts.end() || it->second.empty())
            throw MetricError("image '" + image + "' has a prediction but no ground truth");
        double best = 0.0;
        for (const auto& gt : it->second) best = std::max(best, iou(pred, gt));
        if (best > 0.5) ++correct;
    }
    return 100.0 * double(correct) / double(preds.size());
}

ChairScores chair(std::span<const CaptionRecord> records) {
    if (records.empty()) throw MetricError("no caption records");
    std::size_t hallucinated_captions = 0, mentions = 0, hallucinated = 0;
    for (const auto& r : records) {
        std::size_t bad = 0;
        for (const auto& obj : r.mentioned_objects)
            if (!r.ground_truth_objects.contains(obj)) ++bad;
        mentions += r.mentioned_objects.size();
        hallucinated += bad;
        if (bad > 0) ++hallucinated_captions;
    }
    if (mentions == 0) throw MetricError("undefined denominator: no mentioned objects");
    return {100.0 * double(hallucinated_captions) / double(records.size()),
            100.0 * double(hallucinated) / double(mentions)};
}

PopeScores pope_scores(std::span<const BinaryOutcome> outcomes) {
    if (outcomes.empty()) throw MetricError("no outcomes");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& o : outcomes) {
        if (o.predicted && o.actual) ++tp;
        else if (o.predicted) ++fp;
        else if (o.actual) ++fn;
        else ++tn;
    }
    if (tp + fp == 0) throw MetricError("undefined precision: no positive predictions");
    if (tp + fn == 0) throw MetricError("undefined recall: no positive ground truth");
    PopeScores s;
    s.accuracy = 100.0 * double(tp + tn) / double(outcomes.size());
    s.precision = 100.0 * double(tp) / double(tp + fp);
    s.recall = 100.0 * double(tp) / double(tp + fn);
    s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::map<std::string, Box> read_predictions(const std::filesystem::path& path) {
    std::map<std::string, Box> out;
    for_each_json_line(path, [&](const nlohmann::json& j) {
        out[j.at("image_id").get<std::string>()] = box_from_json(j.at("bbox"));
    });
    return out;
}

std::map<std::string, std::vector<Box>> read_ground_truth_boxes(const std::filesystem::path& path) {
    std::map<std::string, std::vector<Box>> out;
    for_each_json_line(path, [&](const nlohmann::json& j) {
        auto& boxes = out[j.at("image_id").get<std::string>()];
        for (const auto& b : j.at("boxes")) boxes.push_back(box_from_json(b));
    });
    return out;
}

std::map<std::string, std::string> read_synonyms(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MetricError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in).get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw MetricError(path.string() + ": " + e.what());
    }
}

std::vector<CaptionRecord> read_caption_records(const std::filesystem::path& path,
                                                const std::map<std::string, std::string>& synonyms) {
    auto canonical = [&](const std::string& s) {
        const auto it = synonyms.find(s);
        return it == synonyms.end() ? s : it->second;
    };
    std::vector<CaptionRecord> out;
    for_each_json_line(path, [&](const nlohmann::json& j) {
        CaptionRecord r;
        for (const auto& s : j.at("mentioned")) r.mentioned_objects.insert(canonical(s.get<std::string>()));
        for (const auto& s : j.at("truth")) r.ground_truth_objects.insert(canonical(s.get<std::string>()));
        out.push_back(std::move(r));
    });
    return out;
}

std::vector<BinaryOutcome> read_pope_outcomes(const std::filesystem::path& path) {
    std::vector<BinaryOutcome> out;
    for_each_json_line(path, [&](const nlohmann::json& j) {
        out.push_back({yes_no(j.at("predicted")), yes_no(j.at("actual"))});
    });
    return out;
}

}  // namespace objdino
