#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace objdino {

// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct Box {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double area() const { return (x_max - x_min) * (y_max - y_min); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
};

double iou(const Box& a, const Box& b);

// Percent of predicted images whose box has IoU > 0.5 (strict) with some ground-truth box.
double corloc(const std::map<std::string, Box>& preds, const std::map<std::string, std::vector<Box>>& gts);

struct CaptionRecord {
    std::set<std::string> mentioned_objects;
    std::set<std::string> ground_truth_objects;
};

struct ChairScores {
    double chair_s = 0.0;
    double chair_i = 0.0;
};

ChairScores chair(std::span<const CaptionRecord> records);

struct BinaryOutcome {
    bool predicted = false;
    bool actual = false;
};

struct PopeScores {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

PopeScores pope_scores(std::span<const BinaryOutcome> outcomes);

// JSON-lines readers for the evaluation inputs.
std::map<std::string, Box> read_predictions(const std::filesystem::path& path);
std::map<std::string, std::vector<Box>> read_ground_truth_boxes(const std::filesystem::path& path);
// Surface forms are mapped through `synonyms` (surface -> canonical) before matching.
std::vector<CaptionRecord> read_caption_records(const std::filesystem::path& path,
                                                const std::map<std::string, std::string>& synonyms);
std::map<std::string, std::string> read_synonyms(const std::filesystem::path& path);
// Lines {"predicted": "yes"|"no"|bool, "actual": "yes"|"no"|bool}.
std::vector<BinaryOutcome> read_pope_outcomes(const std::filesystem::path& path);

}  // namespace objdino
