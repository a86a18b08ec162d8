#pragma once

#include <string>
#include <vector>

#include "rotlab/capsnet.hpp"
#include "rotlab/protocol.hpp"

namespace rotlab {

struct MetricRow {
    std::string section;
    std::string name;
    double value = 0.0;
    std::string source;  // measured | paper | constant
};

struct ConfusionMatrix {
    std::vector<int> labels;               // class labels in index order
    std::vector<std::vector<int>> counts;  // [true][pred]

    bool empty() const { return labels.empty(); }
    void init(const std::vector<int>& class_labels);
    void add(int true_label, int pred_label);
    int row_sum(int true_index) const;
};

struct MetricsReport {
    std::string experiment;
    std::string config_hash;  // hex
    std::uint64_t seed = 0;
    std::vector<MetricRow> rows;
    ConfusionMatrix confusion;

    void add(const std::string& section, const std::string& name, double value,
             const std::string& source = "measured");
    bool has(const std::string& section, const std::string& name) const;
    double get(const std::string& section, const std::string& name) const;

    // deterministic CSV: section,name,value,source
    std::string csv() const;
    std::string confusion_csv() const;
    // human-readable report; annotates test_out accuracies with the 12.5%
    // eight-way chance level
    std::string text() const;
};

// The five published percentages, carried as constant reference data and
// labeled as such; never computed.
void append_paper_reference(MetricsReport& report);

struct EvalOptions {
    int max_train_eval = 1000;  // train-range accuracy sample cap (0 = all)
    int batch = 64;
};

// Accuracy over train-range (frozen parameters), test_in and test_out, with
// restricted-digit subsets reported separately and a confusion matrix over
// the test splits. Rejects a split with no samples anywhere.
void accuracy_report(const ClassifierModel& model, const SplitBundle& split, MetricsReport& report,
                     const EvalOptions& opts = {});

}  // namespace rotlab
