#include "rotlab/metrics.hpp"

#include <cstdio>

#include "rotlab/transforms.hpp"

namespace rotlab {

void ConfusionMatrix::init(const std::vector<int>& class_labels) {
    labels = class_labels;
    counts.assign(labels.size(), std::vector<int>(labels.size(), 0));
}

namespace {
int index_of_label(const std::vector<int>& labels, int label) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return static_cast<int>(i);
    }
    throw Error("confusion matrix: unknown label " + std::to_string(label));
}
}  // namespace

void ConfusionMatrix::add(int true_label, int pred_label) {
    counts[static_cast<std::size_t>(index_of_label(labels, true_label))]
          [static_cast<std::size_t>(index_of_label(labels, pred_label))]++;
}

int ConfusionMatrix::row_sum(int true_index) const {
    int s = 0;
    for (int v : counts[static_cast<std::size_t>(true_index)]) s += v;
    return s;
}

void MetricsReport::add(const std::string& section, const std::string& name, double value,
                        const std::string& source) {
    rows.push_back({section, name, value, source});
}

bool MetricsReport::has(const std::string& section, const std::string& name) const {
    for (const MetricRow& r : rows) {
        if (r.section == section && r.name == name) return true;
    }
    return false;
}

double MetricsReport::get(const std::string& section, const std::string& name) const {
    for (const MetricRow& r : rows) {
        if (r.section == section && r.name == name) return r.value;
    }
    throw Error("metric " + section + "/" + name + " not found");
}

std::string MetricsReport::csv() const {
    std::string out = "section,name,value,source\n";
    char buf[128];
    for (const MetricRow& r : rows) {
        std::snprintf(buf, sizeof buf, ",%.17g,", r.value);
        out += r.section + "," + r.name + buf + r.source + "\n";
    }
    return out;
}

std::string MetricsReport::confusion_csv() const {
    if (confusion.empty()) return "";
    std::string out = "true\\pred";
    for (int l : confusion.labels) out += "," + std::to_string(l);
    out += "\n";
    for (std::size_t i = 0; i < confusion.labels.size(); ++i) {
        out += std::to_string(confusion.labels[i]);
        for (int v : confusion.counts[i]) out += "," + std::to_string(v);
        out += "\n";
    }
    return out;
}

std::string MetricsReport::text() const {
    std::string out;
    out += "experiment: " + experiment + "\n";
    out += "config_hash: " + config_hash + "\n";
    out += "seed: " + std::to_string(seed) + "\n\n";
    char buf[160];
    for (const MetricRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-14s %-28s %12.6g  [%s]", r.section.c_str(),
                      r.name.c_str(), r.value, r.source.c_str());
        out += buf;
        if (r.section == "accuracy" && r.name.rfind("test_out", 0) == 0 && r.source == "measured") {
            out += "   (8-way chance level: 1/8 = 12.5%)";
        }
        out += "\n";
    }
    if (!confusion.empty()) {
        out += "\nconfusion matrix over test splits (rows = true label):\n";
        out += confusion_csv();
    }
    return out;
}

void append_paper_reference(MetricsReport& report) {
    // published values quoted by the experiment being reproduced
    report.add("paper_reference", "dynamic_test_in_pct", 99.04, "paper");
    report.add("paper_reference", "em_test_in_pct", 98.27, "paper");
    report.add("paper_reference", "dynamic_test_out_pct", 1.05, "paper");
    report.add("paper_reference", "em_test_out_pct", 12.92, "paper");
    report.add("paper_reference", "dcnn_test_out_pct", 1.02, "paper");
    report.add("paper_reference", "chance_8way_pct", 12.5, "constant");
}

namespace {

struct SplitEval {
    int correct = 0;
    int total = 0;
    int restricted_correct = 0;
    int restricted_total = 0;
};

SplitEval eval_samples(const ClassifierModel& model, const std::vector<LabeledImage>& samples,
                       TransformKind kind, const RotationProtocol& protocol, int max_count,
                       int batch, ConfusionMatrix* confusion) {
    SplitEval ev;
    const int n = max_count > 0 ? std::min<int>(max_count, static_cast<int>(samples.size()))
                                : static_cast<int>(samples.size());
    for (int start = 0; start < n; start += batch) {
        const int count = std::min(batch, n - start);
        std::vector<Tensor> images;
        images.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            images.push_back(transformed(samples[static_cast<std::size_t>(start + i)], kind));
        }
        const auto preds = classify_batch(model, images);
        for (int i = 0; i < count; ++i) {
            const LabeledImage& s = samples[static_cast<std::size_t>(start + i)];
            const bool ok = preds[static_cast<std::size_t>(i)].label == s.label;
            ev.total++;
            ev.correct += ok;
            if (protocol.is_restricted(s.label)) {
                ev.restricted_total++;
                ev.restricted_correct += ok;
            }
            if (confusion) confusion->add(s.label, preds[static_cast<std::size_t>(i)].label);
        }
    }
    return ev;
}

}  // namespace

void accuracy_report(const ClassifierModel& model, const SplitBundle& split, MetricsReport& report,
                     const EvalOptions& opts) {
    if (split.train.empty() && split.test_in.empty() && split.test_out.empty()) {
        throw Error("accuracy_report: split has no samples");
    }
    report.confusion.init(model.classes().labels);
    const TransformKind kind = split.protocol.kind;

    if (!split.train.empty()) {
        const SplitEval ev = eval_samples(model, split.train, kind, split.protocol,
                                          opts.max_train_eval, opts.batch, nullptr);
        report.add("accuracy", "train_range", static_cast<double>(ev.correct) / ev.total);
        report.add("counts", "train_range_total", ev.total);
        if (ev.restricted_total > 0) {
            report.add("accuracy", "train_range_restricted",
                       static_cast<double>(ev.restricted_correct) / ev.restricted_total);
            report.add("counts", "train_range_restricted_total", ev.restricted_total);
        }
    }
    if (!split.test_in.empty()) {
        const SplitEval ev = eval_samples(model, split.test_in, kind, split.protocol, 0, opts.batch,
                                          &report.confusion);
        report.add("accuracy", "test_in", static_cast<double>(ev.correct) / ev.total);
        report.add("counts", "test_in_total", ev.total);
    }
    if (!split.test_out.empty()) {
        const SplitEval ev = eval_samples(model, split.test_out, kind, split.protocol, 0, opts.batch,
                                          &report.confusion);
        report.add("accuracy", "test_out", static_cast<double>(ev.correct) / ev.total);
        report.add("counts", "test_out_total", ev.total);
    }
}

}  // namespace rotlab
