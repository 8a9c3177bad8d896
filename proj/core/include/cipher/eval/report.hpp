#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cipher/dataio/dataset.hpp"
#include "cipher/detector/detector.hpp"
#include "cipher/eval/metrics.hpp"

namespace cipher::eval {

struct CorpusResult {
    std::string name;
    ConfusionMatrix cm;
    ExactMetrics exact;
    Metrics metrics;
};

struct EvalReport {
    std::string method = "CIPHER";
    std::string detector_id;
    std::string config_hash;
    std::string timestamp;
    std::vector<CorpusResult> corpora;
    std::vector<std::string> excluded;  // empty corpora, skipped with a warning
    Metrics average;                    // unweighted mean over corpora
};

CorpusResult corpus_result(std::string name, const ConfusionMatrix& cm);

// Fills averages from the per-corpus entries.
void finalize(EvalReport& report);

struct NamedCorpus {
    std::string name;
    dataio::LabeledDataset data;
};

EvalReport evaluate_cross(const std::vector<NamedCorpus>& corpora, const detector::Detector& det, double threshold = 0.5);

// Wide table: one row per method, an (Acc, F1) pair per corpus, then Average.
struct TableRow {
    std::string method;
    std::vector<double> acc;  // corpus order, Average last
    std::vector<double> f1;
};

struct Table {
    std::vector<std::string> corpora;  // without the Average column
    std::vector<TableRow> rows;
};

Table make_table(const std::vector<EvalReport>& reports);

enum class TableFormat { Csv, Markdown };

std::string emit_csv(const Table& table);
std::string emit_markdown(const Table& table);
Table parse_csv(const std::string& text);
Table parse_markdown(const std::string& text);

void emit_table(const EvalReport& report, TableFormat format, const std::filesystem::path& path);

// Markdown document with run metadata, the table and per-corpus details.
std::string report_markdown(const EvalReport& report);

// Writes <root>/<detector_id>/<timestamp>.{csv,md}; returns the csv path.
std::filesystem::path write_report(const EvalReport& report, const std::filesystem::path& root);

// Registry lines: name<TAB>manifest[<TAB>split]; relative manifests resolve against the registry's directory.
struct RegistryEntry {
    std::string name;
    std::filesystem::path manifest;
    std::optional<dataio::Split> split;
};

std::vector<RegistryEntry> read_registry(const std::filesystem::path& path);
void write_registry(const std::vector<RegistryEntry>& entries, const std::filesystem::path& path);

}  // namespace cipher::eval
