#include "cipher/eval/report.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <sstream>

#include "cipher/dataio/loader.hpp"
#include "cipher/error.hpp"

namespace cipher::eval {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("failed writing " + path.string());
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// RFC 4180 record splitting, quoted fields may span lines.
std::vector<std::vector<std::string>> csv_records(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            rec.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                rec.push_back(std::move(field));
                records.push_back(std::move(rec));
            }
            rec.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw DataError("csv: unterminated quoted field");
    if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
    }
    return records;
}

double parse_number(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("table: '" + s + "' is not a number");
    }
}

std::string strip_suffix(const std::string& header, const std::string& suffix) {
    if (header.size() <= suffix.size() || header.compare(header.size() - suffix.size(), suffix.size(), suffix) != 0) {
        throw DataError("table: header '" + header + "' does not end in '" + suffix + "'");
    }
    return header.substr(0, header.size() - suffix.size());
}

Table table_from_cells(const std::vector<std::vector<std::string>>& records) {
    if (records.empty()) throw DataError("table: no header row");
    const auto& header = records.front();
    if (header.size() < 3 || header.size() % 2 == 0 || header[0] != "Method") throw DataError("table: malformed header");
    Table t;
    for (std::size_t c = 1; c < header.size(); c += 2) {
        const auto name = strip_suffix(header[c], " Acc");
        if (strip_suffix(header[c + 1], " F1") != name) throw DataError("table: Acc/F1 headers disagree for " + name);
        t.corpora.push_back(name);
    }
    if (t.corpora.back() != "Average") throw DataError("table: last column pair must be Average");
    t.corpora.pop_back();
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != header.size()) throw DataError(fmt::format("table: row {} has {} cells, expected {}", r, rec.size(), header.size()));
        TableRow row;
        row.method = rec[0];
        for (std::size_t c = 1; c < rec.size(); c += 2) {
            row.acc.push_back(parse_number(rec[c]));
            row.f1.push_back(parse_number(rec[c + 1]));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string md_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

std::vector<std::string> md_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    std::size_t i = line.find('|');
    if (i == std::string::npos) return cells;
    for (++i; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '\\' && i + 1 < line.size()) {
            cur += line[++i];
        } else if (c == '|') {
            const auto b = cur.find_first_not_of(' ');
            const auto e = cur.find_last_not_of(' ');
            cells.push_back(b == std::string::npos ? std::string{} : cur.substr(b, e - b + 1));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return cells;
}

std::vector<std::string> header_cells(const Table& t) {
    std::vector<std::string> h{"Method"};
    for (const auto& c : t.corpora) {
        h.push_back(c + " Acc");
        h.push_back(c + " F1");
    }
    h.push_back("Average Acc");
    h.push_back("Average F1");
    return h;
}

void check_table(const Table& t) {
    if (t.rows.empty()) throw DataError("table has no rows");
    for (const auto& r : t.rows) {
        if (r.acc.size() != t.corpora.size() + 1 || r.f1.size() != t.corpora.size() + 1) throw ShapeError("table row width mismatch");
    }
}

}  // namespace

CorpusResult corpus_result(std::string name, const ConfusionMatrix& cm) {
    return {std::move(name), cm, exact_metrics(cm), metrics(cm)};
}

void finalize(EvalReport& report) {
    report.average = {};
    if (report.corpora.empty()) return;
    Fraction acc, p, r, f1;
    for (const auto& c : report.corpora) {
        acc = acc + c.exact.accuracy;
        p = p + c.exact.precision;
        r = r + c.exact.recall;
        f1 = f1 + c.exact.f1;
    }
    const Fraction inv(1, static_cast<std::int64_t>(report.corpora.size()));
    report.average = {100.0 * (acc * inv).value(), 100.0 * (p * inv).value(), 100.0 * (r * inv).value(), 100.0 * (f1 * inv).value()};
}

EvalReport evaluate_cross(const std::vector<NamedCorpus>& corpora, const detector::Detector& det, double threshold) {
    EvalReport report;
    for (const auto& corpus : corpora) {
        if (corpus.data.empty()) {
            spdlog::warn("evaluate: corpus '{}' is empty and was excluded", corpus.name);
            report.excluded.push_back(corpus.name);
            continue;
        }
        dataio::BatchLoader loader(corpus.data, {64, false, 0, det.resolution(), false});
        loader.start_epoch(0);
        std::vector<int> labels, decisions;
        while (auto batch = loader.next()) {
            const auto scores = det.detect(batch->images, threshold);
            for (std::size_t i = 0; i < scores.size(); ++i) {
                labels.push_back(batch->labels[i]);
                decisions.push_back(scores[i].decision == detector::Decision::Fake ? 1 : 0);
            }
        }
        if (!loader.report().skipped.empty()) {
            spdlog::warn("evaluate: {} unreadable images skipped in '{}'", loader.report().skipped.size(), corpus.name);
        }
        if (labels.empty()) {
            spdlog::warn("evaluate: corpus '{}' has no readable images and was excluded", corpus.name);
            report.excluded.push_back(corpus.name);
            continue;
        }
        report.corpora.push_back(corpus_result(corpus.name, confusion(labels, decisions)));
    }
    finalize(report);
    return report;
}

Table make_table(const std::vector<EvalReport>& reports) {
    if (reports.empty() || reports.front().corpora.empty()) throw DataError("cannot tabulate an empty report");
    Table t;
    for (const auto& c : reports.front().corpora) t.corpora.push_back(c.name);
    for (const auto& rep : reports) {
        if (rep.corpora.size() != t.corpora.size()) throw ShapeError("reports cover different corpora");
        TableRow row;
        row.method = rep.method;
        for (std::size_t i = 0; i < rep.corpora.size(); ++i) {
            if (rep.corpora[i].name != t.corpora[i]) throw ShapeError("reports list corpora in different orders");
            row.acc.push_back(round_percent(rep.corpora[i].metrics.accuracy));
            row.f1.push_back(round_percent(rep.corpora[i].metrics.f1));
        }
        row.acc.push_back(round_percent(rep.average.accuracy));
        row.f1.push_back(round_percent(rep.average.f1));
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string emit_csv(const Table& table) {
    check_table(table);
    std::string out;
    const auto header = header_cells(table);
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + csv_field(header[i]);
    out += "\r\n";
    for (const auto& r : table.rows) {
        out += csv_field(r.method);
        for (std::size_t i = 0; i < r.acc.size(); ++i) out += "," + format_percent(r.acc[i]) + "," + format_percent(r.f1[i]);
        out += "\r\n";
    }
    return out;
}

std::string emit_markdown(const Table& table) {
    check_table(table);
    std::string out = "|";
    const auto header = header_cells(table);
    for (const auto& h : header) out += " " + md_escape(h) + " |";
    out += "\n|";
    for (std::size_t i = 0; i < header.size(); ++i) out += i == 0 ? " --- |" : " ---: |";
    out += "\n";
    for (const auto& r : table.rows) {
        out += "| " + md_escape(r.method) + " |";
        for (std::size_t i = 0; i < r.acc.size(); ++i) out += " " + format_percent(r.acc[i]) + " | " + format_percent(r.f1[i]) + " |";
        out += "\n";
    }
    return out;
}

Table parse_csv(const std::string& text) { return table_from_cells(csv_records(text)); }

Table parse_markdown(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::istringstream in(text);
    std::string line;
    bool in_table = false, aligned = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const bool is_row = !line.empty() && line.front() == '|';
        if (!is_row) {
            if (in_table) break;
            continue;
        }
        in_table = true;
        auto cells = md_cells(line);
        if (records.size() == 1 && !aligned) {
            aligned = true;  // alignment row
            continue;
        }
        records.push_back(std::move(cells));
    }
    return table_from_cells(records);
}

void emit_table(const EvalReport& report, TableFormat format, const std::filesystem::path& path) {
    if (report.corpora.empty()) throw DataError("cannot emit a table for a report without corpora");
    const auto table = make_table({report});
    write_text(path, format == TableFormat::Csv ? emit_csv(table) : emit_markdown(table));
}

std::string report_markdown(const EvalReport& report) {
    std::string out = fmt::format("# Evaluation report\n\n- detector: `{}`\n- config hash: `{}`\n- timestamp: {}\n\n", report.detector_id,
                                  report.config_hash, report.timestamp);
    out += emit_markdown(make_table({report}));
    out += "\n| Corpus | TP | FP | TN | FN | Acc | P | R | F1 |\n| --- | ---: | ---: | ---: | ---: | ---: | ---: | ---: | ---: |\n";
    for (const auto& c : report.corpora) {
        out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n", md_escape(c.name), c.cm.tp, c.cm.fp, c.cm.tn, c.cm.fn,
                           format_percent(c.metrics.accuracy), format_percent(c.metrics.precision),
                           format_percent(c.metrics.recall), format_percent(c.metrics.f1));
    }
    if (!report.excluded.empty()) {
        out += "\nExcluded (empty): ";
        for (std::size_t i = 0; i < report.excluded.size(); ++i) out += (i ? ", " : "") + report.excluded[i];
        out += "\n";
    }
    return out;
}

std::filesystem::path write_report(const EvalReport& report, const std::filesystem::path& root) {
    const auto dir = root / report.detector_id;
    const auto csv = dir / (report.timestamp + ".csv");
    write_text(csv, emit_csv(make_table({report})));
    write_text(dir / (report.timestamp + ".md"), report_markdown(report));
    return csv;
}

std::vector<RegistryEntry> read_registry(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read corpus registry " + path.string());
    const auto base = path.parent_path();
    std::vector<RegistryEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string part;
        while (std::getline(ss, part, '\t')) parts.push_back(part);
        if (parts.size() < 2 || parts.size() > 3 || parts[0].empty() || parts[1].empty()) {
            throw DataError(fmt::format("{}:{}: expected name<TAB>manifest[<TAB>split]", path.string(), lineno));
        }
        RegistryEntry e;
        e.name = parts[0];
        e.manifest = std::filesystem::path(parts[1]);
        if (e.manifest.is_relative()) e.manifest = (base / e.manifest).lexically_normal();
        if (parts.size() == 3) e.split = dataio::parse_split(parts[2]);
        out.push_back(std::move(e));
    }
    return out;
}

void write_registry(const std::vector<RegistryEntry>& entries, const std::filesystem::path& path) {
    const auto base = std::filesystem::absolute(path).parent_path();
    std::string text;
    for (const auto& e : entries) {
        auto m = e.manifest.is_absolute() ? e.manifest.lexically_relative(base) : e.manifest;
        if (m.empty()) m = e.manifest;
        text += e.name + "\t" + m.generic_string();
        if (e.split) text += std::string("\t") + dataio::split_name(*e.split);
        text += "\n";
    }
    write_text(path, text);
}

}  // namespace cipher::eval
