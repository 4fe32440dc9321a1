#include "elena/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

namespace fs = std::filesystem;

std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s(buf);
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
    return s;
}

long long ConfusionMatrix::answered() const {
    long long n = 0;
    for (const auto& row : counts) {
        for (auto c : row) n += c;
    }
    return n;
}

long long ConfusionMatrix::total() const {
    long long n = answered();
    for (auto u : unanswered) n += u;
    return n;
}

ConfusionMatrix build_confusion(std::span<const ScoredItem> items) {
    ConfusionMatrix cm;
    for (const auto& item : items) {
        const auto g = index_of(item.gold);
        if (const auto* label = std::get_if<EkmanLabel>(&item.prediction)) {
            ++cm.counts[g][index_of(*label)];
        } else {
            ++cm.unanswered[g];
        }
    }
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const long long total = cm.total();
    if (total == 0) fail(ErrorCode::EmptyMatrix, "EmptyMatrix: no evaluated records");
    auto ratio = [](long long num, long long den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; };

    MetricsReport m;
    long long trace = 0;
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        const long long tp = cm.counts[i][i];
        long long row = cm.unanswered[i];
        long long col = 0;
        for (std::size_t j = 0; j < kLabelCount; ++j) {
            row += cm.counts[i][j];
            col += cm.counts[j][i];
        }
        auto& c = m.per_class[i];
        c.precision = ratio(tp, col);
        c.recall = ratio(tp, row);
        c.f1 = (c.precision + c.recall) == 0.0 ? 0.0 : 2.0 * c.precision * c.recall / (c.precision + c.recall);
        c.support = row;
        trace += tp;
    }
    for (const auto& c : m.per_class) {
        m.macro_precision += c.precision;
        m.macro_recall += c.recall;
        m.macro_f1 += c.f1;
    }
    m.macro_precision /= static_cast<double>(kLabelCount);
    m.macro_recall /= static_cast<double>(kLabelCount);
    m.macro_f1 /= static_cast<double>(kLabelCount);
    m.accuracy = ratio(trace, total);
    return m;
}

DistributionReport build_distribution(std::span<const AnatomizedResponse> responses, Condition condition) {
    DistributionReport d;
    d.condition = condition;
    for (const auto& r : responses) {
        for (const auto& [term, region] : r.normalized_parts) {
            ++d.part_counts[term];
            ++d.region_counts[static_cast<std::size_t>(region)];
            ++d.total_mentions;
        }
        for (const auto& term : r.unrecognized_parts) {
            ++d.part_counts[term];
            ++d.region_counts[static_cast<std::size_t>(BodyRegion::Other)];
            ++d.total_mentions;
        }
    }
    const double total = static_cast<double>(d.total_mentions);
    std::vector<std::pair<std::string, std::size_t>> ordered(d.part_counts.begin(), d.part_counts.end());
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [term, count] : ordered) {
        d.part_percentages.emplace_back(term, total == 0.0 ? 0.0 : 100.0 * static_cast<double>(count) / total);
    }
    for (std::size_t i = 0; i < kAllRegions.size(); ++i) {
        d.region_percentages[i] = total == 0.0 ? 0.0 : 100.0 * static_cast<double>(d.region_counts[i]) / total;
    }
    return d;
}

namespace {

std::vector<std::pair<std::string, double>> sorted_regions(const DistributionReport& d) {
    std::vector<std::pair<std::string, double>> rows;
    std::vector<std::size_t> order = {0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return d.region_counts[a] > d.region_counts[b];
    });
    for (auto i : order) rows.emplace_back(std::string(display_name(kAllRegions[i])), d.region_percentages[i]);
    return rows;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

std::string lpad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

}  // namespace

std::string render_distribution_table(const DistributionReport& normal, const DistributionReport& masked,
                                      std::size_t top_n) {
    std::ostringstream out;
    const std::string rule(64, '-');
    auto row = [&](const std::string& a, const std::string& pa, const std::string& b, const std::string& pb) {
        out << pad(a, 22) << lpad(pa, 8) << " | " << pad(b, 22) << lpad(pb, 8) << '\n';
    };
    row("Normal Images", "%", "Face-Masked Images", "%");
    out << rule << '\n';
    for (std::size_t i = 0; i < top_n; ++i) {
        const bool has_a = i < normal.part_percentages.size();
        const bool has_b = i < masked.part_percentages.size();
        if (!has_a && !has_b) break;
        row(has_a ? normal.part_percentages[i].first : "", has_a ? format_fixed(normal.part_percentages[i].second, 2) : "",
            has_b ? masked.part_percentages[i].first : "", has_b ? format_fixed(masked.part_percentages[i].second, 2) : "");
    }
    out << rule << '\n' << "Anatomical Regions" << '\n' << rule << '\n';
    const auto ra = sorted_regions(normal);
    const auto rb = sorted_regions(masked);
    for (std::size_t i = 0; i < ra.size(); ++i) {
        row(ra[i].first, format_fixed(ra[i].second, 2), rb[i].first, format_fixed(rb[i].second, 2));
    }
    return out.str();
}

VadSummary summarize_vad(std::span<const ElenaOutput> outputs) {
    VadSummary s;
    std::map<EkmanLabel, VadScores> sums;
    for (const auto& o : outputs) {
        if (!o.vad) continue;
        auto& acc = sums[o.label];
        acc.valence += o.vad->valence;
        acc.arousal += o.vad->arousal;
        acc.dominance += o.vad->dominance;
        ++s.per_label_counts[o.label];
    }
    for (const auto& [label, sum] : sums) {
        const double n = static_cast<double>(s.per_label_counts[label]);
        s.per_label_means[label] = {sum.valence / n, sum.arousal / n, sum.dominance / n};
    }
    return s;
}

Json to_json(const ConfusionMatrix& cm) {
    Json labels = Json::array();
    for (auto l : kAllLabels) labels.push_back(std::string(to_string(l)));
    return Json{{"labels", labels}, {"counts", cm.counts}, {"unanswered", cm.unanswered}};
}

Json to_json(const MetricsReport& m) {
    Json per_class = Json::object();
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        const auto& c = m.per_class[i];
        per_class[std::string(to_string(kAllLabels[i]))] = {
            {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
    }
    return Json{{"per_class", per_class},
                {"macro_precision", m.macro_precision},
                {"macro_recall", m.macro_recall},
                {"macro_f1", m.macro_f1},
                {"accuracy", m.accuracy}};
}

Json to_json(const DistributionReport& d) {
    Json parts = Json::array();
    for (const auto& [term, pct] : d.part_percentages) {
        parts.push_back({{"term", term}, {"count", d.part_counts.at(term)}, {"percent", pct}});
    }
    Json regions = Json::array();
    for (std::size_t i = 0; i < kAllRegions.size(); ++i) {
        regions.push_back({{"region", std::string(to_string(kAllRegions[i]))},
                           {"count", d.region_counts[i]},
                           {"percent", d.region_percentages[i]}});
    }
    return Json{{"condition", std::string(to_string(d.condition))},
                {"total_mentions", d.total_mentions},
                {"parts", parts},
                {"regions", regions}};
}

Json to_json(const VadSummary& v) {
    Json out = Json::object();
    for (const auto& [label, mean] : v.per_label_means) {
        Json entry = to_json(mean);
        entry["count"] = v.per_label_counts.at(label);
        out[std::string(to_string(label))] = entry;
    }
    return out;
}

Json to_json(const EvaluationReport& r) {
    Json predicted = Json::object();
    for (std::size_t i = 0; i < kLabelCount; ++i) predicted[std::string(to_string(kAllLabels[i]))] = r.predicted_counts[i];
    return Json{
        {"run_id", r.run_id},
        {"provider_id", r.provider_id},
        {"prompt_kind", std::string(to_string(r.prompt_kind))},
        {"condition", std::string(to_string(r.condition))},
        {"exclude_failures", r.exclude_failures},
        {"counts",
         {{"records_in_manifest", r.records_in_manifest},
          {"records_evaluated", r.records_evaluated},
          {"records_missing", r.records_missing},
          {"records_not_dominant", r.records_not_dominant},
          {"dominant_fallbacks", r.dominant_fallbacks}}},
        {"failures_by_kind", r.failures_by_kind},
        {"validation_warnings", r.validation_warnings},
        {"confusion", to_json(r.confusion)},
        {"metrics", to_json(r.metrics)},
        {"predicted_counts", predicted},
        {"body_parts", to_json(r.distribution)},
        {"vad", to_json(r.vad)},
    };
}

EvaluationReport evaluation_report_from_json(const Json& j) {
    EvaluationReport r;
    try {
        r.run_id = j.at("run_id").get<std::string>();
        r.provider_id = j.at("provider_id").get<std::string>();
        r.prompt_kind = parse_prompt_kind(j.at("prompt_kind").get<std::string>());
        r.condition = parse_condition(j.at("condition").get<std::string>());
        r.exclude_failures = j.at("exclude_failures").get<bool>();
        const auto& c = j.at("counts");
        r.records_in_manifest = c.at("records_in_manifest").get<std::size_t>();
        r.records_evaluated = c.at("records_evaluated").get<std::size_t>();
        r.records_missing = c.at("records_missing").get<std::size_t>();
        r.records_not_dominant = c.at("records_not_dominant").get<std::size_t>();
        r.dominant_fallbacks = c.at("dominant_fallbacks").get<std::size_t>();
        r.failures_by_kind = j.at("failures_by_kind").get<std::map<std::string, std::size_t>>();
        r.validation_warnings = j.at("validation_warnings").get<std::map<std::string, std::size_t>>();
        r.confusion.counts = j.at("confusion").at("counts").get<Grid7>();
        r.confusion.unanswered = j.at("confusion").at("unanswered").get<std::array<long long, kLabelCount>>();
        const auto& m = j.at("metrics");
        for (std::size_t i = 0; i < kLabelCount; ++i) {
            const auto& pc = m.at("per_class").at(std::string(to_string(kAllLabels[i])));
            r.metrics.per_class[i] = {pc.at("precision").get<double>(), pc.at("recall").get<double>(),
                                      pc.at("f1").get<double>(), pc.at("support").get<long long>()};
            r.predicted_counts[i] = j.at("predicted_counts").at(std::string(to_string(kAllLabels[i]))).get<long long>();
        }
        r.metrics.macro_precision = m.at("macro_precision").get<double>();
        r.metrics.macro_recall = m.at("macro_recall").get<double>();
        r.metrics.macro_f1 = m.at("macro_f1").get<double>();
        r.metrics.accuracy = m.at("accuracy").get<double>();
        const auto& bp = j.at("body_parts");
        r.distribution.condition = parse_condition(bp.at("condition").get<std::string>());
        r.distribution.total_mentions = bp.at("total_mentions").get<std::size_t>();
        for (const auto& p : bp.at("parts")) {
            const auto term = p.at("term").get<std::string>();
            r.distribution.part_percentages.emplace_back(term, p.at("percent").get<double>());
            r.distribution.part_counts[term] = p.at("count").get<std::size_t>();
        }
        for (const auto& reg : bp.at("regions")) {
            const auto idx = static_cast<std::size_t>(parse_region(reg.at("region").get<std::string>()));
            r.distribution.region_counts[idx] = reg.at("count").get<std::size_t>();
            r.distribution.region_percentages[idx] = reg.at("percent").get<double>();
        }
        for (const auto& [label, v] : j.at("vad").items()) {
            const auto l = parse_label(label);
            r.vad.per_label_means[l] = {v.at("valence").get<double>(), v.at("arousal").get<double>(),
                                        v.at("dominance").get<double>()};
            r.vad.per_label_counts[l] = v.at("count").get<std::size_t>();
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::Schema, std::string("malformed report.json: ") + e.what());
    }
    return r;
}

std::string render_text_summary(const EvaluationReport& r) {
    std::ostringstream out;
    out << "Run " << r.run_id << " (provider " << r.provider_id << ", " << to_string(r.prompt_kind) << ", "
        << to_string(r.condition) << ")\n";
    out << "Records: " << r.records_evaluated << " evaluated of " << r.records_in_manifest << " in manifest";
    if (r.records_missing) out << ", " << r.records_missing << " without predictions";
    if (r.records_not_dominant) out << ", " << r.records_not_dominant << " non-dominant agents skipped";
    out << '\n';
    if (!r.failures_by_kind.empty()) {
        out << "Unanswered:";
        for (const auto& [kind, n] : r.failures_by_kind) out << ' ' << kind << '=' << n;
        out << (r.exclude_failures ? " (excluded from metrics)\n" : " (scored as wrong)\n");
    }
    out << "\nMacro precision " << format_fixed(100 * r.metrics.macro_precision, 1) << "  recall "
        << format_fixed(100 * r.metrics.macro_recall, 1) << "  F1 " << format_fixed(100 * r.metrics.macro_f1, 1)
        << "  accuracy " << format_fixed(100 * r.metrics.accuracy, 1) << "\n\n";
    out << pad("Label", 12) << lpad("P", 8) << lpad("R", 8) << lpad("F1", 8) << lpad("Support", 9) << '\n';
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        const auto& c = r.metrics.per_class[i];
        out << pad(std::string(to_string(kAllLabels[i])), 12) << lpad(format_fixed(100 * c.precision, 1), 8)
            << lpad(format_fixed(100 * c.recall, 1), 8) << lpad(format_fixed(100 * c.f1, 1), 8)
            << lpad(std::to_string(c.support), 9) << '\n';
    }
    out << "\nConfusion (rows gold, columns predicted, last column unanswered)\n" << pad("", 11);
    for (auto l : kAllLabels) out << lpad(std::string(to_string(l)).substr(0, 4), 6);
    out << lpad("n/a", 6) << '\n';
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        out << pad(std::string(to_string(kAllLabels[i])), 11);
        for (std::size_t j = 0; j < kLabelCount; ++j) out << lpad(std::to_string(r.confusion.counts[i][j]), 6);
        out << lpad(std::to_string(r.confusion.unanswered[i]), 6) << '\n';
    }
    if (r.distribution.total_mentions > 0) {
        out << "\nTop body part mentions (" << r.distribution.total_mentions << " mentions)\n";
        for (std::size_t i = 0; i < std::min<std::size_t>(10, r.distribution.part_percentages.size()); ++i) {
            const auto& [term, pct] = r.distribution.part_percentages[i];
            out << "  " << pad(term, 20) << lpad(format_fixed(pct, 2), 7) << '\n';
        }
        out << "Anatomical regions\n";
        for (const auto& [name, pct] : sorted_regions(r.distribution)) {
            out << "  " << pad(name, 20) << lpad(format_fixed(pct, 2), 7) << '\n';
        }
    }
    if (!r.vad.per_label_means.empty()) {
        out << "\nMean VAD by predicted label\n";
        for (const auto& [label, m] : r.vad.per_label_means) {
            out << "  " << pad(std::string(to_string(label)), 10) << " V " << format_fixed(m.valence, 2) << "  A "
                << format_fixed(m.arousal, 2) << "  D " << format_fixed(m.dominance, 2) << "  (n="
                << r.vad.per_label_counts.at(label) << ")\n";
        }
    }
    return out.str();
}

void emit_report(const EvaluationReport& report, const fs::path& dir) {
    try {
        write_text_file(dir / "report.json", to_json(report).dump(2) + "\n");
        write_text_file(dir / "report.txt", render_text_summary(report));

        std::ostringstream confusion;
        confusion << "gold";
        for (auto l : kAllLabels) confusion << ',' << to_string(l);
        confusion << ",unanswered\n";
        for (std::size_t i = 0; i < kLabelCount; ++i) {
            confusion << to_string(kAllLabels[i]);
            for (std::size_t j = 0; j < kLabelCount; ++j) confusion << ',' << report.confusion.counts[i][j];
            confusion << ',' << report.confusion.unanswered[i] << '\n';
        }
        write_text_file(dir / "plots" / "confusion.csv", confusion.str());

        std::ostringstream per_cat;
        per_cat << "label,precision,recall,f1,support\n";
        for (std::size_t i = 0; i < kLabelCount; ++i) {
            const auto& c = report.metrics.per_class[i];
            per_cat << to_string(kAllLabels[i]) << ',' << format_fixed(c.precision, 6) << ','
                    << format_fixed(c.recall, 6) << ',' << format_fixed(c.f1, 6) << ',' << c.support << '\n';
        }
        write_text_file(dir / "plots" / "per_category.csv", per_cat.str());

        std::ostringstream radar;
        radar << "label,predicted_count\n";
        for (std::size_t i = 0; i < kLabelCount; ++i) {
            radar << to_string(kAllLabels[i]) << ',' << report.predicted_counts[i] << '\n';
        }
        write_text_file(dir / "plots" / "radar_counts.csv", radar.str());

        std::ostringstream vad;
        vad << "label,valence,arousal,dominance,count\n";
        for (const auto& [label, m] : report.vad.per_label_means) {
            vad << to_string(label) << ',' << format_fixed(m.valence, 6) << ',' << format_fixed(m.arousal, 6) << ','
                << format_fixed(m.dominance, 6) << ',' << report.vad.per_label_counts.at(label) << '\n';
        }
        write_text_file(dir / "plots" / "vad.csv", vad.str());

        std::ostringstream parts;
        parts << "term,count,percent\n";
        for (const auto& [term, pct] : report.distribution.part_percentages) {
            std::string quoted = term;
            if (quoted.find_first_of(",\"") != std::string::npos) {
                std::string esc;
                for (char ch : quoted) esc += ch == '"' ? std::string("\"\"") : std::string(1, ch);
                quoted = '"' + esc + '"';
            }
            parts << quoted << ',' << report.distribution.part_counts.at(term) << ',' << format_fixed(pct, 4) << '\n';
        }
        write_text_file(dir / "plots" / "body_parts.csv", parts.str());

        std::ostringstream regions;
        regions << "region,count,percent\n";
        for (std::size_t i = 0; i < kAllRegions.size(); ++i) {
            regions << to_string(kAllRegions[i]) << ',' << report.distribution.region_counts[i] << ','
                    << format_fixed(report.distribution.region_percentages[i], 4) << '\n';
        }
        write_text_file(dir / "plots" / "regions.csv", regions.str());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Write) throw;
        fail(ErrorCode::Write, e.what());
    } catch (const fs::filesystem_error& e) {
        fail(ErrorCode::Write, e.what());
    }
}

Comparison compare_reports(const EvaluationReport& a, const EvaluationReport& b) {
    Comparison c;
    c.run_a = a.run_id;
    c.run_b = b.run_id;
    auto add = [&](std::string name, double va, double vb) {
        c.rows.push_back({std::move(name), 100 * va, 100 * vb, 100 * (vb - va)});
    };
    add("macro_f1", a.metrics.macro_f1, b.metrics.macro_f1);
    add("macro_precision", a.metrics.macro_precision, b.metrics.macro_precision);
    add("macro_recall", a.metrics.macro_recall, b.metrics.macro_recall);
    add("accuracy", a.metrics.accuracy, b.metrics.accuracy);
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        add("f1_" + to_lower(to_string(kAllLabels[i])), a.metrics.per_class[i].f1, b.metrics.per_class[i].f1);
    }
    if (a.condition != b.condition) {
        const bool a_normal = a.condition == Condition::Normal;
        c.body_part_table = render_distribution_table(a_normal ? a.distribution : b.distribution,
                                                      a_normal ? b.distribution : a.distribution);
    }
    return c;
}

std::string render_comparison(const Comparison& c) {
    std::ostringstream out;
    out << pad("metric", 18) << lpad(c.run_a, 14) << lpad(c.run_b, 14) << lpad("delta", 10) << '\n';
    for (const auto& r : c.rows) {
        const std::string arrow = r.delta > 0 ? " ↑" : (r.delta < 0 ? " ↓" : "  ");
        std::string delta = format_fixed(r.delta, 1);
        if (r.delta > 0) delta = "+" + delta;
        out << pad(r.metric, 18) << lpad(format_fixed(r.a, 1), 14) << lpad(format_fixed(r.b, 1), 14)
            << lpad(delta, 8) << arrow << '\n';
    }
    if (!c.body_part_table.empty()) out << '\n' << c.body_part_table;
    return out.str();
}

std::string comparison_csv(const Comparison& c) {
    std::ostringstream out;
    out << "metric," << c.run_a << ',' << c.run_b << ",delta\n";
    for (const auto& r : c.rows) {
        std::string delta = format_fixed(r.delta, 4);
        if (r.delta > 0) delta = "+" + delta;
        out << r.metric << ',' << format_fixed(r.a, 4) << ',' << format_fixed(r.b, 4) << ',' << delta << '\n';
    }
    return out.str();
}

}  // namespace elena
