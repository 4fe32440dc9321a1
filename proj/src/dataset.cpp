#include "elena/dataset.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    out.push_back(trim(cell));
    return out;
}

std::optional<std::pair<int, int>> image_dimensions(const fs::path& path) {
    const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) return std::nullopt;
    return std::make_pair(m.cols, m.rows);
}

std::vector<std::string> person_categories(const Json& person) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto take = [&](const Json& list) {
        if (!list.is_array()) return;
        for (const auto& c : list) {
            if (c.is_string() && seen.insert(c.get<std::string>()).second) out.push_back(c.get<std::string>());
        }
    };
    if (person.contains("combined_categories")) {
        take(person.at("combined_categories"));
        return out;
    }
    if (!person.contains("annotations_categories")) return out;
    const auto& ann = person.at("annotations_categories");
    if (ann.is_object()) {
        take(ann.value("categories", Json::array()));
    } else if (ann.is_array()) {
        for (const auto& a : ann) {
            if (a.is_object()) take(a.value("categories", Json::array()));
        }
    }
    return out;
}

}  // namespace

Json to_json(const LoadReport& r) {
    return Json{{"source", r.source},   {"records", r.records},         {"skipped", r.skipped},
                {"warnings", r.warnings}, {"split_counts", r.split_counts}};
}

const DatasetRecord* Manifest::find(std::string_view record_id) const {
    for (const auto& r : records) {
        if (r.record_id == record_id) return &r;
    }
    return nullptr;
}

fs::path resolve_image(const Manifest& manifest, const DatasetRecord& record) {
    const fs::path ref(record.image_ref);
    if (ref.is_absolute()) return ref;
    return manifest.root_dir / ref;
}

std::string sanitize_id(std::string_view raw) {
    std::string out;
    for (char c : raw) {
        const auto u = static_cast<unsigned char>(c);
        out += (std::isalnum(u) || c == '.' || c == '_' || c == '-') ? c : '_';
    }
    return out;
}

Manifest load_generic(const fs::path& manifest_path, const LoadOptions& options) {
    std::ifstream in(manifest_path);
    if (!in) fail(ErrorCode::Io, "cannot open manifest " + manifest_path.string());
    Manifest m;
    m.root_dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
    m.report.source = manifest_path.filename().string();

    std::set<std::string> ids;
    std::set<SourceTaxonomy> taxonomies;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
        const auto j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) fail(ErrorCode::Schema, where + ": malformed JSON");
        DatasetRecord r;
        try {
            r = record_from_json(j);
        } catch (const Error& e) {
            fail(ErrorCode::Schema, where + ": " + e.what());
        } catch (const Json::exception& e) {
            fail(ErrorCode::Schema, where + ": " + e.what());
        }
        if (!ids.insert(r.record_id).second) {
            fail(ErrorCode::DuplicateRecordId, where + ": duplicate record_id '" + r.record_id + "'");
        }
        taxonomies.insert(r.source_taxonomy);
        m.records.push_back(std::move(r));
    }
    m.source_taxonomy = taxonomies.size() == 1 ? *taxonomies.begin() : SourceTaxonomy::GENERIC;

    if (options.check_images) {
        std::vector<std::string> missing;
        for (const auto& r : m.records) {
            if (!fs::exists(resolve_image(m, r))) missing.push_back(resolve_image(m, r).string());
        }
        if (!missing.empty()) {
            std::string msg = std::to_string(missing.size()) + " image(s) missing:";
            for (const auto& p : missing) msg += "\n  " + p;
            fail(ErrorCode::MissingImage, msg);
        }
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            const auto& r = m.records[i];
            if (!r.person_box) continue;
            const auto dims = image_dimensions(resolve_image(m, r));
            if (!dims) fail(ErrorCode::Schema, "record '" + r.record_id + "': image cannot be decoded");
            const auto& b = *r.person_box;
            if (b.x < 0 || b.y < 0 || b.x + b.w > dims->first || b.y + b.h > dims->second) {
                fail(ErrorCode::Schema, "record '" + r.record_id + "': person_box exceeds image bounds " +
                                            std::to_string(dims->first) + "x" + std::to_string(dims->second));
            }
        }
    }
    m.report.records = m.records.size();
    m.report.split_counts["all"] = m.records.size();
    return m;
}

Manifest adapt_emotic(const fs::path& annotation_file, const fs::path& images_root, SourceTaxonomy taxonomy) {
    const auto text = read_text_file(annotation_file);
    const auto root = Json::parse(text, nullptr, false);
    if (root.is_discarded()) fail(ErrorCode::AnnotationParse, annotation_file.string() + ": malformed JSON");

    std::vector<std::pair<std::string, const Json*>> splits;
    if (root.is_array()) {
        splits.emplace_back("all", &root);
    } else if (root.is_object()) {
        for (const auto& [name, value] : root.items()) {
            if (!value.is_array()) fail(ErrorCode::AnnotationParse, "split '" + name + "' is not a list");
            splits.emplace_back(name, &value);
        }
    } else {
        fail(ErrorCode::AnnotationParse, annotation_file.string() + ": expected a list or an object of splits");
    }

    Manifest m;
    m.source_taxonomy = taxonomy;
    m.root_dir = images_root;
    m.report.source = std::string(to_string(taxonomy));
    std::set<std::string> ids;
    for (const auto& [split, entries] : splits) {
        std::size_t split_count = 0;
        for (std::size_t e = 0; e < entries->size(); ++e) {
            const auto& entry = (*entries)[e];
            const std::string where = split + "[" + std::to_string(e) + "]";
            if (!entry.is_object() || !entry.contains("filename") || !entry.at("filename").is_string()) {
                fail(ErrorCode::AnnotationParse, where + ": entry needs a string 'filename'");
            }
            const std::string filename = entry.at("filename").get<std::string>();
            const std::string folder = entry.value("folder", "");
            const fs::path image_ref = folder.empty() ? fs::path(filename) : fs::path(folder) / filename;
            std::optional<std::pair<int, int>> dims;
            if (entry.contains("image_size")) {
                const auto& s = entry.at("image_size");
                dims = std::make_pair(s.value("n_col", 0), s.value("n_row", 0));
            }
            if (!entry.contains("person") || !entry.at("person").is_array()) {
                fail(ErrorCode::AnnotationParse, where + ": entry needs a 'person' list");
            }
            const auto& people = entry.at("person");
            for (std::size_t p = 0; p < people.size(); ++p) {
                const auto& person = people[p];
                const std::string pwhere = where + ".person[" + std::to_string(p) + "]";
                DatasetRecord r;
                r.record_id = sanitize_id((folder.empty() ? "" : folder + "_") + fs::path(filename).stem().string() +
                                         "_p" + std::to_string(p));
                if (splits.size() > 1) r.record_id = sanitize_id(split) + "_" + r.record_id;
                r.image_ref = image_ref.generic_string();
                r.source_taxonomy = taxonomy;
                r.attributes["split"] = split;
                r.gold_labels = person_categories(person);
                const auto bbox = person.value("body_bbox", Json());
                if (!bbox.is_array() || bbox.size() != 4) {
                    ++m.report.skipped;
                    m.report.warnings.push_back(pwhere + ": missing body box, skipped");
                    continue;
                }
                const int x1 = static_cast<int>(std::lround(bbox[0].get<double>()));
                const int y1 = static_cast<int>(std::lround(bbox[1].get<double>()));
                const int x2 = static_cast<int>(std::lround(bbox[2].get<double>()));
                const int y2 = static_cast<int>(std::lround(bbox[3].get<double>()));
                Rect box{x1, y1, x2 - x1, y2 - y1};
                if (dims && dims->first > 0 && dims->second > 0) {
                    const Rect clipped = intersect(box, {0, 0, dims->first, dims->second});
                    if (!(clipped == box)) m.report.warnings.push_back(pwhere + ": body box clipped to image bounds");
                    box = clipped;
                }
                if (box.w <= 0 || box.h <= 0) {
                    ++m.report.skipped;
                    m.report.warnings.push_back(pwhere + ": empty body box, skipped");
                    continue;
                }
                r.person_box = box;
                if (r.gold_labels.empty()) {
                    ++m.report.skipped;
                    m.report.warnings.push_back(pwhere + ": no emotion categories, skipped");
                    continue;
                }
                if (!ids.insert(r.record_id).second) {
                    fail(ErrorCode::AnnotationParse, pwhere + ": duplicate record id '" + r.record_id + "'");
                }
                m.records.push_back(std::move(r));
                ++split_count;
            }
        }
        m.report.split_counts[split] = split_count;
    }
    m.report.records = m.records.size();
    return m;
}

Manifest adapt_heco(const fs::path& annotation_file, const fs::path& images_root) {
    return adapt_emotic(annotation_file, images_root, SourceTaxonomy::HECO);
}

Manifest adapt_besst(const fs::path& index_file, const fs::path& images_root) {
    std::ifstream in(index_file);
    if (!in) fail(ErrorCode::Io, "cannot open index " + index_file.string());
    Manifest m;
    m.source_taxonomy = SourceTaxonomy::BESST;
    m.root_dir = images_root;
    m.default_condition = Condition::Masked;
    m.report.source = "BESST";

    std::string line;
    std::size_t line_no = 0;
    std::optional<std::size_t> col_image, col_emotion, col_view;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string where = index_file.string() + ":" + std::to_string(line_no);
        if (!col_image) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                const auto name = to_lower(cells[i]);
                if (name == "image") col_image = i;
                if (name == "emotion") col_emotion = i;
                if (name == "view") col_view = i;
            }
            if (!col_image || !col_emotion || !col_view) {
                fail(ErrorCode::AnnotationParse, where + ": header must name image, emotion and view columns");
            }
            continue;
        }
        const auto need = std::max({*col_image, *col_emotion, *col_view});
        if (cells.size() <= need) fail(ErrorCode::AnnotationParse, where + ": too few columns");
        DatasetRecord r;
        r.image_ref = cells[*col_image];
        EkmanLabel label;
        try {
            label = parse_label(cells[*col_emotion]);
        } catch (const Error&) {
            fail(ErrorCode::AnnotationParse, where + ": unknown emotion '" + cells[*col_emotion] + "'");
        }
        const auto view = to_lower(cells[*col_view]);
        if (view != "frontal" && view != "averted") {
            fail(ErrorCode::AnnotationParse, where + ": view must be frontal or averted, got '" + cells[*col_view] + "'");
        }
        r.gold_labels = {std::string(to_string(label))};
        r.source_taxonomy = SourceTaxonomy::BESST;
        r.attributes["view"] = view;
        r.record_id = sanitize_id(fs::path(r.image_ref).replace_extension().generic_string());
        if (!ids.insert(r.record_id).second) {
            fail(ErrorCode::AnnotationParse, where + ": duplicate image '" + r.image_ref + "'");
        }
        ++m.report.split_counts[view];
        m.records.push_back(std::move(r));
    }
    if (!col_image) fail(ErrorCode::AnnotationParse, index_file.string() + ": empty index");
    m.report.records = m.records.size();
    return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
    std::ostringstream out;
    for (auto r : manifest.records) {
        r.image_ref = fs::absolute(resolve_image(manifest, r)).lexically_normal().generic_string();
        out << to_json(r).dump() << '\n';
    }
    write_text_file(path, out.str());
}

}  // namespace elena
