#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "elena/types.hpp"

namespace elena {

struct LoadReport {
    std::string source;
    std::size_t records = 0;
    std::size_t skipped = 0;
    std::map<std::string, std::size_t> split_counts;
    std::vector<std::string> warnings;
};

Json to_json(const LoadReport& r);

struct Manifest {
    std::vector<DatasetRecord> records;
    SourceTaxonomy source_taxonomy = SourceTaxonomy::GENERIC;
    std::filesystem::path root_dir;
    // BESST ships pre-masked faces, so its runs default to Masked.
    std::optional<Condition> default_condition;
    LoadReport report;

    const DatasetRecord* find(std::string_view record_id) const;
};

// image_ref resolved against the manifest root unless already absolute.
std::filesystem::path resolve_image(const Manifest& manifest, const DatasetRecord& record);

struct LoadOptions {
    bool check_images = true;
};

// One DatasetRecord per JSONL line; image refs resolve relative to the file's
// directory. Throws SchemaError (with line number), DuplicateRecordId, or
// MissingImage listing every missing file. person_box bounds are checked
// against the decoded image.
Manifest load_generic(const std::filesystem::path& manifest_path, const LoadOptions& options = {});

// EMOTIC-style annotations as JSON: either a list of image entries or an
// object of split name -> list. Each entry:
//   {"filename", "folder", "image_size": {"n_col", "n_row"},
//    "person": [{"body_bbox": [x1, y1, x2, y2],
//                "annotations_categories": {"categories": [...]}}]}
// One record per annotated person; people without a body box are skipped and
// counted.
Manifest adapt_emotic(const std::filesystem::path& annotation_file, const std::filesystem::path& images_root,
                      SourceTaxonomy taxonomy = SourceTaxonomy::EMOTIC);

// HECO reuses the EMOTIC structure with its own taxonomy.
Manifest adapt_heco(const std::filesystem::path& annotation_file, const std::filesystem::path& images_root);

// CSV index with a header naming the columns image, emotion and view
// (frontal | averted).
Manifest adapt_besst(const std::filesystem::path& index_file, const std::filesystem::path& images_root);

// Writes the generic JSONL form. Image refs are written as absolute paths so
// the file loads from any directory.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Replaces characters outside [A-Za-z0-9._-] with '_'.
std::string sanitize_id(std::string_view raw);

}  // namespace elena
