#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elena/assets.hpp"
#include "elena/face_masker.hpp"
#include "elena/types.hpp"

namespace elena {

// Source-taxonomy label -> seven-label target. Lookup is case-insensitive.
class TaxonomyMap {
public:
    TaxonomyMap() = default;
    TaxonomyMap(SourceTaxonomy source, std::map<std::string, EkmanLabel> rules);

    // Rows: source_label <tab> target label.
    static TaxonomyMap from_tsv(SourceTaxonomy source, std::string_view text);
    // config/taxonomy/<source>.tsv from the asset store.
    static TaxonomyMap load(SourceTaxonomy source, const AssetStore& assets = {});

    SourceTaxonomy source() const { return source_; }
    const std::map<std::string, EkmanLabel>& rules() const { return rules_; }

    // Throws UnmappedSourceLabel.
    EkmanLabel map(std::string_view source_label) const;

private:
    SourceTaxonomy source_ = SourceTaxonomy::GENERIC;
    std::map<std::string, EkmanLabel> rules_;          // keyed by original spelling
    std::map<std::string, EkmanLabel> folded_rules_;   // keyed by lower-case form
};

std::string taxonomy_asset_key(SourceTaxonomy source);

EkmanLabel map_label(std::string_view source_label, const TaxonomyMap& map);

// Most frequent mapped label; ties go to the earliest label in canonical order
// (Happiness, Sadness, Anger, Fear, Disgust, Surprise, Neutral).
EkmanLabel modal_label(std::span<const std::string> source_labels, const TaxonomyMap& map);

// Upper third of a body box, the slice a visible face is expected to occupy.
Rect upper_body_slice(const Rect& body);

struct DominantChoice {
    std::size_t agent_index = 0;  // into the agents span
    EkmanLabel label = EkmanLabel::Neutral;
    double best_iou = 0.0;
    // False when no face cleared the threshold and the largest body box was
    // used instead.
    bool matched = false;
};

// `agents` are the annotated people of one image. The agent whose upper body
// slice has the highest IoU with any face box (at least iou_threshold) is
// chosen; otherwise the largest body box. Ties break on record_id, so the
// result does not depend on agent order.
DominantChoice dominant_emotion(std::span<const DatasetRecord> agents, const DetectionSet& faces,
                                const TaxonomyMap& map, double iou_threshold = 0.5);

}  // namespace elena
