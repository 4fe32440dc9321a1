#include "elena/label_atlas.hpp"

#include <array>

#include "elena/error.hpp"

namespace elena {

TaxonomyMap::TaxonomyMap(SourceTaxonomy source, std::map<std::string, EkmanLabel> rules)
    : source_(source), rules_(std::move(rules)) {
    for (const auto& [label, target] : rules_) {
        const auto [it, inserted] = folded_rules_.emplace(to_lower(trim(label)), target);
        if (!inserted && it->second != target) {
            fail(ErrorCode::Parse, "conflicting targets for source label '" + label + "'");
        }
    }
}

TaxonomyMap TaxonomyMap::from_tsv(SourceTaxonomy source, std::string_view text) {
    std::map<std::string, EkmanLabel> rules;
    for (const auto& row : parse_tsv(text)) {
        if (row.size() < 2) fail(ErrorCode::Parse, "taxonomy row needs two columns: " + row.front());
        const auto [it, inserted] = rules.emplace(row[0], parse_label(row[1]));
        if (!inserted) fail(ErrorCode::Parse, "source label listed twice: " + row[0]);
    }
    return TaxonomyMap(source, std::move(rules));
}

std::string taxonomy_asset_key(SourceTaxonomy source) {
    return "config/taxonomy/" + to_lower(to_string(source)) + ".tsv";
}

TaxonomyMap TaxonomyMap::load(SourceTaxonomy source, const AssetStore& assets) {
    return from_tsv(source, assets.read(taxonomy_asset_key(source)));
}

EkmanLabel TaxonomyMap::map(std::string_view source_label) const {
    auto it = folded_rules_.find(to_lower(trim(source_label)));
    if (it == folded_rules_.end()) {
        fail(ErrorCode::UnmappedSourceLabel, "no " + std::string(to_string(source_)) + " mapping for '" +
                                                 std::string(source_label) + "'");
    }
    return it->second;
}

EkmanLabel map_label(std::string_view source_label, const TaxonomyMap& map) { return map.map(source_label); }

EkmanLabel modal_label(std::span<const std::string> source_labels, const TaxonomyMap& map) {
    if (source_labels.empty()) fail(ErrorCode::InvalidArgument, "no gold labels to select from");
    std::array<int, kLabelCount> counts{};
    for (const auto& label : source_labels) ++counts[index_of(map.map(label))];
    std::size_t best = 0;
    for (std::size_t i = 1; i < kLabelCount; ++i) {
        if (counts[i] > counts[best]) best = i;
    }
    return kAllLabels[best];
}

Rect upper_body_slice(const Rect& body) { return {body.x, body.y, body.w, std::max(1, body.h / 3)}; }

DominantChoice dominant_emotion(std::span<const DatasetRecord> agents, const DetectionSet& faces,
                                const TaxonomyMap& map, double iou_threshold) {
    if (agents.empty()) fail(ErrorCode::InvalidArgument, "no agents to choose from");

    // Strictly better score wins; equal scores go to the smaller record_id.
    auto prefer = [&](std::size_t cand, double cand_score, std::size_t best, double best_score) {
        if (cand_score != best_score) return cand_score > best_score;
        return agents[cand].record_id < agents[best].record_id;
    };

    std::optional<std::size_t> chosen;
    double chosen_iou = -1.0;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        if (!agents[i].person_box) continue;
        const Rect slice = upper_body_slice(*agents[i].person_box);
        double best = 0.0;
        for (const auto& face : faces.faces) best = std::max(best, iou(face.rect, slice));
        if (best < iou_threshold) continue;
        if (!chosen || prefer(i, best, *chosen, chosen_iou)) {
            chosen = i;
            chosen_iou = best;
        }
    }

    DominantChoice result;
    if (chosen) {
        result.agent_index = *chosen;
        result.best_iou = chosen_iou;
        result.matched = true;
    } else {
        // NoAgentMatched: fall back to the largest body box.
        std::size_t best = 0;
        auto area = [&](std::size_t i) {
            return agents[i].person_box ? static_cast<double>(agents[i].person_box->area()) : -1.0;
        };
        for (std::size_t i = 1; i < agents.size(); ++i) {
            if (prefer(i, area(i), best, area(best))) best = i;
        }
        result.agent_index = best;
    }
    result.label = modal_label(agents[result.agent_index].gold_labels, map);
    return result;
}

}  // namespace elena
