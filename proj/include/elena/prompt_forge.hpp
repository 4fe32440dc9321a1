#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "elena/assets.hpp"
#include "elena/types.hpp"

namespace elena {

inline constexpr std::string_view kDefaultPromptVersion = "v1";
// Every masked-condition template carries this clause; normal ones never do.
inline constexpr std::string_view kMaskClause = "not to focus on the facial area";

struct PromptBundle {
    std::string system_text;
    std::string user_text;
    PromptKind prompt_kind = PromptKind::Elena;
    Condition condition = Condition::Normal;
    std::string template_version;
    bool operator==(const PromptBundle&) const = default;
};

// Template asset key, e.g. "prompts/elena/masked/v1.txt".
std::string template_key(PromptKind kind, Condition condition, std::string_view version);

// Loads the versioned template and substitutes the label list. The
// {{person_clause}} and {{description}} slots stay open until
// instantiate_prompt.
PromptBundle build_prompt(PromptKind kind, Condition condition, const AssetStore& assets = {},
                          std::string_view version = kDefaultPromptVersion);

struct PromptContext {
    // Salient-person box as fractions of the image size.
    std::optional<std::array<double, 4>> person_box_normalized;
    // Stage-one text for TwoStepParse.
    std::string description;
};

std::optional<std::array<double, 4>> normalize_box(const std::optional<Rect>& box, int image_w, int image_h);
PromptBundle instantiate_prompt(PromptBundle bundle, const PromptContext& context);

// Quoted keys a template demands in its JSON answer, e.g. "label".
std::vector<std::string> demanded_json_keys(const PromptBundle& bundle);

struct Attachment {
    std::filesystem::path path;
    std::string mime_type;
};

struct Message {
    std::string role;  // "system" or "user"
    std::string text;
    std::optional<Attachment> attachment;
};

// Provider-neutral request: role-tagged messages plus bookkeeping.
struct RequestEnvelope {
    std::string record_id;
    PromptKind prompt_kind = PromptKind::Elena;
    std::vector<Message> messages;

    const Attachment* image() const;
};

// Throws InvalidArgument for an empty user text and AttachmentMissing when the
// image file does not exist. A bundle without system text yields a single
// user message.
RequestEnvelope render_for_provider(const PromptBundle& bundle, const std::optional<std::filesystem::path>& image,
                                    std::string record_id = {});

std::string mime_type_for(const std::filesystem::path& path);

}  // namespace elena
