#include "elena/prompt_forge.hpp"

#include <cstdio>
#include <regex>
#include <set>

#include "elena/error.hpp"

namespace elena {

namespace {

std::string_view kind_dir(PromptKind kind) {
    switch (kind) {
        case PromptKind::Naive: return "naive";
        case PromptKind::Elena: return "elena";
        case PromptKind::TwoStepDescribe: return "two_step_describe";
        case PromptKind::TwoStepParse: return "two_step_parse";
    }
    return "?";
}

void replace_all(std::string& text, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
}

std::string label_list() {
    std::string out;
    for (auto label : kAllLabels) {
        if (!out.empty()) out += ", ";
        out += to_string(label);
    }
    return out;
}

std::string strip_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

std::string template_key(PromptKind kind, Condition condition, std::string_view version) {
    return "prompts/" + std::string(kind_dir(kind)) + "/" + to_lower(to_string(condition)) + "/" +
           std::string(version) + ".txt";
}

PromptBundle build_prompt(PromptKind kind, Condition condition, const AssetStore& assets, std::string_view version) {
    const std::string text = assets.read(template_key(kind, condition, version));
    PromptBundle bundle;
    bundle.prompt_kind = kind;
    bundle.condition = condition;
    bundle.template_version = std::string(version);

    std::string* section = nullptr;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line == "[system]") {
            section = &bundle.system_text;
        } else if (line == "[user]") {
            section = &bundle.user_text;
        } else if (section != nullptr) {
            *section += line;
            *section += '\n';
        } else if (!trim(line).empty()) {
            fail(ErrorCode::Parse, "template text outside a [system]/[user] section: " +
                                       template_key(kind, condition, version));
        }
    }
    bundle.system_text = strip_trailing_newlines(bundle.system_text);
    bundle.user_text = strip_trailing_newlines(bundle.user_text);
    const auto labels = label_list();
    replace_all(bundle.system_text, "{{labels}}", labels);
    replace_all(bundle.user_text, "{{labels}}", labels);
    return bundle;
}

std::optional<std::array<double, 4>> normalize_box(const std::optional<Rect>& box, int image_w, int image_h) {
    if (!box || image_w <= 0 || image_h <= 0) return std::nullopt;
    return std::array<double, 4>{static_cast<double>(box->x) / image_w, static_cast<double>(box->y) / image_h,
                                 static_cast<double>(box->w) / image_w, static_cast<double>(box->h) / image_h};
}

PromptBundle instantiate_prompt(PromptBundle bundle, const PromptContext& context) {
    std::string person;
    if (context.person_box_normalized) {
        const auto& b = *context.person_box_normalized;
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      " The person of interest is inside the bounding box x=%.3f, y=%.3f, w=%.3f, h=%.3f, "
                      "given as fractions of the image width and height from the top-left corner.",
                      b[0], b[1], b[2], b[3]);
        person = buf;
    }
    for (auto* text : {&bundle.system_text, &bundle.user_text}) {
        replace_all(*text, "{{person_clause}}", person);
        replace_all(*text, "{{description}}", context.description);
    }
    return bundle;
}

std::vector<std::string> demanded_json_keys(const PromptBundle& bundle) {
    static const std::regex key_re(R"(\"([a-z_]+)\")");
    std::set<std::string> keys;
    for (const auto* text : {&bundle.system_text, &bundle.user_text}) {
        for (std::sregex_iterator it(text->begin(), text->end(), key_re), end; it != end; ++it) {
            keys.insert((*it)[1].str());
        }
    }
    return {keys.begin(), keys.end()};
}

const Attachment* RequestEnvelope::image() const {
    for (const auto& m : messages) {
        if (m.attachment) return &*m.attachment;
    }
    return nullptr;
}

std::string mime_type_for(const std::filesystem::path& path) {
    const auto ext = to_lower(path.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".webp") return "image/webp";
    if (ext == ".bmp") return "image/bmp";
    return "application/octet-stream";
}

RequestEnvelope render_for_provider(const PromptBundle& bundle, const std::optional<std::filesystem::path>& image,
                                    std::string record_id) {
    if (trim(bundle.user_text).empty()) fail(ErrorCode::InvalidArgument, "prompt bundle has empty user text");
    RequestEnvelope env;
    env.record_id = std::move(record_id);
    env.prompt_kind = bundle.prompt_kind;
    if (!trim(bundle.system_text).empty()) env.messages.push_back({"system", bundle.system_text, std::nullopt});
    Message user{"user", bundle.user_text, std::nullopt};
    if (image) {
        if (!std::filesystem::exists(*image)) {
            fail(ErrorCode::AttachmentMissing, "image attachment not found: " + image->string());
        }
        user.attachment = Attachment{*image, mime_type_for(*image)};
    }
    env.messages.push_back(std::move(user));
    return env;
}

}  // namespace elena
