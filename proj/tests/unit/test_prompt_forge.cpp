#include <gtest/gtest.h>

#include <fstream>

#include "elena/prompt_forge.hpp"
#include "test_support.hpp"

using namespace elena;
using elena_test::code_of;

namespace {

constexpr std::array<PromptKind, 4> kKinds = {PromptKind::Naive, PromptKind::Elena, PromptKind::TwoStepDescribe,
                                              PromptKind::TwoStepParse};

bool has(const std::string& text, std::string_view needle) { return text.find(needle) != std::string::npos; }

}  // namespace

TEST(Templates, MaskClauseOnlyInMaskedVariants) {
    for (auto kind : kKinds) {
        const auto masked = build_prompt(kind, Condition::Masked);
        const auto normal = build_prompt(kind, Condition::Normal);
        EXPECT_TRUE(has(masked.user_text, kMaskClause)) << to_string(kind);
        EXPECT_FALSE(has(normal.user_text, kMaskClause)) << to_string(kind);
        EXPECT_FALSE(has(normal.system_text, kMaskClause)) << to_string(kind);
        EXPECT_EQ(masked.template_version, "v1");
    }
}

TEST(Templates, LabelListIsCanonicalAndSubstituted) {
    for (auto kind : {PromptKind::Naive, PromptKind::Elena, PromptKind::TwoStepParse}) {
        const auto b = build_prompt(kind, Condition::Normal);
        EXPECT_TRUE(has(b.user_text, "Happiness, Sadness, Anger, Fear, Disgust, Surprise, Neutral")) << to_string(kind);
        EXPECT_FALSE(has(b.user_text, "{{labels}}"));
    }
}

TEST(Templates, ElenaDemandsAllFieldsInOneObject) {
    const auto keys = demanded_json_keys(build_prompt(PromptKind::Elena, Condition::Normal));
    for (const auto& f : {"label", "explicit", "implicit", "narrative", "body_parts", "valence", "arousal", "dominance"}) {
        EXPECT_NE(std::find(keys.begin(), keys.end(), f), keys.end()) << f;
    }
}

TEST(Templates, NaiveAndParseAskOnlyForLabel) {
    for (auto kind : {PromptKind::Naive, PromptKind::TwoStepParse}) {
        const auto keys = demanded_json_keys(build_prompt(kind, Condition::Normal));
        EXPECT_EQ(keys, std::vector<std::string>{"label"}) << to_string(kind);
    }
}

TEST(Templates, DescribeStageNeverAsksForALabel) {
    for (auto c : {Condition::Normal, Condition::Masked}) {
        const auto b = build_prompt(PromptKind::TwoStepDescribe, c);
        const auto keys = demanded_json_keys(b);
        EXPECT_EQ(std::find(keys.begin(), keys.end(), "label"), keys.end());
        EXPECT_FALSE(has(b.user_text, "Happiness"));
    }
}

TEST(Templates, KeyLayout) {
    EXPECT_EQ(template_key(PromptKind::TwoStepDescribe, Condition::Masked, "v1"),
              "prompts/two_step_describe/masked/v1.txt");
}

TEST(Templates, UnknownVersionIsIoError) {
    EXPECT_EQ(code_of([] { build_prompt(PromptKind::Elena, Condition::Normal, {}, "v999"); }), ErrorCode::Io);
}

TEST(Templates, OverrideDirectoryWins) {
    elena_test::TempDir dir;
    std::filesystem::create_directories(dir / "prompts/naive/normal");
    std::ofstream(dir / "prompts/naive/normal/v2.txt") << "[user]\nPick from {{labels}}.{{person_clause}}\n";
    const auto b = build_prompt(PromptKind::Naive, Condition::Normal, AssetStore(dir.path()), "v2");
    EXPECT_EQ(b.system_text, "");
    EXPECT_EQ(b.user_text, "Pick from Happiness, Sadness, Anger, Fear, Disgust, Surprise, Neutral.{{person_clause}}");
}

TEST(Templates, TextOutsideSectionIsParseError) {
    elena_test::TempDir dir;
    std::filesystem::create_directories(dir / "prompts/naive/normal");
    std::ofstream(dir / "prompts/naive/normal/v3.txt") << "stray\n[user]\nx\n";
    EXPECT_EQ(code_of([&] { build_prompt(PromptKind::Naive, Condition::Normal, AssetStore(dir.path()), "v3"); }),
              ErrorCode::Parse);
}

TEST(Instantiate, PersonClauseAndDescription) {
    auto b = build_prompt(PromptKind::Elena, Condition::Normal);
    const auto box = normalize_box(Rect{10, 20, 50, 40}, 100, 200);
    ASSERT_TRUE(box);
    EXPECT_DOUBLE_EQ((*box)[0], 0.1);
    EXPECT_DOUBLE_EQ((*box)[3], 0.2);
    const auto with = instantiate_prompt(b, {box, ""});
    EXPECT_TRUE(has(with.user_text, "x=0.100, y=0.100, w=0.500, h=0.200"));
    EXPECT_FALSE(has(with.user_text, "{{person_clause}}"));
    const auto without = instantiate_prompt(b, {});
    EXPECT_TRUE(has(without.user_text, "Analyze the most notable person in the image.\n"));

    const auto parse = instantiate_prompt(build_prompt(PromptKind::TwoStepParse, Condition::Normal),
                                          {std::nullopt, "arms raised\nheart racing"});
    EXPECT_TRUE(has(parse.user_text, "Description:\narms raised\nheart racing"));
    EXPECT_FALSE(normalize_box(std::nullopt, 10, 10));
}

TEST(Render, SystemAndUserMessagesWithAttachment) {
    const auto img = elena_test::fixture("e2e/images/img01.png");
    const auto env = render_for_provider(build_prompt(PromptKind::Elena, Condition::Normal), img, "r01");
    ASSERT_EQ(env.messages.size(), 2u);
    EXPECT_EQ(env.messages[0].role, "system");
    EXPECT_EQ(env.messages[1].role, "user");
    ASSERT_NE(env.image(), nullptr);
    EXPECT_EQ(env.image()->mime_type, "image/png");
    EXPECT_EQ(env.record_id, "r01");
    EXPECT_EQ(env.prompt_kind, PromptKind::Elena);
}

TEST(Render, NoSystemTextGivesSingleUserMessage) {
    const auto env = render_for_provider(build_prompt(PromptKind::TwoStepParse, Condition::Normal), std::nullopt);
    ASSERT_EQ(env.messages.size(), 1u);
    EXPECT_EQ(env.image(), nullptr);
}

TEST(Render, Errors) {
    PromptBundle empty;
    EXPECT_EQ(code_of([&] { render_for_provider(empty, std::nullopt); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] {
                  render_for_provider(build_prompt(PromptKind::Naive, Condition::Normal), "/no/such/image.png");
              }),
              ErrorCode::AttachmentMissing);
}

TEST(Render, MimeTypes) {
    EXPECT_EQ(mime_type_for("a.JPG"), "image/jpeg");
    EXPECT_EQ(mime_type_for("a.webp"), "image/webp");
    EXPECT_EQ(mime_type_for("a"), "application/octet-stream");
}
