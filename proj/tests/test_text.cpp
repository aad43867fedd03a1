#include "doctest.h"

#include <set>

#include "unidiff/generators.hpp"
#include "unidiff/vocab.hpp"

using namespace unidiff;
using namespace unidiff::text;

TEST_CASE("vocabulary layout") {
    const Vocabulary& v = vocabulary();
    CHECK(v.pad_id() == 0);
    CHECK(v.token(0) == "<pad>");
    CHECK(v.id("<t2i>") == 1);
    CHECK(v.size() > 40);
    // dense ids
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
}

TEST_CASE("tokenize: direct lookup with padding") {
    const Vocabulary& v = vocabulary();
    const TokenSequence s = tokenize("<t2i> a red circle");
    REQUIRE(s.length() == kMaxPromptLen);
    CHECK(s.ids[0] == v.id("<t2i>"));
    CHECK(s.ids[1] == v.id("a"));
    CHECK(s.ids[2] == v.id("red"));
    CHECK(s.ids[3] == v.id("circle"));
    for (int i = 4; i < kMaxPromptLen; ++i) CHECK(s.ids[static_cast<size_t>(i)] == v.pad_id());
}

TEST_CASE("tokenize: empty prompt is all pad") {
    const TokenSequence s = tokenize("");
    for (int id : s.ids) CHECK(id == 0);
}

TEST_CASE("tokenize: seg prompt") {
    const Vocabulary& v = vocabulary();
    const TokenSequence s = tokenize("<seg> circle : green");
    CHECK(s.content_length() == 4);
    CHECK(s.ids[0] == v.id("<seg>"));
    CHECK(s.ids[2] == v.id(":"));
}

TEST_CASE("tokenize: unknown symbol is rejected with the symbol") {
    try {
        tokenize("<t2i> a purple circle");
        FAIL("expected throw");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("purple") != std::string::npos);
    }
}

TEST_CASE("tokenize: over-length prompts are rejected, not truncated") {
    std::string long_prompt;
    for (int i = 0; i < kMaxPromptLen + 1; ++i) long_prompt += "a ";
    CHECK_THROWS_AS(tokenize(long_prompt), ConfigError);
}

TEST_CASE("tokenization is injective over scene descriptions") {
    using namespace unidiff::world;
    std::set<std::string> descriptions;
    std::set<std::vector<int>> sequences;
    for (int si = 0; si < kNumShapes; ++si)
        for (int ci = 0; ci < kNumColors; ++ci) {
            SceneSpec sc;
            sc.objects.push_back({static_cast<Shape>(si), static_cast<Color>(ci), 0, 0, true});
            descriptions.insert(describe(sc));
            sequences.insert(tokenize("<t2i> " + describe(sc)).ids);
        }
    CHECK(descriptions.size() == sequences.size());
    CHECK(sequences.size() == static_cast<size_t>(kNumShapes * kNumColors));
}

TEST_CASE("every generated prompt tokenizes within budget") {
    using namespace unidiff::world;
    Rng rng(77);
    for (int kind = 0; kind < kNumTaskKinds; ++kind)
        for (int rep = 0; rep < 50; ++rep) {
            const TaskSample s = sample_task(static_cast<TaskKind>(kind), rng);
            const TokenSequence seq = tokenize(s.prompt);  // must not throw
            if (!s.prompt.empty()) {
                CHECK(vocabulary().is_task_token(seq.ids[0]));
            }
        }
}

TEST_CASE("vocabulary dump/check round trip") {
    const auto path = (std::filesystem::temp_directory_path() / "unidiff_vocab.txt").string();
    vocabulary().dump(path);
    CHECK_NOTHROW(vocabulary().check_file(path));
    std::filesystem::remove(path);
}
