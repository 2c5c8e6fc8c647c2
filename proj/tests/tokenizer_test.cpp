#include <gtest/gtest.h>

#include "tslm/tokenizer.hpp"

namespace tslm {
namespace {

using Tokens = std::vector<std::string>;

TEST(TokenizeTest, PhotosynthesisSentence) {
  EXPECT_EQ(tokenize("Roots absorb water from soil"), (Tokens{"roots", "absorb", "water", "from", "soil"}));
}

TEST(TokenizeTest, EmptyAndBlank) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("  \t\n ").empty());
}

TEST(TokenizeTest, DetachesTrailingPunctuation) {
  EXPECT_EQ(tokenize("Where is water?"), (Tokens{"where", "is", "water", "?"}));
  EXPECT_EQ(tokenize("salt, sugar; oil!"), (Tokens{"salt", ",", "sugar", ";", "oil", "!"}));
  EXPECT_EQ(tokenize("end.."), (Tokens{"end", ".", "."}));
  EXPECT_EQ(tokenize("?"), (Tokens{"?"}));
}

TEST(TokenizeTest, KeepsInnerPunctuation) { EXPECT_EQ(tokenize("co2-rich air."), (Tokens{"co2-rich", "air", "."})); }

TEST(TokenizeTest, IdempotentOnJoinedOutput) {
  for (const char* text : {"The CO2 enters the leaf.", "Water; liquid?  moves!", "a b, c"}) {
    const auto once = tokenize(text);
    EXPECT_EQ(tokenize(join_tokens(once)), once) << text;
  }
}

TEST(VocabTest, ReservedIds) {
  const Vocab v;
  EXPECT_EQ(v.size(), kReservedCount);
  EXPECT_EQ(v.id("[PAD]"), 0u);
  EXPECT_EQ(v.id("[UNK]"), 1u);
  EXPECT_EQ(v.id("[CLS]"), 2u);
  EXPECT_EQ(v.id("[SEP]"), 3u);
}

TEST(VocabTest, FirstSeenOrder) {
  const Tokens corpus{"a", "b", "a"};
  const Vocab v = build_vocab(corpus);
  EXPECT_EQ(v.id("a"), 4u);
  EXPECT_EQ(v.id("b"), 5u);
  EXPECT_EQ(v.size(), 6u);
}

TEST(VocabTest, EmptyCorpusHasOnlyReserved) { EXPECT_EQ(build_vocab(Tokens{}).size(), kReservedCount); }

TEST(VocabTest, UnknownMapsToUnk) {
  const Vocab v = build_vocab(Tokens{"x"});
  EXPECT_EQ(v.id("never-seen"), kUnkId);
}

TEST(VocabTest, EncodeDecodeIdentity) {
  const Tokens corpus{"roots", "absorb", "water", "from", "soil"};
  const Vocab v = build_vocab(corpus);
  const auto ids = v.encode(corpus);
  EXPECT_EQ(v.decode(ids), corpus);
}

TEST(VocabTest, JsonRoundTrip) {
  const Vocab v = build_vocab(Tokens{"z", "y", "x", "y"});
  const Vocab back = Vocab::from_json(nlohmann::json::parse(v.to_json().dump()));
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.id("x"), v.id("x"));
}

TEST(VocabTest, FromJsonRejectsBadIds) {
  EXPECT_THROW(Vocab::from_json(nlohmann::json::parse(R"({"[PAD]":0,"[UNK]":1,"[CLS]":2,"[SEP]":3,"a":5})")),
               DataError);
  EXPECT_THROW(Vocab::from_json(nlohmann::json::parse(R"({"[PAD]":1,"[UNK]":0,"[CLS]":2,"[SEP]":3})")), DataError);
  EXPECT_THROW(Vocab::from_json(nlohmann::json::parse(R"([1,2])")), DataError);
}

}  // namespace
}  // namespace tslm
