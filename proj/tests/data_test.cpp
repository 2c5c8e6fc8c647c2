#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "tslm/data.hpp"
#include "tslm/evaluation.hpp"

namespace tslm {
namespace {

const std::string kFixtures = TSLM_FIXTURE_DIR;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tslm_data_test_" + name)).string();
}

nlohmann::json fixture_json() { return read_json_file(kFixtures + "/photosynthesis.json"); }

TEST(LoadProparaTest, PhotosynthesisFixture) {
  const auto corpus = load_propara(kFixtures + "/photosynthesis.json");
  ASSERT_EQ(corpus.size(), 1u);
  const auto& p = corpus[0];
  EXPECT_EQ(p.step_count(), 5u);
  EXPECT_EQ(p.entities.size(), 5u);
  EXPECT_EQ(p.grid[p.entity_index("water")][0], "soil");
  EXPECT_TRUE(is_input(p, p.entity_index("water")));
  EXPECT_TRUE(is_input(p, p.entity_index("light")));
  EXPECT_TRUE(is_input(p, p.entity_index("co2")));
  EXPECT_FALSE(is_input(p, p.entity_index("mixture")));
  EXPECT_FALSE(is_input(p, p.entity_index("sugar")));
}

TEST(LoadProparaTest, MissingStateZeroColumnRejected) {
  auto j = fixture_json();
  j[0]["grid"]["water"].erase(0);
  try {
    corpus_from_json(j);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("$[0].grid.water"), std::string::npos) << e.what();
  }
}

TEST(LoadProparaTest, SchemaErrorsCarryJsonPath) {
  auto j = fixture_json();
  j[0]["sentences"][1][2] = 7;
  try {
    corpus_from_json(j);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("$[0].sentences[1][2]"), std::string::npos) << e.what();
  }
  j = fixture_json();
  j[0]["extra"] = 1;
  EXPECT_THROW(corpus_from_json(j), DataError);
  j = fixture_json();
  j[0]["candidate_spans"][0] = {5, 99};
  EXPECT_THROW(corpus_from_json(j), DataError);
  j = fixture_json();
  j[0].erase("id");
  EXPECT_THROW(corpus_from_json(j), DataError);
  j = fixture_json();
  j.push_back(j[0]);
  EXPECT_THROW(corpus_from_json(j), DataError);
  EXPECT_THROW(corpus_from_json(nlohmann::json::object()), DataError);
}

TEST(LoadProparaTest, NormalisesLocations) {
  auto j = fixture_json();
  j[0]["grid"]["water"][1] = "  Root ";
  EXPECT_EQ(corpus_from_json(j)[0].grid[0][1], "root");
}

TEST(LoadProparaTest, MissingFileIsDataError) { EXPECT_THROW(load_propara(kFixtures + "/nope.json"), DataError); }

TEST(LoadProparaTest, SaveLoadRoundTrip) {
  const auto corpus = load_propara(kFixtures + "/photosynthesis.json");
  const std::string path = temp_path("roundtrip.json");
  save_corpus(path, corpus);
  EXPECT_EQ(load_propara(path), corpus);
  std::ifstream a(path);
  std::stringstream first;
  first << a.rdbuf();
  save_corpus(path, load_propara(path));
  std::ifstream b(path);
  std::stringstream second;
  second << b.rdbuf();
  EXPECT_EQ(first.str(), second.str());
  std::filesystem::remove(path);
}

TEST(DataQualityTest, FlagsLocationsMissingFromText) {
  const auto corpus = load_propara(kFixtures + "/photosynthesis.json");
  const auto q = check_span_alignment(corpus);
  // "root" never appears; the text says "roots".
  ASSERT_EQ(q.unaligned_locations.size(), 1u);
  EXPECT_EQ(std::get<3>(q.unaligned_locations[0]), "root");
}

TEST(ConvertTsvTest, ReproducesCanonicalFixture) {
  const auto converted = convert_grid_tsv(kFixtures + "/photosynthesis.tsv");
  const auto canonical = load_propara(kFixtures + "/photosynthesis.json");
  EXPECT_EQ(converted, canonical);
  EXPECT_EQ(corpus_to_json(converted), corpus_to_json(canonical));
}

TEST(ConvertTsvTest, MultipleBlocksAndErrors) {
  std::istringstream two("a\tsentence\tx\nstate0\t\tbox\nstate1\tX goes to the bag\tbag\n\n"
                         "b\tsentence\ty\nstate0\t\t-\nstate1\tY forms .\t?\n");
  const auto c = convert_grid_tsv(two);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[1].grid[0], (std::vector<std::string>{"-", "?"}));
  std::istringstream bad_state("a\tsentence\tx\nstate1\t\tbox\n");
  EXPECT_THROW(convert_grid_tsv(bad_state), DataError);
  std::istringstream bad_width("a\tsentence\tx\nstate0\t\tbox\textra\n");
  EXPECT_THROW(convert_grid_tsv(bad_width), DataError);
}

nlohmann::json npn_recipe() {
  return nlohmann::json::parse(R"([{
    "id": "soup",
    "sentences": [["chop", "the", "carrot"], ["put", "the", "carrot", "in", "the", "pot"], ["add", "salt"],
                  ["stir"], ["move", "the", "pot", "to", "the", "stove"], ["serve"]],
    "ingredients": ["carrot", "salt", "pepper"],
    "locations": {"carrot": {"0": "board", "2": "pot", "5": "stove"}, "salt": {"3": "pot"}}
  }])");
}

TEST(LoadNpnTest, CarryForwardTimeline) {
  std::vector<std::string> warnings;
  const auto c = npn_from_json(npn_recipe(), &warnings);
  ASSERT_EQ(c.size(), 1u);
  const auto& p = c[0];
  EXPECT_EQ(p.entities, (std::vector<std::string>{"carrot", "salt"}));
  EXPECT_EQ(p.grid[0], (std::vector<std::string>{"board", "board", "pot", "pot", "pot", "stove", "stove"}));
  EXPECT_EQ(p.grid[1], (std::vector<std::string>{"?", "?", "?", "pot", "pot", "pot", "pot"}));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("pepper"), std::string::npos);
  EXPECT_FALSE(p.candidate_spans.empty());
}

TEST(LoadNpnTest, ChangeStepsMatchRecount) {
  const auto c = npn_from_json(npn_recipe());
  const auto rows = gold_table(c[0]);
  const auto s = location_change_accuracy(timelines_from_rows(rows), timelines_from_rows(rows));
  std::size_t recount = 0;
  for (const auto& row : c[0].grid)
    for (std::size_t k = 1; k < row.size(); ++k) recount += row[k] != row[k - 1];
  EXPECT_EQ(s.change_steps, recount);
  EXPECT_EQ(recount, 3u);
}

TEST(LoadNpnTest, TwoChangesAmongSixSteps) {
  auto j = npn_recipe();
  j[0]["locations"] = {{"carrot", {{"0", "board"}, {"2", "pot"}, {"5", "stove"}}}};
  const auto p = npn_from_json(j)[0];
  std::size_t changes = 0;
  for (std::size_t k = 1; k < p.grid[0].size(); ++k) changes += p.grid[0][k] != p.grid[0][k - 1];
  EXPECT_EQ(p.step_count(), 6u);
  EXPECT_EQ(changes, 2u);
}

TEST(LoadNpnTest, BadStepKeyRejected) {
  auto j = npn_recipe();
  j[0]["locations"]["carrot"]["9"] = "floor";
  EXPECT_THROW(npn_from_json(j), DataError);
  j = npn_recipe();
  j[0]["locations"]["carrot"]["x"] = "floor";
  EXPECT_THROW(npn_from_json(j), DataError);
}

TEST(GeneratorTest, DeterministicPerSeed) {
  EXPECT_EQ(generate_synthetic(7, 20), generate_synthetic(7, 20));
  EXPECT_NE(generate_synthetic(7, 20), generate_synthetic(8, 20));
}

TEST(GeneratorTest, LocationsAppearVerbatimAndRulesHold) {
  const auto corpus = generate_synthetic(7, 200);
  EXPECT_TRUE(check_span_alignment(corpus).unaligned_locations.empty());
  for (const auto& p : corpus) {
    EXPECT_EQ(procedure_from_json(procedure_to_json(p), "$"), p);
    const auto tokens = p.paragraph_tokens();
    for (std::size_t e = 0; e < p.entities.size(); ++e) {
      ASSERT_EQ(p.grid[e].size(), p.step_count() + 1);
      EXPECT_TRUE(testing::satisfies_rules(testing::to_timeline(p.grid[e]))) << p.id << " " << p.entities[e];
      for (const auto& cell : p.grid[e]) {
        if (status_of(cell) != Status::KnownLocation) continue;
        const auto span = find_token_sequence(tokens, tokenize(cell));
        ASSERT_TRUE(span.has_value()) << cell;
        EXPECT_TRUE(std::find(p.candidate_spans.begin(), p.candidate_spans.end(), *span) != p.candidate_spans.end());
      }
    }
  }
}

TEST(GeneratorTest, GridsActuallyChange) {
  std::size_t changing = 0, total = 0;
  for (const auto& p : generate_synthetic(3, 50)) {
    for (const auto& row : p.grid) {
      ++total;
      changing += std::adjacent_find(row.begin(), row.end(), std::not_equal_to<>()) != row.end();
    }
  }
  EXPECT_GT(changing * 2, total);
}

TEST(CandidateSpanTest, PhotosynthesisHeuristic) {
  auto p = load_propara(kFixtures + "/photosynthesis.json")[0];
  const auto fixture_spans = p.candidate_spans;
  EXPECT_EQ(derive_candidate_spans(p), fixture_spans);
}

}  // namespace
}  // namespace tslm
