#include <gtest/gtest.h>

#include "crs/corpus.hpp"
#include "test_util.hpp"

using namespace crs;

namespace {

Utterance utt(Speaker s, std::string text, std::vector<Mention> items = {}) {
  Utterance u;
  u.speaker = s;
  u.text = std::move(text);
  u.item_mentions = std::move(items);
  return u;
}

ItemCatalog catalog() {
  ItemCatalog c;
  c.items = {{"111", "Alien (1979)"}, {"222", "Heat (1995)"}};
  c.item_to_entity = {{"111", "film:alien"}, {"222", "film:heat"}};
  return c;
}

}  // namespace

TEST(Tokenize, WordsAndPunctuation) {
  EXPECT_EQ(tokenize_text("Hi, I'd like  sci-fi!"),
            (std::vector<std::string>{"Hi", ",", "I'd", "like", "sci", "-", "fi", "!"}));
  EXPECT_TRUE(tokenize_text("   ").empty());
}

TEST(Vocab, FrequencyThenLexicographicOrderFromTrainOnly) {
  Conversation train{"a", {utt(Speaker::kSeeker, "b a b"), utt(Speaker::kRecommender, "c a b")}, Split::kTrain};
  Conversation test{"b", {utt(Speaker::kSeeker, "zzz zzz zzz zzz")}, Split::kTest};
  const auto v = Vocabulary::build({train, test});
  ASSERT_EQ(v.base_size(), 8);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(4), "<eot>");
  EXPECT_EQ(v.token(5), "b");
  EXPECT_EQ(v.token(6), "a");
  EXPECT_EQ(v.token(7), "c");
  EXPECT_EQ(v.id("zzz"), Vocabulary::kUnk);

  const auto pruned = Vocabulary::build({train}, 2);
  EXPECT_EQ(pruned.base_size(), 7);
  EXPECT_FALSE(pruned.contains_base("c"));
}

TEST(Vocab, ItemMentionsAreSingleTokens) {
  Conversation c{"a", {utt(Speaker::kSeeker, "I liked @111 a lot", {{"111", {8, 12}}})}, Split::kTrain};
  auto v = Vocabulary::build({c});
  EXPECT_FALSE(v.contains_base("111"));
  v.extend_with_items(catalog());
  EXPECT_EQ(v.num_items(), 2);
  const int t = *v.item_token("111");
  EXPECT_EQ(t, v.base_size());
  EXPECT_EQ(v.token(t), "@111");
  const auto ids = v.encode(c.utterances[0]);
  ASSERT_EQ(ids.size(), 5u);
  EXPECT_EQ(ids[2], t);
  EXPECT_THROW(v.add_base("late"), Error);
  EXPECT_EQ(detokenize(ids, v), "I liked @111 a lot");
  const auto cat = catalog();
  EXPECT_EQ(detokenize(ids, v, &cat), "I liked Alien (1979) a lot");
}

TEST(Vocab, FromTokensValidatesSpecials) {
  EXPECT_THROW(Vocabulary::from_tokens({"a", "b"}, {}), Error);
  const auto v = Vocabulary::from_tokens({"<pad>", "<s>", "</s>", "<unk>", "<eot>", "x"}, {"9"});
  EXPECT_EQ(v.size(), 7);
  EXPECT_EQ(*v.item_token("9"), 6);
}

TEST(Redial, LoaderSkipsMalformedAndKeepsUnresolvedAsText) {
  testutil::TempDir dir;
  const std::string good =
      R"j({"conversationId": 7, "initiatorWorkerId": 1, "respondentWorkerId": 2,)j"
      R"j( "movieMentions": {"111": "Alien (1979)"},)j"
      R"j( "messages": [{"text": "Loved @111 and @999", "senderWorkerId": 1},)j"
      R"j( {"text": "Try @111", "senderWorkerId": 2}]})j";
  testutil::write_file(dir.file("r.jsonl"), good + "\n{not json\n" +
                                                R"j({"conversationId": 8, "initiatorWorkerId": 1, "messages": []})j" +
                                                "\n\n");
  ItemCatalog cat;
  LoadStats stats;
  const auto convs = load_redial(dir.file("r.jsonl"), &cat, &stats);
  ASSERT_EQ(convs.size(), 1u);
  EXPECT_EQ(stats.records, 3u);
  EXPECT_EQ(stats.skipped, 2u);
  EXPECT_EQ(stats.unresolved_mentions, 1u);
  const auto& u0 = convs[0].utterances[0];
  EXPECT_EQ(u0.speaker, Speaker::kSeeker);
  ASSERT_EQ(u0.item_mentions.size(), 1u);
  EXPECT_EQ(u0.item_mentions[0], (Mention{"111", {6, 10}}));
  EXPECT_EQ(convs[0].utterances[1].speaker, Speaker::kRecommender);
  EXPECT_EQ(cat.name("111"), "Alien (1979)");
}

TEST(Splits, PositionalFractions) {
  std::vector<Conversation> convs(20);
  assign_splits(convs, 0.7, 0.15);
  EXPECT_EQ(std::count_if(convs.begin(), convs.end(), [](auto& c) { return c.split == Split::kTrain; }), 14);
  EXPECT_EQ(std::count_if(convs.begin(), convs.end(), [](auto& c) { return c.split == Split::kValid; }), 3);
  EXPECT_EQ(convs.back().split, Split::kTest);
}

TEST(Csv, QuotedFieldsWithCommasNewlinesAndEscapes) {
  std::istringstream in("a,\"b,c\",\"say \"\"hi\"\"\nthere\"\r\nx,y\n");
  const auto rows = detail::parse_csv(in);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b,c", "say \"hi\"\nthere"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"x", "y"}));
}

TEST(OpenDialKG, PathEntitiesLocatedInChatText) {
  testutil::TempDir dir;
  const std::string msgs =
      R"j([{"type":"chat","sender":"user","message":"Do you like Ridley Scott?"},)j"
      R"j({"type":"action","metadata":{"path":[1.0,[["Ridley Scott","directed","Alien (1979)"]],"x"]}},)j"
      R"j({"type":"chat","sender":"assistant","message":"He directed Alien (1979)."}])j";
  std::string quoted;
  for (char c : msgs) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  testutil::write_file(dir.file("o.csv"), "Messages,User Rating,Assistant Rating\n\"" + quoted + "\",5,5\nbroken,1,1\n");
  ItemCatalog cat = catalog();
  LoadStats stats;
  const auto convs = load_opendialkg(dir.file("o.csv"), &cat, &stats);
  ASSERT_EQ(convs.size(), 1u);
  EXPECT_EQ(stats.skipped, 1u);
  const auto& u = convs[0].utterances;
  ASSERT_EQ(u.size(), 2u);
  ASSERT_EQ(u[0].entity_mentions.size(), 1u);
  EXPECT_EQ(u[0].entity_mentions[0], (Mention{"Ridley Scott", {12, 24}}));
  EXPECT_EQ(u[1].speaker, Speaker::kRecommender);
  ASSERT_EQ(u[1].item_mentions.size(), 1u);
  EXPECT_EQ(u[1].item_mentions[0].id, "111");
}

TEST(Canonical, RoundTripPreservesEverything) {
  testutil::TempDir dir;
  Utterance a = utt(Speaker::kSeeker, "I liked @111", {{"111", {8, 12}}});
  a.entity_mentions.push_back({"scott", {0, 1}});
  std::vector<Conversation> convs{{"c1", {a, utt(Speaker::kRecommender, "ok")}, Split::kValid}};
  save_canonical(dir.file("c.jsonl"), convs);
  EXPECT_EQ(load_canonical(dir.file("c.jsonl")), convs);

  testutil::write_file(dir.file("bad.jsonl"),
                       R"j({"id":"x","split":"TRAIN","utterances":[{"speaker":"SEEKER","text":"hi",)j"
                       R"j("item_mentions":[{"item_id":"1","start":0,"end":9}]}]})j"
                       "\n");
  EXPECT_THROW(load_canonical(dir.file("bad.jsonl")), Error);
}

TEST(Catalog, TsvRoundTripAndInjectivity) {
  testutil::TempDir dir;
  save_catalog(dir.file("items.tsv"), catalog());
  const auto back = load_catalog(dir.file("items.tsv"));
  EXPECT_EQ(back.items, catalog().items);
  EXPECT_EQ(back.item_to_entity, catalog().item_to_entity);
  testutil::write_file(dir.file("dup.tsv"), "1\tA\te\n2\tB\te\n");
  EXPECT_THROW(load_catalog(dir.file("dup.tsv")), Error);
}

TEST(SerializeContext, DropsOldestTurnsWhole) {
  const std::vector<int> a{10, 11, 12}, b{20, 21}, c{30};
  EXPECT_EQ(serialize_context({&a, &b, &c}, 100), (std::vector<int>{10, 11, 12, 4, 20, 21, 4, 30}));
  EXPECT_EQ(serialize_context({&a, &b, &c}, 7), (std::vector<int>{20, 21, 4, 30}));
  EXPECT_EQ(serialize_context({&a, &b, &c}, 1), (std::vector<int>{30}));
  const std::vector<int> big{1, 2, 3, 4, 5};
  EXPECT_EQ(serialize_context({&a, &big}, 2), (std::vector<int>{4, 5}));
}

TEST(Annotate, LinksEntitiesAndPromotesItemEntities) {
  ItemCatalog cat = catalog();
  auto kg = KnowledgeGraph::from_triples({{"film:alien", "directed_by", "scott"}}, &cat, true);
  AliasIndex aliases;
  aliases.add("Ridley Scott", *kg.entity_id("scott"));
  aliases.add("Alien", *kg.entity_id("film:alien"));
  Utterance u = utt(Speaker::kSeeker, "Ridley Scott made Alien and @222");
  mark_item_references(u, cat);
  annotate_utterance(u, kg, aliases);
  ASSERT_EQ(u.item_mentions.size(), 2u);
  EXPECT_EQ(u.item_mentions[0], (Mention{"111", {18, 23}}));
  EXPECT_EQ(u.item_mentions[1], (Mention{"222", {28, 32}}));
  ASSERT_EQ(u.entity_mentions.size(), 1u);
  EXPECT_EQ(u.entity_mentions[0].id, "scott");

  const auto h = extract_history({u}, kg);
  EXPECT_EQ(h.entities, (std::vector<int>{*kg.entity_id("scott"), *kg.entity_id("film:alien"),
                                          *kg.entity_id("film:heat")}));
  EXPECT_EQ(h.is_item, (std::vector<bool>{false, true, true}));
}

TEST(BuildExamples, OnePerRecommenderTurnWithPriorContext) {
  ItemCatalog cat = catalog();
  auto kg = KnowledgeGraph::from_triples({}, &cat, true);
  std::vector<Conversation> convs{{"c",
                                   {utt(Speaker::kRecommender, "hello"),
                                    utt(Speaker::kSeeker, "I liked @111", {{"111", {8, 12}}}),
                                    utt(Speaker::kRecommender, "try @222 or @111", {{"111", {12, 16}}, {"222", {4, 8}}}),
                                    utt(Speaker::kRecommender, "")},
                                   Split::kTrain}};
  auto vocab = Vocabulary::build(convs);
  vocab.extend_with_items(cat);
  const auto ex = build_examples(convs, cat, vocab, 64, &kg);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].turn, 2u);
  EXPECT_EQ(ex[0].target_items, (std::vector<std::string>{"222", "111"}));
  EXPECT_EQ(ex[0].items_mentioned, 1u);
  EXPECT_EQ(ex[0].history.entities, std::vector<int>{*kg.entity_for_item("111")});
  EXPECT_EQ(ex[0].context_tokens.size(), 1u + 1u + 3u);
  EXPECT_EQ(ex[0].context_tokens[1], Vocabulary::kEot);
}
