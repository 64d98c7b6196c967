#include <gtest/gtest.h>

#include "crs/kg.hpp"
#include "test_util.hpp"

using namespace crs;

namespace {

KnowledgeGraph small_graph(bool inverse = true) {
  ItemCatalog cat;
  cat.items = {{"1", "Alien"}, {"2", "Heat"}, {"3", "Solo"}};
  cat.item_to_entity = {{"1", "film:alien"}, {"2", "film:heat"}, {"3", "film:solo"}};
  std::vector<KnowledgeGraph::RawTriple> raw{{"film:alien", "directed_by", "scott"},
                                             {"film:heat", "directed_by", "mann"},
                                             {"film:alien", "has_genre", "scifi"},
                                             {"film:alien", "directed_by", "scott"}};
  return KnowledgeGraph::from_triples(raw, &cat, inverse);
}

}  // namespace

TEST(KnowledgeGraph, DuplicateTriplesDroppedAndIdsInFirstSeenOrder) {
  const auto kg = small_graph();
  EXPECT_EQ(kg.triples().size(), 3u);
  EXPECT_EQ(kg.entity_name(0), "film:alien");
  EXPECT_EQ(kg.entity_name(1), "scott");
  EXPECT_EQ(kg.entity_name(2), "film:heat");
  EXPECT_EQ(kg.entity_name(3), "mann");
  EXPECT_EQ(kg.entity_name(4), "scifi");
  // Catalog-only entities are appended after triple entities.
  EXPECT_EQ(kg.entity_name(5), "film:solo");
  EXPECT_EQ(kg.num_entities(), 6);
}

TEST(KnowledgeGraph, InverseRelationsAndSelfLoop) {
  const auto kg = small_graph();
  EXPECT_EQ(kg.num_base_relations(), 2);
  EXPECT_EQ(kg.num_relations(), 4);
  EXPECT_EQ(kg.num_relations_with_self(), 5);
  EXPECT_EQ(kg.relation_name(2), "directed_by^-1");
  EXPECT_EQ(kg.relation_name(kg.self_loop_relation()), "<self>");
  const int scott = *kg.entity_id("scott"), alien = *kg.entity_id("film:alien");
  EXPECT_EQ(kg.neighbors(scott, 0), std::vector<int>{alien});
  EXPECT_EQ(kg.neighbors(alien, 2), std::vector<int>{scott});
  EXPECT_TRUE(kg.neighbors(alien, 0).empty());

  const auto no_inv = small_graph(false);
  EXPECT_EQ(no_inv.num_relations(), 2);
}

TEST(KnowledgeGraph, AdjacencyAgreesWithNeighborLists) {
  const auto kg = small_graph();
  for (int r = 0; r < kg.num_relations(); ++r) {
    const ad::Matrix A = ad::Matrix(*kg.adjacency(r));
    for (int e = 0; e < kg.num_entities(); ++e) {
      ad::Matrix expected_row = ad::Matrix::Zero(1, kg.num_entities());
      for (int src : kg.neighbors(e, r)) expected_row(0, src) = 1.0;
      EXPECT_TRUE(A.row(e).isApprox(expected_row) || (A.row(e).isZero() && expected_row.isZero()));
    }
  }
  const ad::Matrix I = ad::Matrix(*kg.adjacency(kg.self_loop_relation()));
  EXPECT_TRUE(I.isIdentity());
}

TEST(KnowledgeGraph, ItemMapAndMask) {
  const auto kg = small_graph();
  EXPECT_EQ(kg.num_items(), 3u);
  EXPECT_EQ(*kg.entity_for_item("2"), *kg.entity_id("film:heat"));
  EXPECT_EQ(*kg.item_for_entity(*kg.entity_id("film:solo")), "3");
  EXPECT_FALSE(kg.entity_for_item("99"));
  const auto& mask = kg.item_mask();
  EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 3);
  EXPECT_FALSE(mask[static_cast<std::size_t>(*kg.entity_id("scott"))]);
}

TEST(KnowledgeGraph, TripleFileRoundTrip) {
  testutil::TempDir dir;
  testutil::write_file(dir.file("kg.tsv"), "# comment\na\tr1\tb\n\nb\tr2\tc\r\na\tr1\tb\n");
  const auto kg = load_triples(dir.file("kg.tsv"));
  EXPECT_EQ(kg.triples().size(), 2u);
  save_triples(dir.file("out.tsv"), kg);
  const auto again = load_triples(dir.file("out.tsv"));
  ASSERT_EQ(again.num_entities(), kg.num_entities());
  for (int e = 0; e < kg.num_entities(); ++e) EXPECT_EQ(again.entity_name(e), kg.entity_name(e));
  EXPECT_EQ(testutil::read_file(dir.file("out.tsv")), "a\tr1\tb\nb\tr2\tc\n");
}

TEST(KnowledgeGraph, MalformedTripleLineIsAnError) {
  testutil::TempDir dir;
  testutil::write_file(dir.file("kg.tsv"), "a\tr1\n");
  EXPECT_THROW(load_triples(dir.file("kg.tsv")), Error);
  EXPECT_THROW(load_triples(dir.file("missing.tsv")), Error);
}

TEST(AliasIndex, NormalizationFoldsCaseAndPunctuation) {
  EXPECT_EQ(AliasIndex::normalize("  Ridley   SCOTT!! "), "ridley scott");
  EXPECT_EQ(AliasIndex::normalize("Spider-Man"), "spider man");
  EXPECT_EQ(AliasIndex::normalize("..."), "");
}

TEST(AliasIndex, LongestMatchWins) {
  AliasIndex idx;
  idx.add("Scott", 1);
  idx.add("Ridley Scott", 2);
  idx.add("Tony Scott", 3);
  const auto links = link_entities("I like Ridley Scott and scott.", idx);
  ASSERT_EQ(links.size(), 2u);
  EXPECT_EQ(links[0].entity, 2);
  EXPECT_EQ(links[0].span, (Span{7, 19}));
  EXPECT_EQ(links[1].entity, 1);
  EXPECT_EQ(links[1].span, (Span{24, 29}));
}

TEST(AliasIndex, AmbiguousAliasResolvesToSmallestId) {
  AliasIndex idx;
  idx.add("heat", 7);
  idx.add("Heat", 4);
  EXPECT_EQ(*idx.lookup("heat"), (std::vector<int>{4, 7}));
  const auto links = link_entities("heat", idx);
  ASSERT_EQ(links.size(), 1u);
  EXPECT_EQ(links[0].entity, 4);
}

TEST(AliasIndex, WordBoundariesRespected) {
  AliasIndex idx;
  idx.add("cat", 1);
  EXPECT_TRUE(link_entities("concatenate", idx).empty());
  EXPECT_EQ(link_entities("a cat!", idx).size(), 1u);
}

TEST(AliasIndex, LoaderSkipsUnknownEntities) {
  testutil::TempDir dir;
  const auto kg = small_graph();
  testutil::write_file(dir.file("aliases.tsv"), "Ridley Scott\tscott\nnobody\tghost\nbroken line\nMann\tmann\n");
  std::size_t skipped = 0;
  const auto idx = load_aliases(dir.file("aliases.tsv"), kg, &skipped);
  EXPECT_EQ(skipped, 2u);
  EXPECT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx.lookup("ridley scott")->front(), *kg.entity_id("scott"));
}
