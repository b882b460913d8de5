#include <gtest/gtest.h>

#include "support/properties.hpp"

using namespace laav::testing;

namespace {

constexpr std::size_t kCases = 200;
constexpr std::uint64_t kSeed = 20240611;

void expect_holds(const PropertyResult& r) {
  EXPECT_EQ(r.cases, kCases);
  EXPECT_TRUE(r.ok()) << r.name << ": " << r.failures << " failures; " << r.first_failure;
}

}  // namespace

TEST(Property, Disjointness) { expect_holds(prop_disjointness(kCases, kSeed)); }
TEST(Property, AssignmentSoundness) { expect_holds(prop_assignment_soundness(kCases, kSeed)); }
TEST(Property, AtMostKPerClass) { expect_holds(prop_at_most_k(kCases, kSeed)); }
TEST(Property, MonotonicUnderAppendedExample) { expect_holds(prop_monotonicity(kCases, kSeed)); }
TEST(Property, ExactlyOneMask) { expect_holds(prop_single_mask(kCases, kSeed)); }
TEST(Property, ClassScoresNonPositive) { expect_holds(prop_scores_nonpositive(kCases, kSeed)); }
TEST(Property, TrainingLossNonNegative) { expect_holds(prop_loss_nonnegative(kCases, kSeed)); }
TEST(Property, ArgmaxTieBreak) { expect_holds(prop_argmax_tiebreak(kCases, kSeed)); }
TEST(Property, LogitsDifferenceTranslationInvariance) { expect_holds(prop_logits_translation(kCases, kSeed)); }
TEST(Property, SeedDeterministicSampling) { expect_holds(prop_sampling_determinism(kCases, kSeed)); }

// A broken invariant must be reported, not swallowed.
TEST(Property, HarnessReportsCounterexamples) {
  const auto r = run_property("always_fails", 3, 1, [](laav::rng::Engine&, std::size_t i) {
    return i == 1 ? std::string("boom") : std::string();
  });
  EXPECT_EQ(r.failures, 1u);
  EXPECT_EQ(r.first_failure, "case 1: boom");
  EXPECT_FALSE(r.ok());
}
