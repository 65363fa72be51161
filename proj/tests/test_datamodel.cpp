#include <gtest/gtest.h>

#include "kc/datamodel.hpp"
#include "oracle.hpp"

using kc::MetricSpec;

TEST(MetricSpec, FactoriesAndValidation) {
  EXPECT_EQ(MetricSpec::l1().parameter, 1.0);
  EXPECT_TRUE(std::isinf(MetricSpec::linf().parameter));
  EXPECT_NO_THROW(validate(MetricSpec::cosine()));
  EXPECT_THROW(validate(MetricSpec::lp(0.5)), kc::ValidationError);
  EXPECT_THROW(validate(MetricSpec::discrete(0.0)), kc::ValidationError);
  EXPECT_THROW(validate(MetricSpec::discrete(std::numeric_limits<double>::infinity())), kc::ValidationError);
  MetricSpec m = MetricSpec::l2();
  m.zero_tol = 0.0;
  EXPECT_THROW(validate(m), kc::ValidationError);
}

TEST(ActivationDataset, ValidDatasetPasses) {
  EXPECT_NO_THROW(validate(oracle::random_dataset(1, {5, {3, 2}, true})));
}

TEST(ActivationDataset, RejectsEmptyAndInconsistent) {
  kc::ActivationDataset empty;
  EXPECT_THROW(validate(empty), kc::ValidationError);

  auto ds = oracle::random_dataset(2, {4, {2}});
  auto bad = ds;
  bad.losses[1] = -0.5;
  EXPECT_THROW(validate(bad), kc::ValidationError);
  bad = ds;
  bad.layers[0].values.pop_back();
  EXPECT_THROW(validate(bad), kc::ValidationError);
  bad = ds;
  bad.layers[0].values[3] = std::nan("");
  EXPECT_THROW(validate(bad), kc::ValidationError);
  bad = ds;
  bad.layers[0].index = 2;
  EXPECT_THROW(validate(bad), kc::ValidationError);
  bad = ds;
  bad.example_ids.pop_back();
  EXPECT_THROW(validate(bad), kc::ValidationError);
  bad = ds;
  bad.layers.clear();
  EXPECT_THROW(validate(bad), kc::ValidationError);
}

TEST(ActivationDataset, LayerLookupNamesValidRange) {
  const auto ds = oracle::random_dataset(3, {4, {2, 2, 2}});
  EXPECT_EQ(ds.layer(3).index, 3u);
  try {
    ds.layer(4);
    FAIL();
  } catch (const kc::ValidationError& e) {
    EXPECT_EQ(e.code(), "layer-range");
    EXPECT_NE(std::string(e.what()).find("1..3"), std::string::npos);
  }
  EXPECT_THROW(ds.layer(0), kc::ValidationError);
}
