#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "orthograd/eval.hpp"
#include "orthograd/net.hpp"
#include "support.hpp"

using namespace orthograd;
using namespace testing_support;

namespace {

ResultRecord record(const std::string& method, std::uint64_t seed, std::size_t n_r, double u) {
    ResultRecord r;
    r.method = method;
    r.seed = seed;
    r.retain_size = n_r;
    r.epoch = 7;
    r.A_u = 80.123456789;
    r.A_r = 95.5;
    r.A_test = 79.987654321;
    r.A_p_test = 81.06;
    r.uis = u;
    r.stop_epoch = 7;
    r.stopped_early = true;
    return r;
}

std::string to_text(const std::vector<ResultRecord>& rs) {
    std::ostringstream out;
    write_report(out, rs, ReportFormat::keyvalue);
    return out.str();
}

}  // namespace

TEST(Uis, PublishedRows) {
    EXPECT_NEAR(uis(81.06, 78.22, 81.04), 0.0176, 0.0005);
    EXPECT_NEAR(uis(81.06, 75.47, 80.41), 0.038, 0.0005);
    EXPECT_NEAR(uis(81.06, 78.22, 81.04), 0.017641253392548733, 1e-15);
    EXPECT_EQ(uis(80, 80, 80), 0.0);
}

TEST(Uis, SymmetryAndScale) {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const double p = 10 + 80 * rng.uniform();
        const double a = 100 * rng.uniform();
        const double b = 100 * rng.uniform();
        EXPECT_DOUBLE_EQ(uis(p, a, b), uis(p, b, a));
        EXPECT_NEAR(uis(2 * p, 2 * a, 2 * b), uis(p, a, b), 1e-12);
        EXPECT_DOUBLE_EQ(uis(p, p, b), std::abs(p - b) / (2 * p));
    }
    EXPECT_THROW(uis(0.0, 1.0, 1.0), InvalidInput);
    EXPECT_THROW(uis(-1.0, 1.0, 1.0), InvalidInput);
}

TEST(EvaluateSplits, ConstantClassifierOnClassForget) {
    const auto [train, test] = gen_gaussian_blobs_train_test(4, 5, 50, 20, 1.0, 2);
    const Splits s = make_unlearn_split(train, test, SplitMode::forget_class_of(2), 60, 3);
    ParamVector always2 = ParamVector::zeros(NetworkSpec{{5, 4}, Activation::relu});
    always2.bias(0)[2] = 10.0;
    const AccuracyReport r = evaluate_splits(always2, s);
    EXPECT_EQ(r.A_u, 100.0);
    EXPECT_EQ(r.A_r, 0.0);
    EXPECT_EQ(r.A_test, 0.0);
    EXPECT_EQ(evaluate_accuracy(always2, *s.heldout), 100.0);
}

TEST(EvaluateSplits, UisRecordCarriesReport) {
    AccuracyReport r;
    r.A_u = 80.41;
    r.A_test = 75.47;
    r.method = "neggrad";
    r.seed = 4;
    r.epoch = 9;
    const ResultRecord rr = make_result_record(make_uis_record(81.06, r), 500, 9, true);
    EXPECT_EQ(rr.method, "neggrad");
    EXPECT_EQ(rr.seed, 4u);
    EXPECT_EQ(rr.retain_size, 500u);
    EXPECT_DOUBLE_EQ(rr.uis, uis(81.06, 75.47, 80.41));
    EXPECT_TRUE(rr.stopped_early);
}

TEST(Report, EmptyListIsHeaderOnly) {
    EXPECT_EQ(to_text({}), std::string(kResultsHeader) + "\n");
    std::istringstream in(to_text({}));
    EXPECT_TRUE(read_results(in, "mem").empty());
}

TEST(Report, StableOrderAndRoundTrip) {
    const std::vector<ResultRecord> rs = {record("neggrad", 1, 500, 0.04), record("orthograd+lora", 1, 500, 0.02),
                                          record("neggrad", 0, 500, 0.041), record("orthograd+lora", 0, 500, 0.018)};
    const std::string text = to_text(rs);
    std::istringstream in(text);
    const auto back = read_results(in, "mem");
    ASSERT_EQ(back.size(), 4u);
    EXPECT_EQ(back[0].method, "orthograd+lora");
    EXPECT_EQ(back[0].seed, 0u);
    EXPECT_EQ(back[1].seed, 1u);
    EXPECT_EQ(back[2].method, "neggrad");
    EXPECT_EQ(back[3].seed, 1u);
    EXPECT_NEAR(back[0].A_u, 80.123456789, 80.12 * 1e-6);
    EXPECT_NEAR(back[0].A_test, 79.987654321, 79.98 * 1e-6);
    EXPECT_EQ(back[0].A_p_test, 81.06);
    EXPECT_TRUE(back[0].stopped_early);
    EXPECT_EQ(to_text(back), text);

    std::vector<ResultRecord> shuffled = {rs[2], rs[3], rs[0], rs[1]};
    EXPECT_EQ(to_text(shuffled), text);
}

TEST(Report, LineFormat) {
    EXPECT_EQ(format_record(record("finetune", 2, 100, 0.5)),
              "method=finetune seed=2 retain_size=100 epoch=7 A_u=80.1235 A_r=95.5 A_test=79.9877 A_p_test=81.06 "
              "uis=0.5 stop_epoch=7 stopped_early=1");
}

TEST(Report, EmitWritesFile) {
    const std::string dir = scratch_dir("report");
    const std::vector<ResultRecord> rs = {record("neggrad", 0, 500, 0.04)};
    emit_report(rs, dir + "/results.txt", ReportFormat::keyvalue);
    EXPECT_EQ(load_results(dir + "/results.txt").size(), 1u);
    EXPECT_THROW(emit_report(rs, dir + "/missing/results.txt", ReportFormat::keyvalue), IoError);
    EXPECT_THROW(load_results(dir + "/nothing.txt"), IoError);
}

TEST(Report, ParseErrors) {
    const std::string good = format_record(record("neggrad", 0, 500, 0.04));
    auto fails = [](const std::string& line) {
        std::istringstream in("# header\n" + line + "\n");
        try {
            read_results(in, "r.txt");
        } catch (const ParseError& e) {
            return std::string(e.what()).find("r.txt:2") != std::string::npos;
        }
        return false;
    };
    std::string swapped = good;
    swapped.replace(swapped.find("seed=0 retain_size=500"), 22, "retain_size=500 seed=0");
    EXPECT_TRUE(fails(swapped));
    EXPECT_TRUE(fails(good + " extra=1"));
    EXPECT_TRUE(fails(good.substr(0, good.find(" stopped_early"))));
    EXPECT_TRUE(fails("method=neggrad seed"));
    std::string bad_number = good;
    bad_number.replace(bad_number.find("A_r=95.5"), 8, "A_r=abc!");
    EXPECT_TRUE(fails(bad_number));
    std::string bad_flag = good;
    bad_flag.back() = '7';
    EXPECT_TRUE(fails(bad_flag));
}

TEST(Summary, PopulationStdAndMedian) {
    const Stat s = summarize({1.0, 2.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 7.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.std, std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                       (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 3.0));
    EXPECT_EQ(s.median, 2.0);
    EXPECT_EQ(summarize({1.0, 2.0, 4.0, 10.0}).median, 3.0);
    EXPECT_EQ(summarize({}).count, 0u);
}

TEST(Summary, ComparisonTableReprintsRows) {
    const std::string table =
        format_comparison({record("orthograd+lora", 0, 500, 0.0176), record("neggrad", 0, 500, 0.0385)});
    EXPECT_NE(table.find("orthograd+lora"), std::string::npos);
    EXPECT_NE(table.find("0.018 ± 0.000"), std::string::npos);
    EXPECT_NE(table.find("0.038 ± 0.000"), std::string::npos);
    EXPECT_NE(table.find("80.12 ± 0.00"), std::string::npos);
    EXPECT_LT(table.find("orthograd+lora"), table.find("neggrad"));
}

TEST(Summary, SweepHasRowPerSize) {
    std::vector<ResultRecord> rs;
    for (std::size_t n : {100, 500, 2000})
        for (std::uint64_t seed : {0, 1, 2}) {
            rs.push_back(record("orthograd+lora", seed, n, 0.02 + 0.001 * static_cast<double>(seed)));
            rs.push_back(record("neggrad", seed, n, 0.04));
        }
    const auto sums = summarize_records(rs, true);
    ASSERT_EQ(sums.size(), 6u);
    EXPECT_EQ(sums[0].method, "orthograd+lora");
    EXPECT_EQ(sums[0].retain_size, 100u);
    EXPECT_EQ(sums[2].retain_size, 2000u);
    EXPECT_EQ(sums[0].uis.count, 3u);
    EXPECT_DOUBLE_EQ(sums[0].uis.median, 0.021);
    EXPECT_EQ(sums[3].uis.std, 0.0);
    const std::string sweep = format_sweep(rs);
    std::size_t rows = 0;
    for (char c : sweep) rows += c == '\n';
    EXPECT_EQ(rows, 7u);
}
