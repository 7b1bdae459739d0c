#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowstage/flow.hpp"
#include "flowstage/scenario.hpp"
#include "helpers.hpp"

using namespace flowstage;

namespace {

const char* kCsvHeader =
    "ts,src_ip,src_port,dst_ip,dst_port,proto,duration,src_bytes,src_ip_bytes,service,type\n";

FeatureSchemaSpec csv_spec() {
    FeatureSchemaSpec spec;
    spec.numeric_names = {"duration", "src_bytes", "src_ip_bytes"};
    spec.categorical_names = {"service"};
    spec.dropped_names = {"src_ip_bytes"};
    return spec;
}

}  // namespace

TEST_CASE("parse_flows maps rows and labels") {
    std::istringstream in(std::string(kCsvHeader) +
                          "3.0,10.0.0.1,1234,10.0.0.2,80,tcp,1.5,100,900,http,normal\n"
                          "1.0,10.0.0.3,1234,10.0.0.2,22,tcp,0.1,40,20000,-,scanning\n"
                          "2.0,10.0.0.1,1235,10.0.0.4,443,tcp,2.0,300,700,ssl,normal\n");
    const auto ds = parse_flows(in, csv_spec(), StageMapping::default_mapping());
    REQUIRE(ds.size() == 3);
    CHECK(ds.malformed_rows == 0);
    // sorted by timestamp
    CHECK(ds.flows[0].timestamp == 1.0);
    CHECK(ds.flows[0].attack_type == "scanning");
    CHECK(ds.stage_labels[0] == StageLabel::Stage1);
    CHECK(ds.stage_labels[1] == StageLabel::Normal);
    CHECK(ds.flows[2].timestamp == 3.0);
}

TEST_CASE("parse_flows drops the src_ip_bytes column from the schema") {
    std::istringstream in(std::string(kCsvHeader) +
                          "1.0,10.0.0.1,1,10.0.0.2,2,tcp,1.0,10,999,http,normal\n");
    const auto ds = parse_flows(in, csv_spec(), StageMapping::default_mapping());
    CHECK(ds.schema.numeric_names == std::vector<std::string>{"duration", "src_bytes"});
    REQUIRE(ds.flows[0].numeric_features.size() == 2);
    CHECK(ds.flows[0].numeric_features[1] == 10.0);
}

TEST_CASE("parse_flows requires endpoint columns") {
    std::istringstream in(
        "ts,src_ip,src_port,dst_port,proto,duration,src_bytes,src_ip_bytes,service,type\n");
    CHECK_THROWS_MATCHES(
        parse_flows(in, csv_spec(), StageMapping::default_mapping()), MissingColumn,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("dst_ip")));
}

TEST_CASE("parse_flows fails on unmapped attack types") {
    std::istringstream in(std::string(kCsvHeader) +
                          "1.0,10.0.0.1,1,10.0.0.2,2,tcp,1.0,10,1,http,zero_day_worm\n");
    CHECK_THROWS_AS(parse_flows(in, csv_spec(), StageMapping::default_mapping()),
                    UnmappedAttackType);
}

TEST_CASE("parse_flows counts malformed rows and rejects empty input") {
    std::istringstream in(std::string(kCsvHeader) +
                          "1.0,10.0.0.1,1,10.0.0.2,2,tcp,not_a_number,10,1,http,normal\n"
                          "oops\n"
                          "2.0,10.0.0.1,99999,10.0.0.2,2,tcp,1.0,10,1,http,normal\n"
                          "3.0,10.0.0.1,1,10.0.0.2,2,tcp,1.0,10,1,http,normal\n");
    const auto ds = parse_flows(in, csv_spec(), StageMapping::default_mapping());
    CHECK(ds.size() == 1);
    CHECK(ds.malformed_rows == 3);

    std::istringstream empty(kCsvHeader);
    CHECK_THROWS_AS(parse_flows(empty, csv_spec(), StageMapping::default_mapping()), EmptyDataset);
}

TEST_CASE("map_attack_to_stage follows the shipped mapping") {
    const auto mapping = StageMapping::default_mapping();
    CHECK(map_attack_to_stage("scanning", mapping) == StageLabel::Stage1);
    CHECK(map_attack_to_stage("ransomware", mapping) == StageLabel::Stage3);
    CHECK(map_attack_to_stage("normal", mapping) == StageLabel::Normal);
    CHECK(map_attack_to_stage("MITM", mapping) == StageLabel::Stage2);
    CHECK_THROWS_AS(map_attack_to_stage("unknown_worm", mapping), UnmappedAttackType);
}

TEST_CASE("stage mapping round-trips through its file format") {
    const auto mapping = StageMapping::default_mapping();
    std::ostringstream out;
    mapping.save(out);
    const auto path = std::filesystem::temp_directory_path() / "fs_mapping_test.txt";
    {
        std::ofstream f(path);
        f << out.str();
    }
    const auto loaded = StageMapping::load(path.string());
    CHECK(loaded.table == mapping.table);
}

TEST_CASE("binarize_for_stage marks exactly the requested stage") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b", "normal"),
                                      testutil::make_flow(2, "a", "b", "scanning"),
                                      testutil::make_flow(3, "a", "b", "xss")});
    CHECK(binarize_for_stage(ds, 1) == std::vector<std::uint8_t>{0, 1, 0});
    CHECK(binarize_for_stage(ds, 2) == std::vector<std::uint8_t>{0, 0, 1});
    CHECK(binarize_for_stage(ds, 3) == std::vector<std::uint8_t>{0, 0, 0});

    auto all_normal = testutil::make_dataset(
        {testutil::make_flow(1, "a", "b"), testutil::make_flow(2, "a", "b")});
    CHECK(binarize_for_stage(all_normal, 2) == std::vector<std::uint8_t>{0, 0});

    auto stage3 = testutil::make_dataset({testutil::make_flow(1, "a", "b", "dos"),
                                          testutil::make_flow(2, "a", "b", "backdoor")});
    CHECK(binarize_for_stage(stage3, 3) == std::vector<std::uint8_t>{1, 1});
}

TEST_CASE("binarize positives over stages partition the malicious flows") {
    Rng rng(99);
    std::vector<FlowRecord> flows;
    const char* tokens[] = {"normal", "scanning", "password", "xss",        "mitm",
                            "dos",    "ddos",     "backdoor", "ransomware", "injection"};
    for (int i = 0; i < 200; ++i)
        flows.push_back(testutil::make_flow(i, "a", "b", tokens[uniform_index(rng, 10)]));
    auto ds = testutil::make_dataset(std::move(flows));
    const auto y1 = binarize_for_stage(ds, 1);
    const auto y2 = binarize_for_stage(ds, 2);
    const auto y3 = binarize_for_stage(ds, 3);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int hits = y1[i] + y2[i] + y3[i];
        CHECK(hits == (ds.stage_labels[i] == StageLabel::Normal ? 0 : 1));
    }
}

TEST_CASE("preprocess_features standardizes with training statistics") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b", "normal", 2.0, 2.0),
                                      testutil::make_flow(2, "a", "b", "normal", 4.0, 4.0)});
    const Matrix x = preprocess_features(ds, true);
    // mean 3, population std 1
    CHECK(x(0, 0) == Catch::Approx(-1.0));
    CHECK(x(1, 0) == Catch::Approx(1.0));
}

TEST_CASE("unseen categorical tokens land in the reserved slot") {
    auto train = testutil::make_dataset({testutil::make_flow(1, "a", "b", "normal", 1, 1, "http"),
                                         testutil::make_flow(2, "a", "b", "normal", 2, 2, "dns")});
    preprocess_features(train, true);
    auto test = testutil::make_dataset({testutil::make_flow(3, "a", "b", "normal", 1, 1, "gopher")});
    const Matrix x = preprocess_features(test, false, &train.schema);
    // columns: 2 numerics + one-hot {dns, http, unseen}
    REQUIRE(x.cols() == 5);
    CHECK(x(0, 2) == 0.0);
    CHECK(x(0, 3) == 0.0);
    CHECK(x(0, 4) == 1.0);
}

TEST_CASE("applying preprocessing without a fitted schema fails") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b")});
    CHECK_THROWS_AS(preprocess_features(ds, false), SchemaMismatch);
    FeatureSchema other = testutil::tiny_schema();
    other.fitted = true;
    other.numeric_names = {"something_else"};
    auto ds2 = testutil::make_dataset({testutil::make_flow(1, "a", "b")});
    CHECK_THROWS_AS(preprocess_features(ds2, false, &other), SchemaMismatch);
}

TEST_CASE("standardization is idempotent on the training set") {
    Rng rng(17);
    std::vector<FlowRecord> flows;
    for (int i = 0; i < 300; ++i)
        flows.push_back(testutil::make_flow(i, "a", "b", "normal", uniform_real(rng, 0.0, 50.0),
                                            uniform_real(rng, 10.0, 5000.0)));
    auto train = testutil::make_dataset(std::move(flows));
    const Matrix x = preprocess_features(train, true);
    for (Eigen::Index j = 0; j < 2; ++j) {
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-9);
    }
}

TEST_CASE("constant numeric columns get unit variance") {
    auto ds = testutil::make_dataset({testutil::make_flow(1, "a", "b", "normal", 7.0, 1.0),
                                      testutil::make_flow(2, "a", "b", "normal", 7.0, 2.0)});
    const Matrix x = preprocess_features(ds, true);
    CHECK(x(0, 0) == 0.0);
    CHECK(x(1, 0) == 0.0);
    CHECK(ds.schema.numeric_stdevs[0] == 1.0);
}

TEST_CASE("parse-serialize-parse is the identity on flow records") {
    const auto trace = generate_trace(testutil::tiny_scenario());
    const std::string csv1 = testutil::serialize_to_string(trace);
    FeatureSchemaSpec spec;
    spec.numeric_names = trace.schema.numeric_names;
    spec.categorical_names = trace.schema.categorical_names;
    spec.dropped_names.clear();
    std::istringstream in1(csv1);
    const auto parsed1 = parse_flows(in1, spec, StageMapping::default_mapping());
    const std::string csv2 = testutil::serialize_to_string(parsed1);
    std::istringstream in2(csv2);
    const auto parsed2 = parse_flows(in2, spec, StageMapping::default_mapping());
    REQUIRE(parsed1.size() == parsed2.size());
    CHECK(csv1 == csv2);
    for (std::size_t i = 0; i < parsed1.size(); ++i) {
        const auto& a = parsed1.flows[i];
        const auto& b = parsed2.flows[i];
        CHECK(a.timestamp == b.timestamp);
        CHECK(a.src_ip == b.src_ip);
        CHECK(a.dst_port == b.dst_port);
        CHECK(a.numeric_features == b.numeric_features);
        CHECK(a.categorical_features == b.categorical_features);
        CHECK(a.attack_type == b.attack_type);
    }
}

TEST_CASE("schema spec files parse") {
    const auto path = std::filesystem::temp_directory_path() / "fs_schema_test.txt";
    {
        std::ofstream f(path);
        f << "# test schema\nnumeric = duration, src_bytes\ncategorical = service\n"
             "dropped = src_bytes\n";
    }
    const auto spec = FeatureSchemaSpec::load(path.string());
    CHECK(spec.numeric_names == std::vector<std::string>{"duration", "src_bytes"});
    CHECK(spec.dropped_names == std::vector<std::string>{"src_bytes"});
}
