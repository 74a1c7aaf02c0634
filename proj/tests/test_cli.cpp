// End-to-end checks of the command-line tool (exit codes and artifacts).

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "scl/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(SCL_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    Result r;
    char buf[4096];
    while (fgets(buf, sizeof buf, pipe)) r.out += buf;
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const fs::path& scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "scl_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string at(const std::string& name) { return (scratch() / name).string(); }

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help").code == 0);
    CHECK(run("train --help").code == 0);
    CHECK(run("").code == 2);
    CHECK(run("gen --layout hexagonal --out " + at("bad")).code == 2);
    CHECK(run("train --data " + at("missing") + " --out " + at("r")).code == 2);
}

TEST_CASE("gen is deterministic and counts match") {
    REQUIRE(run("gen --layout center --count 1000 --seed 7 --px 16 --out " + at("c1")).code == 0);
    REQUIRE(run("gen --layout center --count 1000 --seed 7 --px 16 --out " + at("c2")).code == 0);
    for (const char* f : {"manifest.json", "problems.ndjson", "images.bin"})
        CHECK(slurp(scratch() / "c1" / f) == slurp(scratch() / "c2" / f));
    CHECK(scl::rpm::read_dataset(at("c1")).size() == 1000);
}

TEST_CASE("gen joint balances layouts and honours held-out pairs") {
    REQUIRE(run("gen --layout joint --count 4000 --px 16 --out " + at("joint")).code == 0);
    const auto ds = scl::rpm::read_dataset(at("joint"));
    std::map<scl::rpm::Layout, int> counts;
    for (const auto& p : ds.problems) ++counts[p.layout];
    CHECK(counts.size() == 4);
    for (const auto& [layout, n] : counts) CHECK(n == 1000);

    REQUIRE(run("gen --layout joint --count 80 --px 16 --heldout-require color:progression --out " + at("req")).code == 0);
    for (const auto& p : scl::rpm::read_dataset(at("req")).problems) {
        bool has = false;
        for (const auto& r : p.rules)
            has |= r.attribute == scl::rpm::Attribute::Color && r.relation.kind == scl::rpm::RelationKind::Progression;
        CHECK(has);
    }
}

TEST_CASE("infeasible filter exits with 2") {
    const std::string all_type = " --heldout-exclude type:constant --heldout-exclude type:progression"
                                 " --heldout-exclude type:distribute_three --heldout-exclude type:arithmetic";
    CHECK(run("gen --layout center --count 5 --out " + at("inf") + all_type).code == 2);
}

TEST_CASE("train, eval, probe and report") {
    REQUIRE(run("gen --layout center --count 60 --seed 3 --px 16 --out " + at("small")).code == 0);
    const std::string train = "train --data " + at("small") + " --epochs 2 --seeds 1 --batch 16 --deterministic --quiet";
    const Result a = run(train + " --out " + at("runs/a"));
    REQUIRE(a.code == 0);
    REQUIRE(run(train + " --out " + at("runs/b")).code == 0);
    CHECK(slurp(scratch() / "runs/a/metrics.json") == slurp(scratch() / "runs/b/metrics.json"));
    CHECK(slurp(scratch() / "runs/a/best.ckpt") == slurp(scratch() / "runs/b/best.ckpt"));
    CHECK(fs::exists(scratch() / "runs/a/plan.json"));
    CHECK(nlohmann::json::parse(a.out).contains("test_acc"));

    const std::string ckpt = at("runs/a/best.ckpt");
    const Result ev = run("eval --ckpt " + ckpt + " --data " + at("small") + " --split all");
    REQUIRE(ev.code == 0);
    const auto j = nlohmann::json::parse(ev.out);
    CHECK(j["count"] == 60);
    CHECK(j["accuracy"].get<double>() >= 0.0);
    const Result masked = run("eval --ckpt " + ckpt + " --data " + at("small") + " --mask-context");
    REQUIRE(masked.code == 0);
    CHECK(nlohmann::json::parse(masked.out)["mask_context"] == true);
    CHECK(run("eval --ckpt " + at("nope.ckpt") + " --data " + at("small")).code == 2);
    CHECK(run("eval --ckpt " + ckpt + " --data " + at("small") + " --split everything").code == 2);

    const Result pr = run("probe --ckpt " + ckpt + " --data " + at("small") + " --split all --out " + at("probe"));
    REQUIRE(pr.code == 0);
    CHECK(fs::exists(scratch() / "probe/probe_report.json"));
    const std::string csv = slurp(scratch() / "probe/relation_embeddings.csv");
    CHECK(csv.rfind("d0,d1,d2,d3,d4,relation,attribute\n", 0) == 0);

    CHECK(run("report --run " + at("probe")).code == 2);  // no metrics there
    const Result rep = run("report --run " + at("runs") + " --format csv");
    REQUIRE(rep.code == 0);
    std::istringstream lines(rep.out);
    std::string header, row1, row2, extra;
    std::getline(lines, header);
    std::getline(lines, row1);
    std::getline(lines, row2);
    CHECK_FALSE(std::getline(lines, extra));
    CHECK(header == "run,seed,epochs,best_epoch,best_valid_acc,test_acc,final_train_loss");
    const auto m = nlohmann::json::parse(slurp(scratch() / "runs/a/seed_0/metrics.json"));
    std::ostringstream acc;
    acc << std::setprecision(6) << m["test_acc"].get<double>();
    CHECK(row1.rfind("a/seed_0,0,2,", 0) == 0);
    CHECK(row1.find("," + acc.str() + ",") != std::string::npos);
}

TEST_CASE("co-evolution probe from per-epoch checkpoints") {
    REQUIRE(run("gen --layout lr --count 40 --seed 4 --px 16 --out " + at("lr")).code == 0);
    REQUIRE(run("train --data " + at("lr") + " --epochs 3 --seeds 1 --patience 0 --batch 16 --epoch-checkpoints --quiet --out " +
                at("lr_run"))
                .code == 0);
    const Result pr = run("probe --ckpt " + at("lr_run/best.ckpt") + " --data " + at("lr") + " --out " + at("lr_probe") +
                          " --coevolution " + at("lr_run/epochs/seed_0"));
    REQUIRE(pr.code == 0);
    std::istringstream csv(slurp(scratch() / "lr_probe/coevolution.csv"));
    std::string line;
    int n = 0;
    while (std::getline(csv, line)) ++n;
    CHECK(n == 4);
    CHECK(nlohmann::json::parse(pr.out).contains("coevolution_correlation"));
}
