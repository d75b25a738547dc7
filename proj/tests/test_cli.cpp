#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "support.hpp"

using namespace testsupport;

namespace {

struct Outcome {
    int code = -1;
    std::string out, err;
};

Outcome cli(const std::string& args) {
    static TempDir tmp("cli-io");
    const auto out = tmp / "stdout", err = tmp / "stderr";
    const auto cmd = std::string(AGENTSOC_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = read_file(out);
    o.err = read_file(err);
    return o;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string run_args(const fs::path& events) {
    return "run --events " + q(events) + " --snapshot " + q(fixture_files().snapshot);
}

}  // namespace

TEST_CASE("fixture writes the same files as the library") {
    TempDir out("cli-fx");
    const auto o = cli("fixture --out " + q(out.path()));
    CHECK(o.code == 0);
    for (const auto& e : fs::directory_iterator(fixture_files().dir.path())) {
        const auto name = e.path().filename().string();
        CHECK_MESSAGE(read_file(out / name) == read_file(e.path()), name);
    }
    CHECK(cli("fixture").code != 0);  // --out is required
}

TEST_CASE("run prints the report and writes the journal") {
    TempDir out("cli-run");
    auto o = cli(run_args(fixture_files().poc) + " --out " + q(out.path()) + " --workers 1");
    REQUIRE(o.code == 0);
    CHECK(o.out.rfind("Run report (DryRun)", 0) == 0);
    CHECK(o.out.find("ISOLATE_HOST(ws-fin-27)") != std::string::npos);
    CHECK(o.out == read_file(out / "report.txt"));

    o = cli(run_args(fixture_files().poc) + " --json --set rsem.alpha=0.3 --set rsem.beta=0.7");
    REQUIRE(o.code == 0);
    const auto rep = json::parse(o.out);
    CHECK(rep.at("clusters") == 1);
    CHECK(rep.at("status_counts") == json{{"Executed", 1}});

    o = cli("report " + q(out.path()));
    CHECK(o.code == 0);
    CHECK(o.out == read_file(out / "report.txt"));
}

TEST_CASE("fatal errors exit 1 with a message") {
    TempDir dir("cli-err");
    auto o = cli("report " + q(dir / "nothing"));
    CHECK(o.code == 1);
    CHECK(o.err.rfind("error: no run report in", 0) == 0);

    o = cli("run --events " + q(dir / "missing.txt") + " --snapshot " + q(fixture_files().snapshot));
    CHECK(o.code == 1);
    CHECK(o.err.rfind("error: events file not found", 0) == 0);

    o = cli(run_args(fixture_files().poc) + " --set rsem.alpha=0");
    CHECK(o.code == 1);
    CHECK(o.err.find("rsem.alpha") != std::string::npos);

    o = cli(run_args(fixture_files().poc) + " --set nonsense");
    CHECK(o.code == 1);

    write_file(dir / "bad.toml", "[rsem]\nalpha = 0.5\nwat = 1\n");
    o = cli(run_args(fixture_files().poc) + " --config " + q(dir / "bad.toml"));
    CHECK(o.code == 1);
    CHECK(o.err.find("bad.toml") != std::string::npos);

    o = cli("serve --journal " + q(dir / "nothing") + " --port 0");
    CHECK(o.code == 1);
    CHECK(o.err.rfind("error:", 0) == 0);

    CHECK(cli("run --events").code != 0);
    CHECK(cli("frobnicate").code != 0);
}
