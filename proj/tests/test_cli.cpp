#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "racr/common.hpp"

using namespace racr;

namespace {

fs::path temp_root() {
    fs::path root = fs::temp_directory_path() / "racr_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

int run(const std::string& args, const fs::path& log) {
    std::string cmd = std::string(RACR_CLI) + " " + args + " >" + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Relative path -> file bytes, for whole-tree comparisons.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), root).string()] = slurp(entry.path());
    return out;
}

}  // namespace

TEST_CASE("synth: same seed and spec produce byte-identical dataset trees") {
    fs::path root = temp_root();
    fs::path spec = root / "spec.json";
    std::ofstream(spec) << R"({"class_counts": [3, 3, 3, 3], "d_f": 8,)"
                        << R"( "min_patches": 6, "max_patches": 10})";
    std::string common = "synth --spec " + spec.string() + " --seed 7 --out ";
    REQUIRE(run(common + (root / "a").string(), root / "a.log") == 0);
    REQUIRE(run(common + (root / "b").string(), root / "b.log") == 0);
    auto a = tree_bytes(root / "a"), b = tree_bytes(root / "b");
    REQUIRE(a.size() > 0);
    CHECK(a == b);
    fs::remove_all(root);
}

TEST_CASE("gradcheck subcommand exits zero on success") {
    fs::path root = temp_root();
    CHECK(run("gradcheck --patches 8 --df 8 --dh 6 --instances 1 --seed 5",
              root / "gc.log") == 0);
    CHECK(slurp(root / "gc.log").find("PASS") != std::string::npos);
    fs::remove_all(root);
}

TEST_CASE("eval without a checkpoint is a usage error") {
    fs::path root = temp_root();
    int code = run("eval --data " + root.string() + " --out " + (root / "out").string(),
                   root / "eval.log");
    CHECK(code != 0);
    CHECK(!slurp(root / "eval.log").empty());
    fs::remove_all(root);
}
