// Subprocess-level CLI checks. argv[1] is the path to the dualrec_cli
// binary; everything runs inside a scratch directory.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int failures = 0;

#define CHECK(cond)                                                            \
    do {                                                                       \
        if (!(cond)) {                                                         \
            ++failures;                                                        \
            std::cerr << "FAIL " << __FILE__ << ":" << __LINE__ << "  " #cond  \
                      << "\n";                                                 \
        }                                                                      \
    } while (0)

std::string cli;
fs::path tmp;

int run(const std::string& args) {
    std::string cmd = cli + " " + args + " >" + (tmp / "stdout.txt").string() + " 2>" +
                      (tmp / "stderr.txt").string();
    int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

long count_lines(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::string line;
    long n = 0;
    while (std::getline(is, line)) ++n;
    return n;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: test_cli <path-to-dualrec_cli>\n";
        return 2;
    }
    cli = argv[1];
    tmp = fs::temp_directory_path() / "dualrec_cli_test";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    auto in = [&](const char* name) { return (tmp / name).string(); };

    // ---- gen-world ----
    std::string world = in("world.jsonl");
    std::string gw = "gen-world --seed 7 --items 40 --users 6 --outfits 12 --outfit-size 3 --out ";
    CHECK(run(gw + world) == 0);
    CHECK(fs::exists(world));
    long world_lines = count_lines(world);
    CHECK(world_lines > 40 + 6 + 12);  // items + users + outfits + metadata
    std::string world_bytes = read_file(world);
    CHECK(run(gw + in("world2.jsonl")) == 0);
    CHECK(read_file(in("world2.jsonl")) == world_bytes);  // byte-identical rerun
    CHECK(run("gen-world --seed 8 --items 40 --users 6 --outfits 12 --outfit-size 3 --out " +
              in("world3.jsonl")) == 0);
    CHECK(read_file(in("world3.jsonl")) != world_bytes);  // seed matters
    CHECK(run("gen-world --items 0 --out " + in("bad.jsonl")) == 2);

    // ---- train ----
    std::string base = " --dataset " + world + " --depth 1 --width 8 --heads 2 --batch 2";
    std::string ck1 = in("stage1.ckpt");
    std::string train1 = "train" + base + " --stage 1 --steps 25 --seed 3 --metrics " +
                         in("metrics.csv") + " --out ";
    CHECK(run(train1 + ck1) == 0);
    CHECK(fs::exists(ck1));
    std::string m = read_file(in("metrics.csv"));
    CHECK(m.rfind("step,stage,image_loss,text_loss,joint_loss,mean_gap_norm\n", 0) == 0);
    CHECK(run(train1 + in("stage1b.ckpt")) == 0);
    CHECK(read_file(in("stage1b.ckpt")) == read_file(ck1));  // bitwise determinism

    // stage >= 2 without --init is a usage error
    CHECK(run("train" + base + " --stage 2 --steps 1 --out " + in("x.ckpt")) == 2);
    // bad flag values are usage errors
    CHECK(run("train" + base + " --stage 1 --steps 1 --lr 0 --out " + in("x.ckpt")) == 2);
    CHECK(run("train" + base + " --stage 9 --steps 1 --out " + in("x.ckpt")) == 2);

    std::string ck2 = in("stage2.ckpt");
    CHECK(run("train" + base + " --stage 2 --steps 10 --seed 3 --init " + ck1 + " --out " + ck2) ==
          0);
    std::string ck3 = in("stage3.ckpt");
    CHECK(run("train" + base + " --stage 3 --steps 5 --seed 3 --init " + ck2 + " --out " + ck3) ==
          0);
    // steps 0 still emits a checkpoint, identical to its init
    CHECK(run("train" + base + " --stage 2 --steps 0 --seed 3 --init " + ck1 + " --out " +
              in("noop.ckpt")) == 0);
    CHECK(read_file(in("noop.ckpt")) == read_file(ck1));

    // ---- infer ----
    std::string ibase = "infer --dataset " + world + " --checkpoint " + ck2 +
                        " --image-steps 3 --text-steps 2 --seed 5 --out ";
    CHECK(run(ibase + in("pfitb.jsonl") + " --task pfitb --n 6") == 0);
    CHECK(count_lines(in("pfitb.jsonl")) == 6);
    CHECK(run(ibase + in("pfitb2.jsonl") + " --task pfitb --n 6") == 0);
    CHECK(read_file(in("pfitb2.jsonl")) == read_file(in("pfitb.jsonl")));

    CHECK(run(ibase + in("gor.jsonl") + " --task gor --n 2 --categories top,shoes,hat") == 0);
    CHECK(count_lines(in("gor.jsonl")) == 6);  // 2 requests x 3 categories
    CHECK(run(ibase + in("y.jsonl") + " --task nonsense") == 2);
    CHECK(run("infer --dataset " + world + " --checkpoint " + in("missing.ckpt") + " --out " +
              in("y.jsonl")) != 0);

    // ---- eval ----
    std::string ev = "eval --dataset " + world + " --samples " + in("pfitb.jsonl") +
                     " --baseline-random --out ";
    CHECK(run(ev + in("report.csv")) == 0);
    std::string rep = read_file(in("report.csv"));
    CHECK(rep.rfind("task,metric,value,count\n", 0) == 0);
    CHECK(rep.find("pfitb,quality,") != std::string::npos);
    CHECK(rep.find("baseline,quality,") != std::string::npos);
    CHECK(run(ev + in("report2.csv")) == 0);
    CHECK(read_file(in("report2.csv")) == rep);

    {
        std::ofstream bad(in("bad_samples.jsonl"), std::ios::binary);
        bad << "{\"task\": \"pfitb\"\n";  // truncated json
    }
    CHECK(run("eval --dataset " + world + " --samples " + in("bad_samples.jsonl") + " --out " +
              in("r.csv")) == 2);

    // ---- global parse behavior ----
    CHECK(run("--help") == 0);
    CHECK(run("no-such-subcommand") == 2);
    CHECK(run("train --no-such-flag") == 2);

    if (failures == 0) {
        std::cout << "test_cli: all checks passed\n";
        return 0;
    }
    std::cout << "test_cli: " << failures << " check(s) failed\n";
    return 1;
}
