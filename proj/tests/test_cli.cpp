#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "dimwm/io.hpp"
#include "dimwm/metrics.hpp"
#include "dimwm/plot.hpp"

using namespace dimwm;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path workdir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dimwm_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path tiny_checkpoint(const fs::path& dir, const std::string& mapping = "") {
    write(dir / "run.cfg", "[mapping]\nframes = 2\nheight = 16\nwidth = 16\nmessage_length = 8\n" + mapping +
                               "[train]\nsteps = 0\n[io]\nout_dir = " + (dir / "run").string() + "\n");
    REQUIRE(cli({"train", "-c", (dir / "run.cfg").string()}).code == 0);
    return dir / "run" / "final.dimc";
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"train", "-c", "/nonexistent/run.cfg"}).code == 2);
    CHECK(cli({"train"}).code == 2);
    CHECK(cli({"--help"}).code == 0);
    const auto d = workdir("bad");
    write(d / "bad.cfg", "[train]\nsteps = 10\nnonsense = 3\n");
    const auto r = cli({"train", "-c", (d / "bad.cfg").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 3") != std::string::npos);
}

TEST_CASE("zero-step training writes only the initial checkpoint") {
    const auto d = workdir("zero");
    const auto ck = tiny_checkpoint(d);
    std::vector<fs::path> cks;
    for (const auto& e : fs::directory_iterator(d / "run"))
        if (e.path().extension() == ".dimc") cks.push_back(e.path());
    REQUIRE(cks.size() == 1);
    CHECK(cks[0] == ck);
    const auto loaded = load_checkpoint(ck);
    CHECK(loaded.step == 0);
    MappingConfig m;
    m.frames = 2;
    m.height = m.width = 16;
    m.message_length = 8;
    const auto init = initial_checkpoint(m, TrainConfig{});
    const auto pa = loaded.bundle.parameters(), pb = init.bundle.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].var.value() == pb[i].var.value());
}

TEST_CASE("embed, extract, localize and attack round trip through files") {
    const auto d = workdir("embed");
    const auto ck = tiny_checkpoint(d).string();
    const auto clip = (d / "clip.dimt").string();
    REQUIRE(cli({"synth", "-o", clip, "--frames", "2", "--height", "16", "--width", "16", "--seed", "3"}).code == 0);
    REQUIRE(cli({"gen-mask", "-o", (d / "mask.dimt").string(), "--frames", "2", "--height", "16", "--width", "16"}).code == 0);

    auto r = cli({"embed", "-k", ck, "-i", clip, "-o", (d / "wm.dimt").string(), "-m", "a5"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("psnr") != std::string::npos);
    const auto bundle = load_checkpoint(ck).bundle;
    const auto host = load_clip(clip);
    const SpatioTemporalMask full(2, 16, 16, 1, 1);
    CHECK(load_clip(d / "wm.dimt") == embed(bundle, host, BinaryMessage::from_hex("a5", 8), full));

    r = cli({"embed", "-k", ck, "-i", clip, "-o", (d / "same.dimt").string(), "-m", "a5", "--mu", "0"});
    REQUIRE(r.code == 0);
    CHECK(load_clip(d / "same.dimt") == host);

    r = cli({"embed", "-k", ck, "-i", clip, "-o", (d / "local.dimt").string(), "--mask", (d / "mask.dimt").string()});
    REQUIRE(r.code == 0);
    const auto mask = load_mask(d / "mask.dimt");
    const auto local = load_clip(d / "local.dimt");
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x)
                if (!mask.at(t, y, x)) CHECK(local.at(t, y, x, 0) == host.at(t, y, x, 0));

    CHECK(cli({"embed", "-k", ck, "-i", clip, "-o", (d / "x.dimt").string(), "-m", "zz"}).code == 2);
    CHECK(cli({"embed", "-k", ck, "-i", clip, "-o", (d / "x.dimt").string(), "-m", "abc"}).code == 2);

    r = cli({"extract", "-k", ck, "-i", (d / "wm.dimt").string(), "--mask-out", (d / "pred.dimt").string(), "--expect", "a5"});
    CHECK(r.code == 0);
    CHECK(r.out.find("message ") != std::string::npos);
    CHECK(fs::exists(d / "pred.dimt"));

    r = cli({"localize", "-k", ck, "-i", (d / "wm.dimt").string(), "-o", (d / "loc.dimt").string(), "--truth",
             (d / "mask.dimt").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("iou ") != std::string::npos);

    r = cli({"attack", "-i", (d / "wm.dimt").string(), "-p", "hflip", "-o", (d / "flip.dimt").string(), "--mask",
             (d / "mask.dimt").string(), "--mask-out", (d / "flipmask.dimt").string()});
    CHECK(r.code == 0);
    CHECK(cli({"attack", "-i", (d / "flip.dimt").string(), "-p", "hflip", "-o", (d / "flip2.dimt").string()}).code == 0);
    CHECK(load_clip(d / "flip2.dimt") == load_clip(d / "wm.dimt"));
    CHECK(cli({"attack", "-i", clip, "-p", "nope", "-o", (d / "n.dimt").string()}).code == 2);
    CHECK(cli({"order", "-k", ck, "-i", clip}).code == 2);
}

TEST_CASE("regime and payload mismatches exit with 2") {
    const auto d = workdir("m13");
    const auto ck = tiny_checkpoint(d, "d_e = 1\n").string();
    const auto clip = (d / "clip.dimt").string();
    cli({"synth", "-o", clip, "--frames", "2", "--height", "16", "--width", "16"});
    cli({"gen-mask", "-o", (d / "mask.dimt").string(), "--frames", "2", "--height", "16", "--width", "16"});
    CHECK(cli({"embed", "-k", ck, "-i", clip, "-o", (d / "w.dimt").string(), "--mask", (d / "mask.dimt").string()}).code == 2);
    CHECK(cli({"embed", "-k", ck, "-i", clip, "-o", (d / "w.dimt").string()}).code == 0);

    const auto d2 = workdir("m23");
    const auto ck2 = tiny_checkpoint(d2, "d_e = 2\n").string();
    CHECK(cli({"embed", "-k", ck2, "-i", clip, "-o", (d2 / "w.dimt").string(), "--mask", (d / "mask.dimt").string()}).code == 2);
    cli({"gen-mask", "-o", (d2 / "m2.dimt").string(), "--frames", "1", "--height", "16", "--width", "16"});
    CHECK(cli({"embed", "-k", ck2, "-i", clip, "-o", (d2 / "w.dimt").string(), "--mask", (d2 / "m2.dimt").string()}).code == 0);
}

TEST_CASE("frame order from a multichannel checkpoint") {
    const auto d = workdir("order");
    const auto ck = tiny_checkpoint(d, "mask_channels = 2\n").string();
    const auto clip = (d / "clip.dimt").string();
    cli({"synth", "-o", clip, "--frames", "2", "--height", "16", "--width", "16"});
    const auto r = cli({"order", "-k", ck, "-i", clip});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("order ", 0) == 0);
}

TEST_CASE("bench reports positive throughput") {
    const auto r = cli({"bench", "--repeat", "1", "--frames", "2", "--height", "16", "--width", "16", "--length", "8"});
    REQUIRE(r.code == 0);
    std::istringstream in(r.out);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string op;
        double clips, secs, fps;
        if (ls >> op >> clips >> secs >> fps && (op == "embed" || op == "extract")) {
            CHECK(fps > 0);
            ++rows;
        }
    }
    CHECK(rows == 2);
}

TEST_CASE("eval on a two-clip dataset and plotting") {
    const auto d = workdir("eval");
    const auto ck = tiny_checkpoint(d).string();
    fs::create_directories(d / "clips");
    cli({"synth", "-o", (d / "clips").string(), "--count", "2", "--frames", "2", "--height", "16", "--width", "16"});
    const auto r = cli({"eval", "-k", ck, "-d", (d / "clips").string(), "-o", (d / "report").string()});
    REQUIRE(r.code == 0);
    for (auto f : {"report.txt", "distortions.csv", "categories.csv", "bins.csv"}) CHECK(fs::exists(d / "report" / f));
    const auto cats = read_csv(d / "report" / "categories.csv");
    std::set<std::string> names;
    for (const auto& row : cats.rows) names.insert(row[cats.column("category")]);
    CHECK(names == std::set<std::string>{"valuemetric", "geometric", "frame-level", "compression"});
    CHECK(cli({"plot", "-r", (d / "report").string()}).code == 0);
    CHECK(fs::exists(d / "report" / "plots" / "by_distortion.svg"));
}

TEST_CASE("plotting a hand-written report reproduces its numbers") {
    const auto d = workdir("plot");
    write(d / "distortions.csv",
          "distortion,category,available,clips,bit_accuracy,iou,miou\n"
          "clean,clean,1,3,0.9375,0.8125,\n"
          "hflip,geometric,1,3,0.71875,0.5,\n"
          "h264_crf20,compression,0,0,,,\n");
    write(d / "bins.csv",
          "distortion,bin,lo,hi,count,decoded,bit_accuracy,iou\n"
          "clean,0,0,0.1,0,0,,\n"
          "clean,3,0.3,0.4,2,2,0.96875,0.75\n"
          "hflip,9,0.9,1,1,1,0.625,0.25\n");
    const auto r = cli({"plot", "-r", d.string(), "-o", (d / "out").string()});
    REQUIRE(r.code == 0);
    const auto by = read_csv(d / "out" / "by_distortion.csv");
    REQUIRE(by.rows.size() == 3);
    CHECK(by.rows[0][by.column("bit_accuracy")] == "0.9375");
    CHECK(by.rows[1][by.column("iou")] == "0.5");
    CHECK(by.rows[2][by.column("bit_accuracy")] == "");
    const auto bits = read_csv(d / "out" / "by_ratio_bit_accuracy.csv");
    REQUIRE(bits.rows.size() == 10);
    CHECK(bits.rows[3][bits.column("clean")] == "0.96875");
    CHECK(bits.rows[9][bits.column("hflip")] == "0.625");
    CHECK(bits.rows[0][bits.column("clean")] == "");
    const auto ious = read_csv(d / "out" / "by_ratio_iou.csv");
    CHECK(ious.rows[3][ious.column("clean")] == "0.75");
    const std::string svg = read(d / "out" / "by_distortion.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("0.9375") != std::string::npos);
    CHECK(cli({"plot", "-r", (d / "missing").string()}).code == 2);
}

TEST_CASE("csv helpers") {
    CsvTable t{{"a", "b"}, {{"1", "x,y"}, {"2", "say \"hi\""}}};
    const auto back = parse_csv(write_csv(t));
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK_THROWS_AS(parse_csv("a,b\n1\n"), InvalidArgument);
    CHECK_THROWS_AS(t.column("zzz"), InvalidArgument);
}
