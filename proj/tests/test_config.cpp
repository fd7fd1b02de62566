#include "ivpb/config.hpp"
#include "ivpb/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>

using namespace ivpb;

namespace {

std::string scratch_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("ivpb_test_config_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

} // namespace

TEST_CASE("empty text yields the documented defaults")
{
    const auto c = parse_config("");
    CHECK(c.dim == 1);
    CHECK(c.cells == 64);
    CHECK(c.velocity_nodes == 16);
    CHECK(c.v_max == doctest::Approx(6.928203230275509));
    CHECK(c.beta == 3.5);
    CHECK(c.theta_M == "midpoint");
    CHECK(c.euler_cells == 512);
    CHECK(c.collision_mode == "bgk");
    CHECK(c.k == 1);
    CHECK(c.epsilons == std::vector<double>{0.2, 0.1, 0.05, 0.025});
    CHECK(c.T == 0.5);
    CHECK(c.kinetic_options().cfl == 0.5);
    CHECK(c.sweep_config().checked_epsilons().size() == 4);
    CHECK(c.collision().mode == CollisionMode::bgk);
    CHECK(config_keys().size() > 40);
}

TEST_CASE("key = value parsing with comments")
{
    const auto c = parse_config("# comment\ngrid.cells = 32   # trailing\n\nphysics.K = 2\ncollision.mode = hard_sphere\n"
                                "kinetic.epsilons = 0.4, 0.2, 0.1\n");
    CHECK(c.cells == 32);
    CHECK(c.K == 2.0);
    CHECK(c.collision().mode == CollisionMode::hard_sphere);
    CHECK(c.epsilons.size() == 3);
}

TEST_CASE("rejections name the offending key")
{
    CHECK_THROWS_WITH_AS(parse_config("grid.colls = 3\n"), doctest::Contains("grid.colls: unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("physics.beta = 2\n"), doctest::Contains("β ≥ 7/2 required"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("velocity.nodes = 15\n"), doctest::Contains("velocity.nodes"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("grid.cells = many\n"), doctest::Contains("grid.cells"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("grid.cells = 32\ngrid.cells = 64\n"), doctest::Contains("repeated key"),
                         ConfigError);
    CHECK_THROWS_AS(parse_config("muscl true\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("background.muscl = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("collision.mode = maxwell\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("kinetic.T = 0.33\n"), ConfigError);
}

TEST_CASE("echo and manifest round trips")
{
    const auto c = parse_config("grid.cells = 32\nphysics.theta_M = 0.7\n");
    const auto echo = echo_config(c);
    CHECK(echo_config(parse_config(echo)) == echo);

    nlohmann::json m;
    m["command"] = "sweep";
    m["config"]["grid.cells"] = "32";
    m["config"]["physics.theta_M"] = "0.7";
    CHECK(echo_config(parse_config(m.dump())) == echo);
    m["config"]["grid.cells"] = 32;
    CHECK_THROWS_AS(parse_config(m.dump()), ConfigError);
}

TEST_CASE("commands write artifacts and map failures to exit codes")
{
    const auto dir = scratch_dir("reject");
    auto c = parse_config("kinetic.epsilons = 0.1\n");
    CHECK(run_command("sweep", c, dir) == 2);
    const auto failure = nlohmann::json::parse(read_file(dir + "/failure.json"));
    CHECK(failure["exit_code"] == 2);
    CHECK(failure["failures"][0].get<std::string>().find("need ≥ 3 epsilons") != std::string::npos);
    CHECK(run_command("plot", c, dir) == 2);

    const auto ok = scratch_dir("euler");
    const auto e = parse_config("grid.cells = 16\nbackground.cells = 32\nkinetic.T = 0.05\n");
    CHECK(run_command("euler", e, ok) == 0);
    const auto manifest = nlohmann::json::parse(read_file(ok + "/manifest.json"));
    CHECK(manifest["command"] == "euler");
    const auto csv = read_file(ok + "/euler_trajectory.csv");
    CHECK(manifest["artifacts"]["euler_trajectory.csv"] == fnv1a_hex(csv));
    CHECK(read_file(ok + "/config.echo") == echo_config(e));
    // the manifest reproduces the configuration
    CHECK(echo_config(parse_config(read_file(ok + "/manifest.json"))) == echo_config(e));
}
