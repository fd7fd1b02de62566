#include "ivpb/config.hpp"
#include "ivpb/io.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Ionic Vlasov-Poisson-Boltzmann: Euler background, Hilbert cascade, kinetic runs, sweeps"};
    std::string command, config_path, out_dir;
    app.add_option("command", command, "euler | cascade | kinetic | sweep | verify")
        ->required()
        ->check(CLI::IsMember({"euler", "cascade", "kinetic", "sweep", "verify"}));
    app.add_option("--config", config_path, "key = value file or a run manifest (defaults when omitted)");
    app.add_option("--out", out_dir, "output directory (overrides output.dir)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    ivpb::RunConfig cfg;
    try {
        const std::string text = config_path.empty() ? std::string() : ivpb::read_file(config_path);
        cfg = ivpb::parse_config(text);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    if (out_dir.empty())
        out_dir = cfg.output_dir;
    return ivpb::run_command(command, cfg, out_dir);
}
