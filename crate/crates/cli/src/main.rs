fn main() {
    std::process::exit(tgraph_cli::run(std::env::args_os()));
}
