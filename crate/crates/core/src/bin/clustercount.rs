fn main() {
    std::process::exit(clustercount::cli::run(std::env::args_os()));
}
