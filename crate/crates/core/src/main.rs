fn main() {
    std::process::exit(aoi_cache::cli::run(std::env::args_os()));
}
