fn main() {
    std::process::exit(vidgeo::cli::run_from(std::env::args_os()));
}
