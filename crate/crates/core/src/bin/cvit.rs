fn main() {
    std::process::exit(changevit::cli::run(std::env::args_os()));
}
