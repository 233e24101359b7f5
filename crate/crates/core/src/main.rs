fn main() {
    std::process::exit(scenefit::cli::run(std::env::args_os()));
}
