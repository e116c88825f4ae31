fn main() {
    std::process::exit(voxdrill::cli::run(std::env::args_os()));
}
