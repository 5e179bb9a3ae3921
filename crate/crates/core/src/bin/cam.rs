fn main() {
    std::process::exit(cam_core::io::cli::run(std::env::args_os()));
}
