fn main() {
    std::process::exit(vbscan_core::cli::run(std::env::args_os()));
}
