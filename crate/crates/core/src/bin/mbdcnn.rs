fn main() {
    std::process::exit(mbdcnn::cli::run(std::env::args_os()));
}
