fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(goembed_cli::run(&args));
}
