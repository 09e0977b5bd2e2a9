fn main() {
    std::process::exit(vince::cli::main());
}
