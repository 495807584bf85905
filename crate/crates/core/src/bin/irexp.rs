fn main() {
    std::process::exit(irexp::cli::main());
}
