fn main() {
    std::process::exit(vslocreg::cli::main());
}
