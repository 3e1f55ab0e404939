fn main() {
    std::process::exit(phasenet::cli::main_entry());
}
