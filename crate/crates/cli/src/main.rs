fn main() {
    std::process::exit(geoharvest::main_with(std::env::args_os()));
}
