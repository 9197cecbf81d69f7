fn main() -> std::process::ExitCode {
    replibandit::cli::main_entry()
}
