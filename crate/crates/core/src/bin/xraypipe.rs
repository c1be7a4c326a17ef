fn main() -> std::process::ExitCode {
    xraypipe::cli::main_entry()
}
