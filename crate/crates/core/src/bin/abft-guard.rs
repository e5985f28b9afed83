fn main() -> std::process::ExitCode {
    abft_guard::cli::main()
}
