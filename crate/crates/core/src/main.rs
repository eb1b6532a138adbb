fn main() -> std::process::ExitCode {
    matprobe::cli::main()
}
