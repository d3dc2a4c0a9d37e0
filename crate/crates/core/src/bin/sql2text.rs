fn main() -> std::process::ExitCode {
    sql2text::cli::main()
}
