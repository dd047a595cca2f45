fn main() {
    let code = match std::panic::catch_unwind(|| uvavatar_cli::main_with(std::env::args_os())) {
        Ok(code) => code,
        // The panic message has already been printed by the default hook.
        Err(_) => uvavatar_cli::EXIT_INTERNAL,
    };
    std::process::exit(code);
}
