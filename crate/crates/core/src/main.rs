use std::io::{stderr, stdout};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNLOCK_LOG", "error")).init();
    let code = unlock::cli::cli_main(std::env::args_os(), &mut stdout().lock(), &mut stderr().lock());
    std::process::exit(code);
}
