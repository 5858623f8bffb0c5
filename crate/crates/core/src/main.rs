use std::io;

fn main() {
    env_logger::init();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let code = gecond::cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::process::exit(code);
}
