use std::io;

fn main() {
    let code = interlock_range::cli::dispatch(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
