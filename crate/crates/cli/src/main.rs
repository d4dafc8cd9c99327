use std::io;

fn main() {
    let registry = annodb_cli::ops::builtin();
    let code = annodb_cli::run(
        &registry,
        std::env::args_os().skip(1),
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    );
    std::process::exit(code);
}
