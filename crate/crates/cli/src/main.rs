use std::io::{self, Write};

fn main() {
    let (mut stdin, mut stdout, mut stderr) = (io::stdin().lock(), io::stdout().lock(), io::stderr().lock());
    let mut io = agmp_cli::Io { stdin: &mut stdin, stdout: &mut stdout, stderr: &mut stderr };
    let code = agmp_cli::run(std::env::args_os(), &mut io);
    let _ = stdout.flush();
    std::process::exit(code);
}
