//! Builtin runner executable. Usage: `castorlite-naive-runner --module <naive|stub>`.

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let module = match args.as_slice() {
        [] => "naive",
        [flag, module] if flag == "--module" => module.as_str(),
        _ => {
            eprintln!("usage: castorlite-naive-runner [--module <naive|stub>]");
            std::process::exit(2);
        }
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let code = castorlite::runner::run(module, stdin.lock(), stdout.lock());
    std::process::exit(code);
}
