use clap::Parser;

fn main() {
    let cli = bimangen_cli::Cli::parse();
    let result = bimangen_cli::run(&cli, &mut std::io::stdout());
    if let Err(e) = &result {
        eprintln!("bimangen: {e}");
    }
    std::process::exit(bimangen_cli::exit_code(&result));
}
