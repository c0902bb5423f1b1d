use clap::Parser;

fn main() {
    let cli = femseg_cli::Cli::parse();
    match femseg_cli::run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("femseg: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
