use clap::Parser;

fn main() {
    let cli = srgan_cli::Cli::parse();
    match srgan_cli::run(cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", out.summary);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(srgan_cli::exit_code(&e));
        }
    }
}
