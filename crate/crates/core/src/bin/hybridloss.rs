use clap::Parser;
use hybridloss::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    let code = cli::run(cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
