// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

use clap::Parser;
use tripex_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap treats --help/--version as "errors" that print to
            // stdout and should exit 0; real usage errors exit 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(run(&cli));
}
