use std::process::ExitCode;

use clap::Args;

use rotquant::selftest::run_selftest;

#[derive(Args)]
pub struct SelftestArgs {
    /// Force the named check to fail (reporting-path test hook).
    #[arg(long, hide = true)]
    pub inject_failure: Option<String>,
}

pub fn run(args: SelftestArgs) -> ExitCode {
    let results = run_selftest(args.inject_failure.as_deref());
    let mut failed = Vec::new();
    for r in &results {
        if r.passed {
            println!("ok   {:<32} {}", r.name, r.detail);
        } else {
            println!("FAIL {:<32} {}", r.name, r.detail);
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("selftest: {} checks passed", results.len());
        ExitCode::SUCCESS
    } else {
        eprintln!("selftest failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
