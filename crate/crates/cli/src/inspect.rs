//! count-params and gradcheck.

use binorm::gradcheck::{run_all, TOLERANCE};
use binorm::models::count_params;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::setup::resolve_config;

pub fn count(config: &str, json: bool) -> CliResult<()> {
    let run = resolve_config(config)?;
    let counts = count_params(&run.model)?;
    if json {
        println!("{}", serde_json::to_string(&counts).expect("counts serialize"));
    } else {
        let width = counts.per_layer.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        for (name, n) in &counts.per_layer {
            println!("{name:<width$}  {n:>12}");
        }
        println!("{:<width$}  {:>12}", "total", counts.total);
    }
    Ok(())
}

pub fn gradcheck(seed: u64, json: bool) -> CliResult<()> {
    let results = run_all(seed)?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if json {
        println!("{}", json!({ "seed": seed, "tolerance": TOLERANCE, "checks": results, "passed": failed.is_empty() }));
    } else {
        for r in &results {
            println!("{:<26} {:.3e}  {}", r.name, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Core(binorm::Error::Numerical(format!("gradient check failed for {}", failed.join(", ")))))
    }
}
