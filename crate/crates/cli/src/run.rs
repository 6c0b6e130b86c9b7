//! Executes the configured (check, patch) pairs.

use rayon::prelude::*;

use lipbound_core::{run_check, LipschitzPatch, SuiteReport};

use crate::config::{CheckSpec, ConfigError, RunConfig};

/// Checks that do not depend on a patch and run once.
pub const PATCH_FREE: [&str; 1] = ["appendix-c"];

/// The ordered work list: checks in configuration order, patches within each.
pub fn plan<'a>(
    checks: &'a [CheckSpec],
    patches: &'a [LipschitzPatch],
) -> Vec<(&'a CheckSpec, Option<&'a LipschitzPatch>)> {
    let mut out = Vec::new();
    for c in checks {
        if PATCH_FREE.contains(&c.name.as_str()) {
            out.push((c, None));
        } else {
            out.extend(patches.iter().map(|p| (c, Some(p))));
        }
    }
    out
}

/// Runs every pair in parallel; the result order follows [`plan`].
pub fn run(config: &RunConfig) -> Result<Vec<SuiteReport>, ConfigError> {
    let patches = config.build_patches()?;
    let work = plan(&config.checks, &patches);
    Ok(work
        .par_iter()
        .map(|(check, patch)| {
            log::info!("running {} on {}", check.name, patch.map_or("all", |p| p.name()));
            run_check(&check.name, *patch, &config.settings, check.tolerance)
        })
        .collect())
}

pub fn all_pass(reports: &[SuiteReport]) -> bool {
    reports.iter().all(SuiteReport::pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn patch_free_checks_run_once() {
        let c = parse_config(r#"{"patches": ["flat", "tilted"], "checks": ["appendix-c", "gram-det"], "trials": 20}"#)
            .unwrap();
        let reports = run(&c).unwrap();
        let names: Vec<_> = reports.iter().map(|r| (r.check.as_str(), r.patch.as_str())).collect();
        assert_eq!(
            names,
            [("appendix-c", "all"), ("gram-det", "flat"), ("gram-det", "tilted")]
        );
        assert!(all_pass(&reports));
    }
}
