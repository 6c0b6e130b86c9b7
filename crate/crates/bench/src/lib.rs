//! Shared fixtures for the criterion benchmarks.

use lipbound_core::{ChartDomain, LipschitzPatch, Result};

/// The curved corpus patch used by every benchmark.
pub fn sinusoid() -> Result<LipschitzPatch> {
    LipschitzPatch::standard(
        "sinusoid",
        "0.25*sin(3*x1)*cos(2*x2)",
        ChartDomain::rect((-1.0, 1.0), (-1.0, 1.0)),
        2f64.sqrt(),
        4.0,
    )
}

/// The ridged corpus patch.
pub fn pyramid() -> Result<LipschitzPatch> {
    LipschitzPatch::standard(
        "pyramid",
        "max(abs(x1),abs(x2))",
        ChartDomain::rect((-1.0, 1.0), (-1.0, 1.0)),
        2f64.sqrt(),
        4.0,
    )
}
