//! Acceptance gate. The checks live in `tests/acceptance.rs`; this crate
//! only supplies the report type they share.

use std::fmt;
use std::time::Duration;

/// Result of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub number: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {}: {} {} [{:.2} s] {}",
            self.number,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}
