//! Optional per-layer manifold assertions.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::lorentz::{manifold_violation, Curvature};

/// Tolerance used when manifold assertions are enabled.
pub const DEBUG_TOL: f64 = 1e-7;

/// Environment variable that switches assertions on.
pub const DEBUG_ENV: &str = "HELM_DEBUG_MANIFOLD";

static ENABLED: AtomicBool = AtomicBool::new(false);

pub fn set_manifold_checks(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

pub fn manifold_checks_enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

/// Enables assertions when `HELM_DEBUG_MANIFOLD=1`.
pub fn init_from_env() {
    if std::env::var(DEBUG_ENV).is_ok_and(|v| v == "1") {
        set_manifold_checks(true);
    }
}

/// Largest relative violation over the rows of `t`.
pub fn max_row_violation(t: &Tensor, k: Curvature) -> f64 {
    (0..t.rows())
        .map(|r| manifold_violation(t.row_slice(r), k))
        .fold(0.0, f64::max)
}

/// When assertions are enabled, fails if any row of `t` is off `L^K`.
pub fn check(site: &str, t: &Tensor, k: Curvature) -> Result<()> {
    if !manifold_checks_enabled() {
        return Ok(());
    }
    let violation = max_row_violation(t, k);
    if violation > DEBUG_TOL {
        return Err(Error::ManifoldViolation {
            site: site.to_string(),
            violation,
            tol: DEBUG_TOL,
        });
    }
    Ok(())
}
