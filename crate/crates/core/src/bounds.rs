//! Numerical verification of the surrogate objective's log bound.
//!
//! The stage loss replaces each intractable term `-log(a + b)` (with `b`
//! the retained-prior probability and `a` the compensation factor) by the
//! tractable `(1-a)(-log b) + (1-a)log(1-a) + log(1+a)`. Two facts make
//! that substitution sound, and both are checked here on a dense grid
//! instead of symbolically:
//!
//! 1. the surrogate never undershoots the true term on the domain
//!    `0 <= a <= 1-b`, `0 < b <= 1`, with equality exactly on `a = 0`;
//! 2. once `b >= 1/2`, the overshoot per term is at most `log(3/2)`,
//!    attained at `(a, b) = (1/2, 1/2)`, so a `k`-stage objective is within
//!    `log(3/2) * (k-1)` of its surrogate.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("(a={a}, b={b}) outside the domain 0 <= a <= 1-b, 0 < b <= 1")]
    Domain { a: f64, b: f64 },
    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("serializing report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Surrogate-minus-target gap for one transition term.
///
/// Non-negative on the whole domain, zero exactly on the `a = 0` line.
pub fn upper_bound_gap<S: Scalar>(a: S, b: S) -> Result<S, BoundsError> {
    let (zero, one) = (S::zero(), S::one());
    if !(b > zero && b <= one && a >= zero && a <= one - b) {
        return Err(BoundsError::Domain {
            a: a.to_f64().unwrap_or(f64::NAN),
            b: b.to_f64().unwrap_or(f64::NAN),
        });
    }
    // (1-a)(-log b) + (1-a)log(1-a) + log(1+a) - (-log(a+b))
    let keep = one - a;
    Ok(keep * (-b.ln()) + keep * keep.ln() + (one + a).ln() + (a + b).ln())
}

/// Gap bound for a `k`-stage objective: `log(3/2) * (k-1)`.
pub fn stage_gap_bound(k: usize) -> f64 {
    assert!(k >= 1);
    1.5f64.ln() * (k - 1) as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct GridExtremum {
    pub a: f64,
    pub b: f64,
    pub gap: f64,
}

/// Grid scan over the full domain plus the `b >= 1/2` restriction.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub resolution: usize,
    pub min: GridExtremum,
    pub max: GridExtremum,
    /// Largest |gap| observed on the a = 0 line (should be ~0).
    pub zero_line_max_abs: f64,
    /// Maximum over the half-plane b >= 1/2 (should be log(3/2)).
    pub restricted_max: GridExtremum,
    /// log(3/2) * (k-1) for k = 2..=max_stages.
    pub stage_bounds: Vec<f64>,
    pub non_negative: bool,
    pub zero_line_exact: bool,
    pub restricted_max_attained: bool,
    pub pass: bool,
}

const NEG_TOL: f64 = 1e-12;
const ATTAIN_TOL: f64 = 1e-9;

/// Scan `resolution + 1` points along each axis: `b = i/resolution` for
/// `i >= 1` and, per row, `a = (1-b) * j/resolution`.
pub fn verify_bounds(resolution: usize, max_stages: usize) -> Result<BoundReport, BoundsError> {
    if resolution < 2 {
        return Err(BoundsError::Resolution(resolution));
    }
    let n = resolution as f64;
    let mut min = GridExtremum {
        a: 0.0,
        b: 1.0,
        gap: f64::INFINITY,
    };
    let mut max = GridExtremum {
        a: 0.0,
        b: 1.0,
        gap: f64::NEG_INFINITY,
    };
    let mut restricted_max = GridExtremum {
        a: 0.0,
        b: 1.0,
        gap: f64::NEG_INFINITY,
    };
    let mut zero_line_max_abs = 0.0f64;

    for i in 1..=resolution {
        let b = i as f64 / n;
        let a_span = 1.0 - b;
        for j in 0..=resolution {
            let a = a_span * (j as f64 / n);
            let gap = upper_bound_gap(a, b)?;
            if gap < min.gap {
                min = GridExtremum { a, b, gap };
            }
            if gap > max.gap {
                max = GridExtremum { a, b, gap };
            }
            if b >= 0.5 && gap > restricted_max.gap {
                restricted_max = GridExtremum { a, b, gap };
            }
            if j == 0 {
                zero_line_max_abs = zero_line_max_abs.max(gap.abs());
            }
        }
    }

    let target = 1.5f64.ln();
    let spacing = 1.0 / n;
    let non_negative = min.gap >= -NEG_TOL;
    let zero_line_exact = zero_line_max_abs <= NEG_TOL;
    let restricted_max_attained = (restricted_max.gap - target).abs() <= ATTAIN_TOL
        && (restricted_max.a - 0.5).abs() <= spacing
        && (restricted_max.b - 0.5).abs() <= spacing;
    let stage_bounds = (2..=max_stages.max(2)).map(stage_gap_bound).collect();

    Ok(BoundReport {
        resolution,
        min,
        max,
        zero_line_max_abs,
        restricted_max,
        stage_bounds,
        non_negative,
        zero_line_exact,
        restricted_max_attained,
        pass: non_negative && zero_line_exact && restricted_max_attained,
    })
}

/// Write the full `(a, b, gap)` grid as CSV.
pub fn write_gap_grid_csv(resolution: usize, path: &Path) -> Result<(), BoundsError> {
    if resolution < 2 {
        return Err(BoundsError::Resolution(resolution));
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "a,b,gap")?;
    let n = resolution as f64;
    for i in 1..=resolution {
        let b = i as f64 / n;
        for j in 0..=resolution {
            let a = (1.0 - b) * (j as f64 / n);
            let gap: f64 = upper_bound_gap(a, b)?;
            writeln!(w, "{a},{b},{gap}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the JSON summary of a report.
pub fn write_summary_json(report: &BoundReport, path: &Path) -> Result<(), BoundsError> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json)?;
    Ok(())
}
