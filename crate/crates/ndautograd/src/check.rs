//! Central finite-difference oracle for validating analytic gradients.

/// Tolerances for [`compare`]. An entry passes when its absolute error is
/// below `abs_tol` or its relative error is below `rel_tol`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-3,
            rel_tol: 1e-4,
            abs_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every requested coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], indices: &[usize], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares analytic against numeric gradients entry by entry.
pub fn compare(indices: &[usize], analytic: &[f64], numeric: &[f64], tol: Tolerance) -> Report {
    let mut report = Report::default();
    for ((&index, &a), &n) in indices.iter().zip(analytic).zip(numeric) {
        let abs = (a - n).abs();
        let rel = relative_error(a, n);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(abs);
        if abs >= tol.abs_tol {
            report.max_rel_err = report.max_rel_err.max(rel);
        }
        if !(a.is_finite() && n.is_finite()) || (abs >= tol.abs_tol && rel >= tol.rel_tol) {
            report.mismatches.push(Mismatch {
                index,
                analytic: a,
                numeric: n,
            });
        }
    }
    report
}
