//! Deterministic one-dimensional maximizers (grid scan followed by golden-section refinement).

use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximization of a unimodal `f` on `[lo, hi]` until the
/// bracket is narrower than `tol`.
pub fn golden_max<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (hi - lo).abs() > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Scans `points`, then refines around the best sample with golden-section
/// search between its neighbours. Returns the better of the grid optimum and
/// the refined one, so the result never falls below the best grid sample.
pub fn grid_then_golden<F>(mut f: F, points: &[f64], tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    assert!(!points.is_empty(), "grid must not be empty");
    let values = points.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    if points.len() < 2 {
        return Ok((points[0], values[0]));
    }
    let lo = points[best.saturating_sub(1)];
    let hi = points[(best + 1).min(points.len() - 1)];
    let (x, v) = golden_max(&mut f, lo, hi, tol)?;
    if v >= values[best] {
        Ok((x, v))
    } else {
        Ok((points[best], values[best]))
    }
}

/// `n` evenly spaced points on `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `n` log-spaced points on `[lo, hi]` inclusive (both positive).
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| Ok(-(x - 0.3) * (x - 0.3) + 2.0), -1.0, 1.0, 1e-9).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_result_never_below_grid_samples() {
        let pts = linspace(0.0, 6.0, 31);
        let f = |x: f64| Ok((x * 3.0).sin() + 0.1 * x);
        let (_, v) = grid_then_golden(f, &pts, 1e-8).unwrap();
        for &p in &pts {
            assert!(v >= f(p).unwrap() - 1e-15);
        }
    }
}
