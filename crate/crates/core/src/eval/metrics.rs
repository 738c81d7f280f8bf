use crate::error::{bail, Result};

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        bail!(Shape, "sequences differ in length: {} vs {}", a.len(), b.len());
    }
    if a.len() < min {
        bail!(InvalidArgument, "need at least {min} samples, got {}", a.len());
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 1)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Pearson correlation coefficient, clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        bail!(InvalidArgument, "correlation is undefined for a constant sequence");
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
