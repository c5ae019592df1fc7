use super::ParamSet;
use crate::error::{Error, Result};

/// Central-difference gradient `(f(θ+ε) − f(θ−ε)) / 2ε` of a scalar function
/// of the parameter values.
///
/// `coords` restricts the check to a subset of flat coordinates (all of them
/// when `None`). Parameters are perturbed in place and restored bit-exactly.
pub fn finite_diff_grad<F>(params: &mut ParamSet, coords: Option<&[usize]>, eps: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&ParamSet) -> f64,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-6, 1e-4]"
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = params.values[i];
        params.values[i] = orig + eps;
        let plus = f(params);
        params.values[i] = orig - eps;
        let minus = f(params);
        params.values[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad objective"));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|)`, or `None` when both magnitudes are below `floor`
/// (nothing meaningful to compare).
pub fn relative_error(a: f64, b: f64, floor: f64) -> Option<f64> {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        None
    } else {
        Some((a - b).abs() / scale)
    }
}
