//! Closed-form bounds used as diagnostics and test envelopes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{arg, Result};

pub use crate::noise::delta_param;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub inputs: BTreeMap<String, f64>,
    pub value: f64,
}

impl BoundReport {
    fn new(name: &str, inputs: &[(&str, f64)], value: f64) -> Self {
        Self {
            name: name.to_string(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            value,
        }
    }
}

/// `2√(d(σ2² − σ1²))`: the largest amount by which the smoothed distance can
/// grow when σ decreases from `sigma2` to `sigma1`.
pub fn stability_bound(sigma1: f64, sigma2: f64, d: usize) -> Result<f64> {
    if !(sigma1 >= 0.0) || !sigma2.is_finite() {
        return arg(format!("need finite 0 <= sigma1 < sigma2, got ({sigma1}, {sigma2})"));
    }
    if sigma1 >= sigma2 {
        return arg(format!("sigma1 = {sigma1} must be below sigma2 = {sigma2}"));
    }
    if d == 0 {
        return arg("dimension must be at least 1");
    }
    Ok(2.0 * (d as f64 * (sigma2 * sigma2 - sigma1 * sigma1)).sqrt())
}

/// Expected one-sample rate bound
/// `c1^d σ √(2d) (1 + K/σ)^{d/2+1} e^{3d/16} / √n`.
pub fn rate_bound(sigma: f64, d: usize, k: f64, c1: f64, n: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return arg(format!("rate bound needs sigma > 0, got {sigma}"));
    }
    if n == 0 || d == 0 {
        return arg("rate bound needs n >= 1 and d >= 1");
    }
    if !(c1 >= 1.0) {
        return arg(format!("c1 must be at least 1, got {c1}"));
    }
    if !(k >= 0.0) {
        return arg(format!("K must be non-negative, got {k}"));
    }
    let df = d as f64;
    Ok(c1.powf(df)
        * sigma
        * (2.0 * df).sqrt()
        * (1.0 + k / sigma).powf(df / 2.0 + 1.0)
        * (3.0 * df / 16.0).exp()
        / (n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationBound {
    /// `2 exp(−2t²n/diam²)`, in `(0, 2]`.
    pub raw: f64,
    /// `min(raw, 1)`, a valid probability.
    pub clamped: f64,
}

/// Two-sided deviation probability bound for bounded-support sources.
pub fn concentration_bound(diam: f64, n: usize, t: f64) -> Result<ConcentrationBound> {
    if !(diam > 0.0) || n == 0 || !(t > 0.0) {
        return arg(format!("need diam > 0, n >= 1, t > 0; got ({diam}, {n}, {t})"));
    }
    let raw = 2.0 * (-2.0 * t * t * n as f64 / (diam * diam)).exp();
    Ok(ConcentrationBound {
        raw,
        clamped: raw.min(1.0),
    })
}

/// Deviation `t` at which the raw concentration bound equals `level`.
pub fn concentration_threshold(diam: f64, n: usize, level: f64) -> Result<f64> {
    if !(diam > 0.0) || n == 0 || !(level > 0.0 && level < 2.0) {
        return arg("need diam > 0, n >= 1 and level in (0, 2)");
    }
    Ok(diam * ((2.0 / level).ln() / (2.0 * n as f64)).sqrt())
}

/// Inputs for [`bound_table`]; absent entries skip the bounds that need them.
#[derive(Debug, Clone, Default)]
pub struct BoundInputs {
    pub sigma: f64,
    pub d: usize,
    pub k: f64,
    pub n: usize,
    pub c1: f64,
    pub sigma1: Option<f64>,
    pub diam: Option<f64>,
    pub t: Option<f64>,
}

pub fn bound_table(inp: &BoundInputs) -> Result<Vec<BoundReport>> {
    let mut rows = Vec::new();
    if inp.sigma > 0.0 {
        rows.push(BoundReport::new(
            "delta_param",
            &[("sigma", inp.sigma)],
            delta_param(inp.sigma),
        ));
        rows.push(BoundReport::new(
            "rate_bound",
            &[
                ("sigma", inp.sigma),
                ("d", inp.d as f64),
                ("K", inp.k),
                ("c1", inp.c1),
                ("n", inp.n as f64),
            ],
            rate_bound(inp.sigma, inp.d, inp.k, inp.c1, inp.n)?,
        ));
    }
    let sigma1 = inp.sigma1.unwrap_or(0.0);
    if sigma1 < inp.sigma {
        rows.push(BoundReport::new(
            "stability_bound",
            &[("sigma1", sigma1), ("sigma2", inp.sigma), ("d", inp.d as f64)],
            stability_bound(sigma1, inp.sigma, inp.d)?,
        ));
    }
    if let (Some(diam), Some(t)) = (inp.diam, inp.t) {
        let b = concentration_bound(diam, inp.n, t)?;
        rows.push(BoundReport::new(
            "concentration_bound",
            &[("diam", diam), ("n", inp.n as f64), ("t", t)],
            b.clamped,
        ));
        rows.push(BoundReport::new(
            "concentration_bound_raw",
            &[("diam", diam), ("n", inp.n as f64), ("t", t)],
            b.raw,
        ));
    }
    Ok(rows)
}
