//! Rate-distortion selection of the embedding quantization step.

use crate::codec::entropy::{estimate_bits, fit_entropy_model, identity_layout};
use crate::codec::quant::{self, QuantizationSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RdPoint {
    pub step: f64,
    /// Estimated bits for the whole embedding block.
    pub bits: f64,
    /// Rate term: estimated bits per coded element.
    pub rate: f64,
    pub distortion: f64,
    pub objective: f64,
}

/// Geometric ladder of `n` steps from `lo` to `hi`.
pub fn candidate_steps(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Evaluates every candidate step on the row-major `columns`-wide embedding block and
/// returns the one minimizing `λ_q · rate + distortion`, where the rate is the entropy
/// estimate in bits per element. `distortion` receives the quantized block and the step.
/// Ties go to the larger step.
pub fn rd_select_step(
    emb: &[f64],
    columns: usize,
    candidates: &[f64],
    mut distortion: impl FnMut(&[f64], f64) -> Result<f64>,
    lambda_q: f64,
) -> Result<(QuantizationSpec, Vec<RdPoint>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate steps".into()));
    }
    if columns == 0 {
        return Err(Error::InvalidInput("embedding without columns".into()));
    }
    let mut sorted: Vec<f64> = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut points = Vec::with_capacity(sorted.len());
    let mut best: Option<usize> = None;
    for &step in &sorted {
        let st = step as f32 as f64;
        let spec = QuantizationSpec::uniform(st, columns)?;
        let symbols = quant::symbols(emb, &spec);
        let bits = if symbols.is_empty() {
            0.0
        } else {
            estimate_bits(&symbols, &fit_entropy_model(&symbols, identity_layout(columns))?)
        };
        let rate = if emb.is_empty() { 0.0 } else { bits / emb.len() as f64 };
        let d = distortion(&quant::dequantize(&symbols, &spec), st)?;
        let objective = lambda_q * rate + d;
        if best.is_none_or(|b: usize| objective <= points_objective(&points, b)) {
            best = Some(points.len());
        }
        points.push(RdPoint {
            step: st,
            bits,
            rate,
            distortion: d,
            objective,
        });
    }
    let chosen = points[best.unwrap()].step;
    Ok((QuantizationSpec::uniform(chosen, columns)?, points))
}

fn points_objective(points: &[RdPoint], i: usize) -> f64 {
    points[i].objective
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data() -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        (0..2000).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn mse(x: &[f64]) -> impl FnMut(&[f64], f64) -> Result<f64> + '_ {
        move |q, _| Ok(x.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
    }

    #[test]
    fn lambda_zero_picks_smallest_step() {
        let x = data();
        let c = candidate_steps(0.01, 0.32, 6);
        let (spec, _) = rd_select_step(&x, 10, &c, mse(&x), 0.0).unwrap();
        assert_eq!(spec.steps[0], 0.01f32 as f64);
    }

    #[test]
    fn zero_distortion_picks_largest_step() {
        let x = data();
        let c = candidate_steps(0.01, 0.32, 6);
        let (spec, _) = rd_select_step(&x, 10, &c, |_, _| Ok(0.0), 0.0025).unwrap();
        assert_eq!(spec.steps[0], 0.32f32 as f64);
    }

    #[test]
    fn matches_exhaustive_argmin() {
        let x = data();
        let c = candidate_steps(0.01, 0.32, 5);
        for lambda in [0.0005, 0.0025, 0.01, 0.05] {
            let (spec, points) = rd_select_step(&x, 10, &c, mse(&x), lambda).unwrap();
            let best = points.iter().map(|p| p.objective).fold(f64::INFINITY, f64::min);
            let winner = points.iter().filter(|p| p.objective == best).map(|p| p.step).fold(0.0, f64::max);
            assert_eq!(spec.steps[0], winner);
        }
        assert!(rd_select_step(&x, 10, &[], mse(&x), 0.0).is_err());
    }
}
