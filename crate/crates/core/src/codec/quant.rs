//! Per-channel uniform scalar quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One step per channel. Values are laid out row-major, so element `i` belongs to channel
/// `i % steps.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationSpec {
    pub steps: Vec<f64>,
}

impl QuantizationSpec {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        let spec = Self { steps };
        spec.check()?;
        Ok(spec)
    }

    pub fn uniform(step: f64, channels: usize) -> Result<Self> {
        Self::new(vec![step; channels])
    }

    pub fn channels(&self) -> usize {
        self.steps.len()
    }

    pub fn step_for(&self, index: usize) -> f64 {
        self.steps[index % self.steps.len()]
    }

    pub fn check(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidInput("quantization spec without channels".into()));
        }
        if let Some(s) = self.steps.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("quantization step must be positive, got {s}")));
        }
        Ok(())
    }
}

/// Integer symbol of one value (round half away from zero).
#[inline]
pub fn to_symbol(x: f64, step: f64) -> i64 {
    (x / step).round() as i64
}

#[inline]
pub fn from_symbol(q: i64, step: f64) -> f64 {
    q as f64 * step
}

pub fn quantize(x: &[f64], spec: &QuantizationSpec) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let st = spec.step_for(i);
            from_symbol(to_symbol(v, st), st)
        })
        .collect()
}

pub fn symbols(x: &[f64], spec: &QuantizationSpec) -> Vec<i64> {
    x.iter().enumerate().map(|(i, &v)| to_symbol(v, spec.step_for(i))).collect()
}

pub fn dequantize(q: &[i64], spec: &QuantizationSpec) -> Vec<f64> {
    q.iter().enumerate().map(|(i, &s)| from_symbol(s, spec.step_for(i))).collect()
}

/// Training-time surrogate for rounding: adds `U(-st/2, st/2)` noise per element.
pub fn inject_noise(x: &[f64], spec: &QuantizationSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let st = spec.step_for(i);
            v + (rng.random::<f64>() - 0.5) * st
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let spec = QuantizationSpec::uniform(0.5, 1).unwrap();
        assert_eq!(quantize(&[1.23], &spec), vec![1.0]);
        assert_eq!(quantize(&[1.5, -2.0], &spec), vec![1.5, -2.0]);
        assert!(QuantizationSpec::new(vec![0.1, 0.0]).is_err());
        assert!(QuantizationSpec::new(vec![]).is_err());
    }

    #[test]
    fn per_channel_steps() {
        let spec = QuantizationSpec::new(vec![1.0, 0.1]).unwrap();
        let q = quantize(&[0.26, 0.26, 1.6, 1.64], &spec);
        assert_eq!(q[0], 0.0);
        assert!((q[1] - 0.3).abs() < 1e-12);
        assert_eq!(q[2], 2.0);
        assert!((q[3] - 1.6).abs() < 1e-12);
        assert_eq!(dequantize(&symbols(&[0.26, 0.26], &spec), &spec), quantize(&[0.26, 0.26], &spec));
    }

    #[test]
    fn tiny_step_noise_is_negligible() {
        let spec = QuantizationSpec::uniform(1e-12, 1).unwrap();
        let x = [0.3, -4.0, 17.5];
        let y = inject_noise(&x, &spec, 4);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(inject_noise(&x, &spec, 4), y);
    }
}
