//! Static per-channel discretized-Laplace entropy model with 16-bit frequency tables.
//!
//! Frequency tables are rebuilt by the decoder from the transmitted `(lo, hi, μ, b)`
//! parameters, so everything that feeds them uses only IEEE basic operations.

use crate::error::{Error, Result};

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
pub const MAX_ALPHABET: usize = 1 << 15;
/// Extra symbols on each side of the observed range.
pub const GUARD: i64 = 2;
pub const MIN_DIVERSITY: f64 = 1e-3;
/// Probability floor used when estimating bits.
pub const PMF_FLOOR: f64 = 1.0 / 4_294_967_296.0;

/// `exp(x)` from basic arithmetic only, so results are identical on every platform.
pub fn det_exp(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < -708.0 {
        return 0.0;
    }
    if x > 709.0 {
        return f64::INFINITY;
    }
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let k = (x * std::f64::consts::LOG2_E).round();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series on |r| ≤ 0.35, Horner form
    let mut sum = 1.0;
    for n in (1..=18).rev() {
        sum = 1.0 + sum * r / n as f64;
    }
    let k = k as i64;
    if k < -1022 {
        sum * f64::from_bits(((k + 600 + 1023) as u64) << 52) * f64::from_bits(((-600 + 1023) as u64) << 52)
    } else {
        sum * f64::from_bits(((k + 1023) as u64) << 52)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    /// Smallest symbol of the alphabet.
    pub lo: i64,
    /// Laplace location and diversity, `None` for tabulated channels.
    pub laplace: Option<(i64, f32)>,
    pub freq: Vec<u32>,
    /// Cumulative frequencies, `cum[0] = 0`, `cum[n] = FREQ_TOTAL`.
    pub cum: Vec<u32>,
}

impl ChannelModel {
    /// Discretized Laplace over `[lo, hi]`, renormalized to the alphabet.
    pub fn laplace(lo: i64, hi: i64, mu: i64, b: f32) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidInput(format!("empty alphabet [{lo}, {hi}]")));
        }
        let n = (hi - lo + 1) as usize;
        if n > MAX_ALPHABET {
            return Err(Error::AlphabetTooLarge(n));
        }
        if !(b as f64 > 0.0) || !b.is_finite() {
            return Err(Error::InvalidInput(format!("Laplace diversity must be positive, got {b}")));
        }
        let b = b as f64;
        let probs: Vec<f64> = (lo..=hi)
            .map(|k| {
                let d = (k - mu).abs() as f64;
                if d == 0.0 {
                    1.0 - det_exp(-0.5 / b)
                } else {
                    0.5 * (det_exp(-(d - 0.5) / b) - det_exp(-(d + 0.5) / b))
                }
            })
            .collect();
        let mut m = Self::from_probabilities(lo, &probs)?;
        m.laplace = Some((mu, b as f32));
        Ok(m)
    }

    /// Tabulated channel; `probs` need not be normalized.
    pub fn from_probabilities(lo: i64, probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty alphabet".into()));
        }
        if n > MAX_ALPHABET {
            return Err(Error::AlphabetTooLarge(n));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        let spare = (FREQ_TOTAL as usize - n) as f64;
        let mut freq: Vec<u32> = probs
            .iter()
            .map(|p| {
                let share = if total > 0.0 { p / total } else { 1.0 / n as f64 };
                1 + (share * spare).floor() as u32
            })
            .collect();
        let used: u32 = freq.iter().sum();
        let mut mode = 0;
        for i in 1..n {
            if probs[i] > probs[mode] {
                mode = i;
            }
        }
        freq[mode] += FREQ_TOTAL - used;
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0);
        let mut acc = 0;
        for f in &freq {
            acc += f;
            cum.push(acc);
        }
        Ok(Self {
            lo,
            laplace: None,
            freq,
            cum,
        })
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.freq.len() as i64 - 1
    }

    pub fn contains(&self, s: i64) -> bool {
        s >= self.lo && s <= self.hi()
    }

    /// Probability of every alphabet symbol as used by the coder.
    pub fn pmf(&self) -> Vec<f64> {
        self.freq.iter().map(|&f| f as f64 / FREQ_TOTAL as f64).collect()
    }

    pub fn probability(&self, s: i64) -> f64 {
        if self.contains(s) {
            self.freq[(s - self.lo) as usize] as f64 / FREQ_TOTAL as f64
        } else {
            0.0
        }
    }
}

/// Channel models plus the row layout mapping element `i` to channel `layout[i % layout.len()]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyModel {
    pub channels: Vec<ChannelModel>,
    pub layout: Vec<usize>,
}

impl EntropyModel {
    pub fn new(channels: Vec<ChannelModel>, layout: Vec<usize>) -> Result<Self> {
        if layout.is_empty() || layout.iter().any(|&c| c >= channels.len()) {
            return Err(Error::InvalidInput("entropy layout refers to missing channels".into()));
        }
        Ok(Self { channels, layout })
    }

    /// Single-channel model.
    pub fn single(channel: ChannelModel) -> Self {
        Self {
            channels: vec![channel],
            layout: vec![0],
        }
    }

    #[inline]
    pub fn channel_index(&self, i: usize) -> usize {
        self.layout[i % self.layout.len()]
    }

    #[inline]
    pub fn channel_for(&self, i: usize) -> &ChannelModel {
        &self.channels[self.channel_index(i)]
    }
}

/// Identity layout: one channel per column of a `columns`-wide row.
pub fn identity_layout(columns: usize) -> Vec<usize> {
    (0..columns).collect()
}

/// Fits one Laplace channel per distinct layout entry: `μ` is the lower median, `b` the mean
/// absolute deviation from it (at least [`MIN_DIVERSITY`]), and the alphabet spans the
/// observed range plus [`GUARD`] on each side. Channels without symbols get a narrow default.
pub fn fit_entropy_model(symbols: &[i64], layout: Vec<usize>) -> Result<EntropyModel> {
    let n_channels = layout.iter().copied().max().map_or(0, |m| m + 1);
    if n_channels == 0 {
        return Err(Error::InvalidInput("empty entropy layout".into()));
    }
    let mut per: Vec<Vec<i64>> = vec![Vec::new(); n_channels];
    for (i, &s) in symbols.iter().enumerate() {
        per[layout[i % layout.len()]].push(s);
    }
    let channels = per
        .into_iter()
        .map(|mut v| {
            if v.is_empty() {
                return ChannelModel::laplace(-GUARD, GUARD, 0, MIN_DIVERSITY as f32);
            }
            v.sort_unstable();
            let mu = v[(v.len() - 1) / 2];
            let mad = v.iter().map(|&s| (s - mu).abs() as f64).sum::<f64>() / v.len() as f64;
            let b = (mad.max(MIN_DIVERSITY) as f32).max(MIN_DIVERSITY as f32);
            let lo = v[0] - GUARD;
            let hi = v[v.len() - 1] + GUARD;
            if lo < i32::MIN as i64 || hi > i32::MAX as i64 {
                return Err(Error::AlphabetTooLarge(usize::MAX));
            }
            ChannelModel::laplace(lo, hi, mu, b)
        })
        .collect::<Result<Vec<_>>>()?;
    EntropyModel::new(channels, layout)
}

/// `Σ −log2 p(symbol)` under the coder's quantized PMF, floored at `2⁻³²`.
pub fn estimate_bits(symbols: &[i64], model: &EntropyModel) -> f64 {
    symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| -model.channel_for(i).probability(s).max(PMF_FLOOR).log2())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_exp_matches_std() {
        let mut x = -700.0;
        while x < 700.0 {
            let a = det_exp(x);
            let b = x.exp();
            assert!(((a - b) / b).abs() < 4e-15, "{x}: {a} vs {b}");
            x += 0.377;
        }
        assert_eq!(det_exp(0.0), 1.0);
        assert_eq!(det_exp(-1e6), 0.0);
        assert!(det_exp(-707.5) > 0.0);
    }

    #[test]
    fn frequencies_sum_to_total() {
        let m = ChannelModel::laplace(-40, 37, 3, 2.5).unwrap();
        assert_eq!(*m.cum.last().unwrap(), FREQ_TOTAL);
        assert!(m.freq.iter().all(|&f| f >= 1));
        assert!((m.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(ChannelModel::laplace(0, MAX_ALPHABET as i64, 0, 1.0).is_err());
    }

    #[test]
    fn constant_symbols_are_nearly_free() {
        let s = vec![7i64; 1000];
        let m = fit_entropy_model(&s, vec![0]).unwrap();
        assert_eq!(m.channels[0].laplace.unwrap().0, 7);
        assert!(estimate_bits(&s, &m) / 1000.0 <= 0.1);
    }

    #[test]
    fn symmetric_symbols_center_at_zero() {
        let s: Vec<i64> = (0..101).map(|i| if i == 50 { 0 } else if i % 2 == 0 { 1 } else { -1 }).collect();
        let m = fit_entropy_model(&s, vec![0]).unwrap();
        assert_eq!(m.channels[0].laplace.unwrap().0, 0);
    }

    #[test]
    fn uniform_two_symbols_cost_one_bit_each() {
        let m = EntropyModel::single(ChannelModel::from_probabilities(0, &[0.5, 0.5]).unwrap());
        let s: Vec<i64> = (0..100).map(|i| i % 2).collect();
        assert_eq!(estimate_bits(&s, &m), 100.0);
        let certain = EntropyModel::single(ChannelModel::from_probabilities(4, &[1.0]).unwrap());
        assert_eq!(estimate_bits(&[4, 4, 4], &certain), 0.0);
    }

    #[test]
    fn layout_routes_symbols() {
        let s = vec![0, 100, 0, 100, 1, 101];
        let m = fit_entropy_model(&s, vec![0, 1]).unwrap();
        assert_eq!(m.channels[0].laplace.unwrap().0, 0);
        assert_eq!(m.channels[1].laplace.unwrap().0, 100);
        assert_eq!(m.channel_for(3).lo, 98);
    }
}
