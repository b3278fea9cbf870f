//! Integer range coder over 16-bit frequency tables.
//!
//! The coder keeps a 56-bit `low` and renormalizes one byte at a time whenever the range
//! drops below 2⁴⁸. Carries propagate through a cached byte and a run of pending `0xFF`
//! bytes. The flush writes the shortest prefix that still identifies the final interval;
//! the decoder reads zeros past the end of the stream.

use crate::codec::entropy::{EntropyModel, FREQ_BITS, FREQ_TOTAL};
use crate::error::{Error, Result};

const LOW_BITS: u32 = 56;
const TOP: u64 = 1 << LOW_BITS;
const RENORM: u64 = 1 << 48;
const BYTE_SHIFT: u32 = LOW_BITS - 8;

struct Encoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: TOP - 1,
            cache: 0,
            pending: 0,
            started: false,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if self.low < (0xFF << BYTE_SHIFT) || self.low >= TOP {
            let carry = (self.low >> LOW_BITS) as u8;
            if self.started {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xFF_u8.wrapping_add(carry));
            }
            self.pending = 0;
            self.started = true;
            self.cache = ((self.low >> BYTE_SHIFT) & 0xFF) as u8;
        } else {
            self.pending += 1;
        }
        self.low = (self.low & (RENORM - 1)) << 8;
    }

    fn encode(&mut self, start: u32, size: u32) {
        let r = self.range >> FREQ_BITS;
        self.low += r * start as u64;
        self.range = if start + size == FREQ_TOTAL {
            self.range - r * start as u64
        } else {
            r * size as u64
        };
        while self.range < RENORM {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn finish(mut self) -> Vec<u8> {
        // pick the value in [low, low + range) with the most trailing zero bytes
        let end = self.low + self.range;
        let mut value = self.low;
        for bytes in (0..=LOW_BITS / 8).rev() {
            let shift = 8 * bytes;
            let mask = if shift >= 64 { u64::MAX } else { (1u64 << shift) - 1 };
            let v = (self.low + mask) & !mask;
            if v >= self.low && v < end {
                value = v;
                break;
            }
        }
        self.low = value;
        for _ in 0..=LOW_BITS / 8 {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

/// Arithmetic-codes `symbols`; element `i` uses `model.channel_for(i)`.
pub fn ac_encode(symbols: &[i64], model: &EntropyModel) -> Result<Vec<u8>> {
    let mut enc = Encoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        let ch = model.channel_for(i);
        if !ch.contains(s) {
            return Err(Error::SymbolOutOfAlphabet {
                channel: model.channel_index(i),
                symbol: s,
                lo: ch.lo,
                hi: ch.hi(),
            });
        }
        let k = (s - ch.lo) as usize;
        enc.encode(ch.cum[k], ch.freq[k]);
    }
    Ok(enc.finish())
}

/// Inverse of [`ac_encode`] for exactly `count` symbols.
///
/// Stream length is not self-delimiting; containers carry a length and checksum.
pub fn ac_decode(bytes: &[u8], model: &EntropyModel, count: usize) -> Result<Vec<i64>> {
    let mut pos = 0usize;
    let next = |pos: &mut usize| -> u64 {
        let b = bytes.get(*pos).copied().unwrap_or(0);
        *pos += 1;
        b as u64
    };
    let mut code = 0u64;
    for _ in 0..LOW_BITS / 8 {
        code = (code << 8) | next(&mut pos);
    }
    let mut range = TOP - 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if code >= range {
            return Err(Error::CorruptPayload(format!("range coder state invalid at symbol {i}")));
        }
        let ch = model.channel_for(i);
        let r = range >> FREQ_BITS;
        let target = ((code / r).min(FREQ_TOTAL as u64 - 1)) as u32;
        let k = ch.cum.partition_point(|&c| c <= target) - 1;
        let (start, size) = (ch.cum[k], ch.freq[k]);
        code -= r * start as u64;
        range = if start + size == FREQ_TOTAL {
            range - r * start as u64
        } else {
            r * size as u64
        };
        if code >= range {
            return Err(Error::CorruptPayload(format!("symbol {i} decodes outside its interval")));
        }
        while range < RENORM {
            range <<= 8;
            code = (code << 8) | next(&mut pos);
        }
        out.push(ch.lo + k as i64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::entropy::{estimate_bits, fit_entropy_model, ChannelModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream() {
        let m = EntropyModel::single(ChannelModel::laplace(-2, 2, 0, 1.0).unwrap());
        let bytes = ac_encode(&[], &m).unwrap();
        assert!(bytes.len() <= 8);
        assert!(ac_decode(&bytes, &m, 0).unwrap().is_empty());
    }

    #[test]
    fn out_of_alphabet_rejected() {
        let m = EntropyModel::single(ChannelModel::laplace(-2, 2, 0, 1.0).unwrap());
        assert!(matches!(ac_encode(&[0, 3], &m), Err(Error::SymbolOutOfAlphabet { symbol: 3, .. })));
    }

    #[test]
    fn skewed_four_letter_source() {
        let p = [0.7, 0.2, 0.05, 0.05];
        let m = EntropyModel::single(ChannelModel::from_probabilities(0, &p).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let s: Vec<i64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.7 {
                    0
                } else if u < 0.9 {
                    1
                } else if u < 0.95 {
                    2
                } else {
                    3
                }
            })
            .collect();
        let bytes = ac_encode(&s, &m).unwrap();
        let h: f64 = p.iter().map(|q| -q * q.log2()).sum();
        let bits = bytes.len() as f64 * 8.0;
        assert!((bits - n as f64 * h).abs() <= 0.02 * n as f64 * h, "{bits} vs {}", n as f64 * h);
        assert_eq!(ac_decode(&bytes, &m, n).unwrap(), s);
    }

    #[test]
    fn carries_survive_extreme_tables() {
        // near-certain symbol followed by rare ones stresses the 0xFF/carry path
        let m = EntropyModel::single(ChannelModel::from_probabilities(0, &[1.0, 0.0, 0.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(0..3000);
            let s: Vec<i64> = (0..n).map(|_| if rng.random::<f64>() < 0.98 { 0 } else { rng.random_range(1..3) }).collect();
            let bytes = ac_encode(&s, &m).unwrap();
            assert_eq!(ac_decode(&bytes, &m, n).unwrap(), s);
            let est = estimate_bits(&s, &m);
            assert!((bytes.len() * 8) as f64 <= est * 1.02 + 64.0);
        }
    }

    #[test]
    fn multi_channel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<i64> = (0..5000).map(|i| if i % 3 == 0 { rng.random_range(-50..50) } else { rng.random_range(-2..3) }).collect();
        let m = fit_entropy_model(&s, vec![0, 1, 1]).unwrap();
        let bytes = ac_encode(&s, &m).unwrap();
        assert_eq!(ac_decode(&bytes, &m, s.len()).unwrap(), s);
    }

    #[test]
    fn garbage_is_an_error_or_decodes_without_panicking() {
        let m = EntropyModel::single(ChannelModel::laplace(-3, 3, 0, 0.7).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let junk: Vec<u8> = (0..rng.random_range(0..40)).map(|_| rng.random()).collect();
            let _ = ac_decode(&junk, &m, 500);
        }
    }
}
