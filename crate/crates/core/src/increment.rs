//! Map increments between consecutive stages and the staged map database.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::{
    self, decode_block, encode_block, fit_embedding, rd_select_step, stream_steps, Bitstream, DecoderWeights,
    PayloadKind, RdPoint, Rows, ATTRS_PER_GAUSSIAN, INCREMENT_EMBED_DIM,
};
use crate::error::{Error, Result};
use crate::model::{Gaussian, GaussianMap, RAW_PARAMS};

/// Per-Gaussian raw-parameter deltas for the first `anchor_count` anchors of a map.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianIncrement {
    pub stage_id: u32,
    pub gaussians_per_anchor: usize,
    pub anchor_count: usize,
    /// Same order as [`Gaussian::to_params`]: position, scale, rotation (w, x, y, z), opacity, color.
    pub deltas: Vec<[f64; RAW_PARAMS]>,
    pub epsilon: f64,
}

impl GaussianIncrement {
    pub fn zero(prev: &GaussianMap) -> Self {
        Self {
            stage_id: prev.stage_id + 1,
            gaussians_per_anchor: prev.gaussians_per_anchor,
            anchor_count: prev.anchor_count(),
            deltas: vec![[0.0; RAW_PARAMS]; prev.len()],
            epsilon: prev.epsilon,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.deltas.iter().all(|d| d.iter().all(|v| *v == 0.0))
    }

    /// Element-wise sum of two increments; the result targets `other.stage_id`.
    pub fn combine(&self, other: &GaussianIncrement) -> Result<GaussianIncrement> {
        if self.deltas.len() != other.deltas.len() {
            return Err(Error::DimensionMismatch {
                expected: self.deltas.len(),
                found: other.deltas.len(),
            });
        }
        let mut out = other.clone();
        for (o, s) in out.deltas.iter_mut().zip(&self.deltas) {
            for i in 0..RAW_PARAMS {
                o[i] += s[i];
            }
        }
        Ok(out)
    }
}

/// `target − prev` over the anchors of `prev`, which must be a prefix of `target` in the
/// same order.
pub fn compute_increment(target: &GaussianMap, prev: &GaussianMap) -> Result<GaussianIncrement> {
    let n = prev.anchor_count();
    if target.gaussians_per_anchor != prev.gaussians_per_anchor {
        return Err(Error::DimensionMismatch {
            expected: prev.gaussians_per_anchor,
            found: target.gaussians_per_anchor,
        });
    }
    if target.anchor_count() < n || target.anchors[..n] != prev.anchors[..] {
        return Err(Error::InvalidInput("target does not preserve the previous anchor ordering".into()));
    }
    let deltas = prev
        .gaussians
        .iter()
        .zip(&target.gaussians)
        .map(|(p, t)| {
            let (p, t) = (p.to_params(), t.to_params());
            std::array::from_fn(|i| t[i] - p[i])
        })
        .collect();
    Ok(GaussianIncrement {
        stage_id: prev.stage_id + 1,
        gaussians_per_anchor: prev.gaussians_per_anchor,
        anchor_count: n,
        deltas,
        epsilon: prev.epsilon,
    })
}

/// `prev + inc` element-wise, then renormalized and clamped. Anchors beyond the increment
/// are dropped; callers append new segments afterwards.
pub fn apply_increment(prev: &GaussianMap, inc: &GaussianIncrement) -> Result<GaussianMap> {
    if inc.stage_id != prev.stage_id + 1 {
        return Err(Error::OutOfOrderUpdate {
            current: prev.stage_id,
            update: inc.stage_id,
        });
    }
    if inc.anchor_count > prev.anchor_count() || inc.gaussians_per_anchor != prev.gaussians_per_anchor {
        return Err(Error::DimensionMismatch {
            expected: prev.anchor_count(),
            found: inc.anchor_count,
        });
    }
    if inc.deltas.len() != inc.anchor_count * inc.gaussians_per_anchor {
        return Err(Error::DimensionMismatch {
            expected: inc.anchor_count * inc.gaussians_per_anchor,
            found: inc.deltas.len(),
        });
    }
    let mut out = prev.prefix(inc.anchor_count);
    out.stage_id = inc.stage_id;
    for (g, d) in out.gaussians.iter_mut().zip(&inc.deltas) {
        let p = g.to_params();
        let sum: [f64; RAW_PARAMS] = std::array::from_fn(|i| p[i] + d[i]);
        *g = Gaussian::from_params(&sum, g.kind);
    }
    Ok(out)
}

fn increment_rows(inc: &GaussianIncrement) -> (Rows, DMatrix<f64>) {
    let k = inc.gaussians_per_anchor;
    let n = inc.anchor_count;
    let a = k * ATTRS_PER_GAUSSIAN;
    let attrs = DMatrix::from_fn(n, a, |i, c| attr_delta(&inc.deltas[i * k + c / 8])[c % 8]);
    let rows = Rows {
        cells: Vec::new(),
        f_o: inc.deltas.iter().map(|d| [d[0], d[1], d[2]]).collect(),
        f_s: inc.deltas.iter().map(|d| [d[3], d[4], d[5]]).collect(),
        emb: DMatrix::zeros(n, 0),
    };
    (rows, attrs)
}

/// Delta attributes in embedding order (color, opacity, rotation).
fn attr_delta(d: &[f64; RAW_PARAMS]) -> [f64; ATTRS_PER_GAUSSIAN] {
    [d[11], d[12], d[13], d[10], d[6], d[7], d[8], d[9]]
}

fn increment_from_rows(rows: &Rows, weights: Option<&DecoderWeights>, meta: &GaussianIncrement) -> Result<GaussianIncrement> {
    let k = meta.gaussians_per_anchor;
    let mut deltas = Vec::with_capacity(meta.anchor_count * k);
    for a in 0..meta.anchor_count {
        let w = weights.ok_or_else(|| Error::CorruptPayload("increment without decoder".into()))?;
        let emb: Vec<f64> = rows.emb.row(a).iter().copied().collect();
        let attrs = w.decode(&emb)?;
        for j in 0..k {
            let o = rows.f_o[a * k + j];
            let s = rows.f_s[a * k + j];
            let t = &attrs.as_slice()[j * 8..j * 8 + 8];
            deltas.push([o[0], o[1], o[2], s[0], s[1], s[2], t[4], t[5], t[6], t[7], t[3], t[0], t[1], t[2]]);
        }
    }
    Ok(GaussianIncrement { deltas, ..meta.clone() })
}

/// Increment with its fitted decoder, ready for quantization.
pub struct IncrementFit {
    meta: GaussianIncrement,
    rows: Rows,
    weights: Option<DecoderWeights>,
    d: usize,
}

impl IncrementFit {
    pub fn new(inc: &GaussianIncrement) -> Result<Self> {
        let k = inc.gaussians_per_anchor;
        if k == 0 || k > u8::MAX as usize {
            return Err(Error::InvalidInput(format!("K = {k} cannot be coded")));
        }
        if inc.deltas.len() != inc.anchor_count * k {
            return Err(Error::DimensionMismatch {
                expected: inc.anchor_count * k,
                found: inc.deltas.len(),
            });
        }
        let d = INCREMENT_EMBED_DIM.min(k * ATTRS_PER_GAUSSIAN);
        let (mut rows, attrs) = increment_rows(inc);
        let weights = if inc.anchor_count > 0 {
            let w = fit_embedding(&attrs, d)?.1.to_f32_precision();
            rows.emb = w.encode_rows(&attrs);
            Some(w)
        } else {
            rows.emb = DMatrix::zeros(0, d);
            None
        };
        Ok(Self {
            meta: GaussianIncrement {
                deltas: Vec::new(),
                epsilon: inc.epsilon as f32 as f64,
                ..inc.clone()
            },
            rows,
            weights,
            d,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.d
    }

    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.rows.emb
    }

    /// The increment a decoder would reconstruct with embedding step `embed_step`.
    pub fn reconstruct(&self, embed_step: f64) -> Result<GaussianIncrement> {
        let steps = stream_steps(self.meta.epsilon, embed_step, self.d);
        let symbols = codec::rows_to_symbols(&self.rows, self.meta.gaussians_per_anchor, &steps, false);
        let rows = codec::symbols_to_rows(&symbols, self.meta.anchor_count, self.meta.gaussians_per_anchor, self.d, &steps, false)?;
        increment_from_rows(&rows, self.weights.as_ref(), &self.meta)
    }

    pub fn serialize(&self, embed_step: f64) -> Result<Bitstream> {
        let k = self.meta.gaussians_per_anchor;
        let steps = stream_steps(self.meta.epsilon, embed_step, self.d);
        if steps.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("quantization steps must be positive".into()));
        }
        let block = encode_block(&self.rows, self.weights.as_ref(), k, steps, false)?;
        Ok(Bitstream {
            kind: PayloadKind::Increment,
            stage_id: self.meta.stage_id,
            anchor_count: self.meta.anchor_count as u32,
            k: k as u8,
            d: self.d as u8,
            epsilon: self.meta.epsilon as f32,
            steps: block.steps,
            channels: block.channels,
            attr_dim: block.attr_dim,
            mean: block.mean,
            basis: block.basis,
            payload: block.payload,
        })
    }
}

/// Fits a rank-25 decoder to the attribute deltas and codes the increment at `embed_step`.
pub fn encode_increment(inc: &GaussianIncrement, embed_step: f64) -> Result<Bitstream> {
    IncrementFit::new(inc)?.serialize(embed_step)
}

/// Rate-distortion variant: picks the embedding step from `candidates` minimizing
/// `λ_q · rate + distortion(reconstructed increment)`.
pub fn encode_increment_rd(
    inc: &GaussianIncrement,
    candidates: &[f64],
    lambda_q: f64,
    mut distortion: impl FnMut(&GaussianIncrement) -> Result<f64>,
) -> Result<(Bitstream, Vec<RdPoint>)> {
    let fit = IncrementFit::new(inc)?;
    let emb: Vec<f64> = row_major(fit.embeddings());
    let (spec, points) = rd_select_step(&emb, fit.d, candidates, |_, step| distortion(&fit.reconstruct(step)?), lambda_q)?;
    Ok((fit.serialize(spec.steps[0])?, points))
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

pub fn decode_increment(bs: &Bitstream) -> Result<GaussianIncrement> {
    bs.expect_kind(PayloadKind::Increment)?;
    let (rows, weights) = decode_block(bs, false)?;
    let meta = GaussianIncrement {
        stage_id: bs.stage_id,
        gaussians_per_anchor: bs.k as usize,
        anchor_count: bs.anchor_count as usize,
        deltas: Vec::new(),
        epsilon: bs.epsilon as f64,
    };
    increment_from_rows(&rows, weights.as_ref(), &meta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub set: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub depth_l1_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_id: u32,
    /// Size of retransmitting the whole map at this stage.
    pub full_bytes: u64,
    /// Size of the increment-path update (increment plus new-area segment); equals
    /// `full_bytes` at stage 0.
    pub increment_bytes: u64,
    pub metrics: Vec<MetricsSnapshot>,
}

impl StageRecord {
    pub fn transmitted_bytes(&self) -> u64 {
        if self.stage_id == 0 {
            self.full_bytes
        } else {
            self.increment_bytes
        }
    }
}

/// Append-only store of stage records with strictly increasing ids.
#[derive(Clone, Debug, Default)]
pub struct StageDb {
    records: Vec<StageRecord>,
}

impl StageDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, rec: StageRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.stage_id <= last.stage_id {
                return Err(Error::StageDb(format!(
                    "stage {} does not follow stage {}",
                    rec.stage_id, last.stage_id
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn get(&self, stage_id: u32) -> Option<&StageRecord> {
        self.records
            .binary_search_by_key(&stage_id, |r| r.stage_id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn latest(&self) -> Option<&StageRecord> {
        self.records.last()
    }

    pub fn cumulative_bytes(&self) -> u64 {
        self.records.iter().map(StageRecord::transmitted_bytes).sum()
    }

    pub fn cumulative_full_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.full_bytes).sum()
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::deserialize;
    use crate::model::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(anchors: usize, k: usize, seed: u64) -> GaussianMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = GaussianMap::empty(k, 0.03);
        for a in 0..anchors {
            let gs = (0..k)
                .map(|_| {
                    let q = crate::model::quat_from_wxyz([1.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.1]);
                    Gaussian::flat(
                        Vec3::new(a as f64 * 0.03, rng.random_range(-0.01..0.01), 0.0),
                        [0.005, 0.004],
                        q,
                        rng.random_range(0.2..0.8),
                        [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)],
                    )
                })
                .collect();
            map.push_anchor([a as i32, 0, 0], gs).unwrap();
        }
        map
    }

    fn recolor(map: &GaussianMap, seed: u64, amount: f64) -> GaussianMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = map.clone();
        for g in &mut out.gaussians {
            g.opacity += rng.random_range(-amount..amount);
            for c in &mut g.color {
                *c += rng.random_range(-amount..amount);
            }
            *g = g.clone().sanitized();
        }
        out
    }

    #[test]
    fn identical_maps_give_zero_increment() {
        let m = random_map(5, 3, 1);
        let inc = compute_increment(&m, &m).unwrap();
        assert!(inc.is_zero());
        assert_eq!(inc.stage_id, 1);
        let applied = apply_increment(&m, &inc).unwrap();
        assert_eq!(applied.gaussians, m.gaussians);
        assert_eq!(applied.stage_id, 1);
    }

    #[test]
    fn single_slot_change() {
        let m = random_map(4, 2, 2);
        let mut t = m.clone();
        t.gaussians[5].color[0] = (t.gaussians[5].color[0] + 0.1).min(1.0);
        let dr = t.gaussians[5].color[0] - m.gaussians[5].color[0];
        let inc = compute_increment(&t, &m).unwrap();
        for (i, d) in inc.deltas.iter().enumerate() {
            if i == 5 {
                assert_eq!(d[11], dr);
                assert!(d.iter().enumerate().all(|(j, v)| j == 11 || *v == 0.0));
            } else {
                assert!(d.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn round_trip_and_clamping() {
        let m = random_map(6, 2, 3);
        let t = recolor(&m, 4, 0.2);
        let back = apply_increment(&m, &compute_increment(&t, &m).unwrap()).unwrap();
        for (a, b) in back.gaussians.iter().zip(&t.gaussians) {
            assert!((a.opacity - b.opacity).abs() < 1e-12);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-9);
        }
        let mut inc = GaussianIncrement::zero(&m);
        inc.deltas[0][10] = 2.0;
        assert_eq!(apply_increment(&m, &inc).unwrap().gaussians[0].opacity, 1.0);
    }

    #[test]
    fn out_of_order_rejected() {
        let m = random_map(2, 1, 5);
        let mut inc = GaussianIncrement::zero(&m);
        inc.stage_id = 2;
        assert!(matches!(apply_increment(&m, &inc), Err(Error::OutOfOrderUpdate { current: 0, update: 2 })));
    }

    #[test]
    fn ordering_mismatch_rejected() {
        let m = random_map(3, 1, 6);
        let mut t = m.clone();
        t.anchors.swap(0, 1);
        assert!(compute_increment(&t, &m).is_err());
    }

    #[test]
    fn zero_increment_codes_tiny() {
        let m = random_map(200, 10, 7);
        let bs = encode_increment(&GaussianIncrement::zero(&m), 0.02).unwrap();
        assert!(bs.payload.len() <= 64, "{}", bs.payload.len());
        assert_eq!(bs.d as usize, INCREMENT_EMBED_DIM);
    }

    #[test]
    fn codec_round_trip_is_exact_on_quantized_values() {
        let m = random_map(40, 4, 8);
        let t = recolor(&m, 9, 0.1);
        let inc = compute_increment(&t, &m).unwrap();
        let fit = IncrementFit::new(&inc).unwrap();
        let bs = fit.serialize(0.01).unwrap();
        let bytes = bs.to_bytes();
        let codec::Decoded::Increment(dec) = deserialize(&bytes).unwrap() else { panic!() };
        assert_eq!(dec, fit.reconstruct(0.01).unwrap());
        assert_eq!(encode_increment(&inc, 0.01).unwrap().to_bytes(), bytes);
        assert!(deserialize(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn stage_db_basics() {
        let mut db = StageDb::new();
        for (s, b) in [(0u32, 100u64), (1, 30), (2, 20)] {
            db.put(StageRecord {
                stage_id: s,
                full_bytes: if s == 0 { b } else { 1000 },
                increment_bytes: b,
                metrics: vec![],
            })
            .unwrap();
        }
        assert_eq!(db.get(1).unwrap().increment_bytes, 30);
        assert_eq!(db.cumulative_bytes(), 150);
        assert!(db.get(7).is_none());
        let dup = db.get(2).unwrap().clone();
        assert!(db.put(dup).is_err());
    }
}
