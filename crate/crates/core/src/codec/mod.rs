//! Anchor compression: linear decoder fit, quantization, entropy coding and the `.gsb`
//! container.
//!
//! Each anchor is coded as one row of symbols:
//!
//! | field | width | channel per column |
//! |-------|-------|--------------------|
//! | cell delta (full maps only) | 3 | one per axis |
//! | `F_o` offsets | 3K | one per axis, shared by the K Gaussians |
//! | `F_s` scales | 3K | one per axis, shared by the K Gaussians |
//! | `F_emb` | D | one per dimension |

pub mod bitstream;
pub mod embedding;
pub mod entropy;
pub mod quant;
pub mod rangecoder;
pub mod rd;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Gaussian, GaussianKind, GaussianMap, Vec3, RAW_PARAMS};
pub use bitstream::{Bitstream, ChannelParams, PayloadKind};
pub use embedding::{fit_embedding, DecoderWeights};
pub use entropy::{estimate_bits, fit_entropy_model, EntropyModel};
pub use quant::{inject_noise, quantize, QuantizationSpec};
pub use rangecoder::{ac_decode, ac_encode};
pub use rd::{rd_select_step, RdPoint};

/// Attributes carried by the embedding per Gaussian: color 3, opacity 1, rotation (w, x, y, z).
pub const ATTRS_PER_GAUSSIAN: usize = 8;
pub const FULL_EMBED_DIM: usize = 50;
pub const INCREMENT_EMBED_DIM: usize = 25;
/// Offset quantization step as a fraction of ε.
pub const OFFSET_STEP_FRACTION: f64 = 1.0 / 32.0;
/// Scale quantization step as a fraction of ε.
pub const SCALE_STEP_FRACTION: f64 = 1.0 / 64.0;
pub const DEFAULT_EMBED_STEP: f64 = 0.02;
const MAX_SYMBOLS: usize = 1 << 28;

/// Compact per-anchor record.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorFeature {
    pub cell: [i32; 3],
    /// Per-Gaussian scales.
    pub f_s: Vec<[f64; 3]>,
    /// Per-Gaussian offsets from the anchor position.
    pub f_o: Vec<[f64; 3]>,
    pub f_emb: Vec<f64>,
}

impl AnchorFeature {
    pub fn anchor_position(&self, epsilon: f64) -> Vec3 {
        cell_position(&self.cell, epsilon)
    }
}

pub fn cell_position(cell: &[i32; 3], epsilon: f64) -> Vec3 {
    Vec3::new(cell[0] as f64, cell[1] as f64, cell[2] as f64) * epsilon
}

/// Embedded attributes of one Gaussian; the quaternion sign is fixed to `w ≥ 0`.
pub fn gaussian_attrs(g: &Gaussian) -> [f64; ATTRS_PER_GAUSSIAN] {
    let mut q = [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k];
    if q[0] < 0.0 {
        q.iter_mut().for_each(|v| *v = -*v);
    }
    [g.color[0], g.color[1], g.color[2], g.opacity, q[0], q[1], q[2], q[3]]
}

/// Decodes the `K` Gaussians of one anchor: attributes from the embedding, positions from
/// the offsets, scales from `F_s`; rotations renormalized and opacity/color clamped.
pub fn decode_anchor(f: &AnchorFeature, w: &DecoderWeights, epsilon: f64) -> Result<Vec<Gaussian>> {
    let k = f.f_o.len();
    if f.f_s.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: f.f_s.len(),
        });
    }
    if w.attr_dim() != k * ATTRS_PER_GAUSSIAN {
        return Err(Error::DimensionMismatch {
            expected: k * ATTRS_PER_GAUSSIAN,
            found: w.attr_dim(),
        });
    }
    let attrs = w.decode(&f.f_emb)?;
    let anchor = f.anchor_position(epsilon);
    Ok((0..k).map(|j| gaussian_from_parts(&anchor, &f.f_o[j], &f.f_s[j], &attrs.as_slice()[j * 8..j * 8 + 8])).collect())
}

fn gaussian_from_parts(anchor: &Vec3, offset: &[f64; 3], scale: &[f64; 3], a: &[f64]) -> Gaussian {
    let p = [
        anchor.x + offset[0],
        anchor.y + offset[1],
        anchor.z + offset[2],
        scale[0],
        scale[1],
        scale[2],
        a[4],
        a[5],
        a[6],
        a[7],
        a[3],
        a[0],
        a[1],
        a[2],
    ];
    Gaussian::from_params(&p, GaussianKind::Flat2D)
}

/// Quantization steps as transmitted: offsets (3), scales (3), embedding (D).
pub fn stream_steps(epsilon: f64, embed_step: f64, d: usize) -> Vec<f32> {
    let mut steps = vec![(epsilon * OFFSET_STEP_FRACTION) as f32; 3];
    steps.extend([(epsilon * SCALE_STEP_FRACTION) as f32; 3]);
    steps.extend(std::iter::repeat_n(embed_step as f32, d));
    steps
}

/// Symbol positions of one row mapped to entropy channels.
pub(crate) fn row_layout(k: usize, d: usize, with_cells: bool) -> Vec<usize> {
    let base = if with_cells { 3 } else { 0 };
    let mut layout: Vec<usize> = (0..base).collect();
    for block in 0..2 {
        for _ in 0..k {
            layout.extend((0..3).map(|c| base + 3 * block + c));
        }
    }
    layout.extend((0..d).map(|i| base + 6 + i));
    layout
}

/// Geometry and embedding of `n` anchors in row form.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Rows {
    pub cells: Vec<[i32; 3]>,
    /// `n·K` offsets (or position deltas).
    pub f_o: Vec<[f64; 3]>,
    /// `n·K` scales (or scale deltas).
    pub f_s: Vec<[f64; 3]>,
    /// `n × D`.
    pub emb: DMatrix<f64>,
}

pub(crate) fn rows_to_symbols(rows: &Rows, k: usize, steps: &[f32], with_cells: bool) -> Vec<i64> {
    let n = rows.emb.nrows();
    let d = rows.emb.ncols();
    let mut out = Vec::with_capacity(n * (3 + 6 * k + d));
    let mut prev = [0i32; 3];
    for a in 0..n {
        if with_cells {
            let c = rows.cells[a];
            for i in 0..3 {
                out.push(c[i] as i64 - prev[i] as i64);
            }
            prev = c;
        }
        for (block, data) in [&rows.f_o, &rows.f_s].into_iter().enumerate() {
            for j in 0..k {
                for c in 0..3 {
                    out.push(quant::to_symbol(data[a * k + j][c], steps[3 * block + c] as f64));
                }
            }
        }
        for i in 0..d {
            out.push(quant::to_symbol(rows.emb[(a, i)], steps[6 + i] as f64));
        }
    }
    out
}

pub(crate) fn symbols_to_rows(symbols: &[i64], n: usize, k: usize, d: usize, steps: &[f32], with_cells: bool) -> Result<Rows> {
    let width = row_layout(k, d, with_cells).len();
    if symbols.len() != n * width {
        return Err(Error::DimensionMismatch {
            expected: n * width,
            found: symbols.len(),
        });
    }
    let mut rows = Rows {
        cells: Vec::with_capacity(if with_cells { n } else { 0 }),
        f_o: Vec::with_capacity(n * k),
        f_s: Vec::with_capacity(n * k),
        emb: DMatrix::zeros(n, d),
    };
    let mut prev = [0i64; 3];
    for a in 0..n {
        let row = &symbols[a * width..(a + 1) * width];
        let mut pos = 0;
        if with_cells {
            let mut c = [0i32; 3];
            for i in 0..3 {
                let v = prev[i] + row[i];
                c[i] = i32::try_from(v).map_err(|_| Error::CorruptPayload("anchor cell out of range".into()))?;
                prev[i] = v;
            }
            rows.cells.push(c);
            pos = 3;
        }
        for block in 0..2 {
            for _ in 0..k {
                let v = [0, 1, 2].map(|c| quant::from_symbol(row[pos + c], steps[3 * block + c] as f64));
                pos += 3;
                if block == 0 {
                    rows.f_o.push(v);
                } else {
                    rows.f_s.push(v);
                }
            }
        }
        for i in 0..d {
            rows.emb[(a, i)] = quant::from_symbol(row[pos + i], steps[6 + i] as f64);
        }
    }
    Ok(rows)
}

pub(crate) fn weights_from_stream(bs: &Bitstream) -> Result<Option<DecoderWeights>> {
    if bs.attr_dim == 0 {
        return Ok(None);
    }
    let a = bs.attr_dim as usize;
    let d = bs.d as usize;
    if bs.mean.len() != a || bs.basis.len() != a * d {
        return Err(Error::CorruptPayload("decoder weight size mismatch".into()));
    }
    Ok(Some(DecoderWeights {
        mean: DVector::from_iterator(a, bs.mean.iter().map(|&v| v as f64)),
        basis: DMatrix::from_iterator(a, d, bs.basis.iter().map(|&v| v as f64)),
    }))
}

fn weights_to_stream(w: &DecoderWeights) -> (u16, Vec<f32>, Vec<f32>) {
    (
        w.attr_dim() as u16,
        w.mean.iter().map(|&v| v as f32).collect(),
        w.basis.iter().map(|&v| v as f32).collect(),
    )
}

pub(crate) fn check_symbol_count(n: usize, width: usize) -> Result<usize> {
    n.checked_mul(width)
        .filter(|&t| t <= MAX_SYMBOLS)
        .ok_or_else(|| Error::CorruptPayload(format!("{n} anchors exceed the decoder limit")))
}

/// Generic entropy-coded block shared by full maps and increments.
pub(crate) struct EncodedBlock {
    pub steps: Vec<f32>,
    pub channels: Vec<ChannelParams>,
    pub attr_dim: u16,
    pub mean: Vec<f32>,
    pub basis: Vec<f32>,
    pub payload: Vec<u8>,
}

pub(crate) fn encode_block(rows: &Rows, weights: Option<&DecoderWeights>, k: usize, steps: Vec<f32>, with_cells: bool) -> Result<EncodedBlock> {
    let d = rows.emb.ncols();
    let symbols = rows_to_symbols(rows, k, &steps, with_cells);
    let model = fit_entropy_model(&symbols, row_layout(k, d, with_cells))?;
    let payload = ac_encode(&symbols, &model)?;
    let channels = model.channels.iter().map(ChannelParams::from_model).collect::<Result<Vec<_>>>()?;
    let (attr_dim, mean, basis) = weights.map(weights_to_stream).unwrap_or((0, Vec::new(), Vec::new()));
    Ok(EncodedBlock {
        steps,
        channels,
        attr_dim,
        mean,
        basis,
        payload,
    })
}

pub(crate) fn decode_block(bs: &Bitstream, with_cells: bool) -> Result<(Rows, Option<DecoderWeights>)> {
    let n = bs.anchor_count as usize;
    let k = bs.k as usize;
    let d = bs.d as usize;
    if bs.steps.len() != 6 + d {
        return Err(Error::CorruptPayload(format!("{} quantization steps for D = {d}", bs.steps.len())));
    }
    if bs.steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::CorruptPayload("non-positive quantization step".into()));
    }
    let layout = row_layout(k, d, with_cells);
    let total = check_symbol_count(n, layout.len())?;
    let n_channels = layout.iter().max().map_or(0, |m| m + 1);
    if bs.channels.len() != n_channels {
        return Err(Error::CorruptPayload(format!("{} entropy channels, expected {n_channels}", bs.channels.len())));
    }
    let weights = weights_from_stream(bs)?;
    if n > 0 && weights.as_ref().is_none_or(|w| w.attr_dim() != k * ATTRS_PER_GAUSSIAN) {
        return Err(Error::CorruptPayload("decoder weights do not match K".into()));
    }
    let model = bs.entropy_model(layout)?;
    let symbols = ac_decode(&bs.payload, &model, total)?;
    Ok((symbols_to_rows(&symbols, n, k, d, &bs.steps, with_cells)?, weights))
}

/// Per-anchor features and the fitted decoder of a full map.
#[derive(Clone, Debug, PartialEq)]
pub struct FullMapFit {
    pub features: Vec<AnchorFeature>,
    /// Weights at transmission (`f32`) precision.
    pub weights: Option<DecoderWeights>,
    pub k: usize,
    pub d: usize,
    pub epsilon: f64,
    pub stage_id: u32,
}

impl FullMapFit {
    /// Embeddings as an `N × D` matrix.
    pub fn embeddings(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.features.len(), self.d, |i, j| self.features[i].f_emb[j])
    }

    /// Map decoded from these features with the embedding replaced by `emb` (already
    /// quantized or not) and the geometry quantized as in the stream.
    pub fn decode_with_embeddings(&self, emb: &DMatrix<f64>) -> Result<GaussianMap> {
        let eps = self.epsilon as f32 as f64;
        let steps = stream_steps(self.epsilon, 1.0, 0);
        let mut map = GaussianMap::empty(self.k, eps);
        map.stage_id = self.stage_id;
        for (i, f) in self.features.iter().enumerate() {
            let q = AnchorFeature {
                cell: f.cell,
                f_s: f.f_s.iter().map(|s| quantize_triplet(s, &steps[3..6])).collect(),
                f_o: f.f_o.iter().map(|o| quantize_triplet(o, &steps[0..3])).collect(),
                f_emb: emb.row(i).iter().copied().collect(),
            };
            let w = self.weights.as_ref().ok_or_else(|| Error::InvalidInput("missing decoder".into()))?;
            map.push_anchor(f.cell, decode_anchor(&q, w, eps)?)?;
        }
        Ok(map)
    }
}

fn quantize_triplet(v: &[f64; 3], steps: &[f32]) -> [f64; 3] {
    [0, 1, 2].map(|c| quant::from_symbol(quant::to_symbol(v[c], steps[c] as f64), steps[c] as f64))
}

/// Splits a map into anchor features and fits a rank-`d` decoder (`d` capped at `8K`).
/// Only flat Gaussians are accepted.
pub fn fit_full_map(map: &GaussianMap, d: usize) -> Result<FullMapFit> {
    map.check()?;
    if map.gaussians.iter().any(|g| g.kind != GaussianKind::Flat2D) {
        return Err(Error::InvalidInput("full-map coding requires flat Gaussians".into()));
    }
    let k = map.gaussians_per_anchor;
    if k == 0 || k > u8::MAX as usize {
        return Err(Error::InvalidInput(format!("K = {k} cannot be coded")));
    }
    let a = k * ATTRS_PER_GAUSSIAN;
    let d = d.min(a).min(u8::MAX as usize);
    let n = map.anchor_count();
    let eps = map.epsilon as f32 as f64;
    let attrs = DMatrix::from_fn(n, a, |i, c| gaussian_attrs(&map.gaussians[i * k + c / 8])[c % 8]);
    let weights = if n > 0 {
        Some(fit_embedding(&attrs, d)?.1.to_f32_precision())
    } else {
        None
    };
    let emb = weights.as_ref().map(|w| w.encode_rows(&attrs));
    let features = (0..n)
        .map(|i| {
            let anchor = cell_position(&map.anchors[i], eps);
            let gs = map.anchor_gaussians(i);
            AnchorFeature {
                cell: map.anchors[i],
                f_s: gs.iter().map(|g| [g.scale.x, g.scale.y, g.scale.z]).collect(),
                f_o: gs.iter().map(|g| (g.position - anchor).into()).collect(),
                f_emb: emb.as_ref().map(|e| e.row(i).iter().copied().collect()).unwrap_or_default(),
            }
        })
        .collect();
    Ok(FullMapFit {
        features,
        weights,
        k,
        d,
        epsilon: map.epsilon,
        stage_id: map.stage_id,
    })
}

/// Quantizes and entropy-codes a fitted full map.
pub fn serialize_full(fit: &FullMapFit, embed_step: f64) -> Result<Bitstream> {
    let k = fit.k;
    let n = fit.features.len();
    let rows = Rows {
        cells: fit.features.iter().map(|f| f.cell).collect(),
        f_o: fit.features.iter().flat_map(|f| f.f_o.iter().copied()).collect(),
        f_s: fit.features.iter().flat_map(|f| f.f_s.iter().copied()).collect(),
        emb: fit.embeddings(),
    };
    let steps = stream_steps(fit.epsilon, embed_step, fit.d);
    if steps.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput("quantization steps must be positive".into()));
    }
    let block = encode_block(&rows, fit.weights.as_ref(), k, steps, true)?;
    Ok(Bitstream {
        kind: PayloadKind::FullMap,
        stage_id: fit.stage_id,
        anchor_count: n as u32,
        k: k as u8,
        d: fit.d as u8,
        epsilon: fit.epsilon as f32,
        steps: block.steps,
        channels: block.channels,
        attr_dim: block.attr_dim,
        mean: block.mean,
        basis: block.basis,
        payload: block.payload,
    })
}

/// Fits, quantizes and codes `map` with embedding dimension `d`.
pub fn encode_full_map(map: &GaussianMap, d: usize, embed_step: f64) -> Result<Bitstream> {
    serialize_full(&fit_full_map(map, d)?, embed_step)
}

pub fn decode_full_map(bs: &Bitstream) -> Result<GaussianMap> {
    bs.expect_kind(PayloadKind::FullMap)?;
    let (rows, weights) = decode_block(bs, true)?;
    let k = bs.k as usize;
    let eps = bs.epsilon as f64;
    let mut map = GaussianMap::empty(k, eps);
    map.stage_id = bs.stage_id;
    for a in 0..bs.anchor_count as usize {
        let f = AnchorFeature {
            cell: rows.cells[a],
            f_s: rows.f_s[a * k..(a + 1) * k].to_vec(),
            f_o: rows.f_o[a * k..(a + 1) * k].to_vec(),
            f_emb: rows.emb.row(a).iter().copied().collect(),
        };
        map.push_anchor(f.cell, decode_anchor(&f, weights.as_ref().unwrap(), eps)?)?;
    }
    Ok(map)
}

/// Parses a `.gsb` file of either kind.
pub fn deserialize(bytes: &[u8]) -> Result<Decoded> {
    let bs = Bitstream::from_bytes(bytes)?;
    match bs.kind {
        PayloadKind::FullMap => Ok(Decoded::Map(decode_full_map(&bs)?)),
        PayloadKind::Increment => Ok(Decoded::Increment(crate::increment::decode_increment(&bs)?)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Map(GaussianMap),
    Increment(crate::increment::GaussianIncrement),
}

/// Number of raw parameters in an explicit serialization of `n` Gaussians.
pub fn explicit_params(n: usize) -> usize {
    n * RAW_PARAMS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quat_from_wxyz;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_map(anchors: usize, k: usize, seed: u64) -> GaussianMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 0.03;
        let mut map = GaussianMap::empty(k, eps);
        let mut cells = std::collections::BTreeSet::new();
        while cells.len() < anchors {
            cells.insert([rng.random_range(-40..40), rng.random_range(-40..40), rng.random_range(-20..20)]);
        }
        for cell in cells {
            let base = cell_position(&cell, eps);
            let q = quat_from_wxyz([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let color = [rng.random(), rng.random(), rng.random()];
            let gs = (0..k)
                .map(|_| {
                    let off = Vec3::new(rng.random_range(-0.015..0.015), rng.random_range(-0.015..0.015), rng.random_range(-0.015..0.015));
                    Gaussian::flat(base + off, [rng.random_range(0.002..0.01), rng.random_range(0.002..0.01)], q, rng.random(), color)
                })
                .collect();
            map.push_anchor(cell, gs).unwrap();
        }
        map
    }

    #[test]
    fn layout_shapes() {
        let l = row_layout(2, 4, true);
        assert_eq!(l, vec![0, 1, 2, 3, 4, 5, 3, 4, 5, 6, 7, 8, 6, 7, 8, 9, 10, 11, 12]);
        assert_eq!(row_layout(1, 1, false), vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn decode_anchor_contract() {
        let k = 2;
        let w = DecoderWeights {
            mean: DVector::from_fn(16, |i, _| if i % 8 == 4 { 1.0 } else { 0.5 }),
            basis: DMatrix::from_fn(16, 1, |i, _| if i == 3 { 1.0 } else { 0.0 }),
        };
        let f = AnchorFeature {
            cell: [1, 0, 0],
            f_s: vec![[0.01, 0.02, 0.0]; k],
            f_o: vec![[0.0, 0.0, 0.01], [0.0, 0.005, 0.0]],
            f_emb: vec![0.0],
        };
        let g = decode_anchor(&f, &w, 0.03).unwrap();
        assert_eq!(g[0].color, [0.5; 3]);
        assert!((g[0].position - Vec3::new(0.03, 0.0, 0.01)).norm() < 1e-15);
        let g = decode_anchor(&AnchorFeature { f_emb: vec![0.8], ..f.clone() }, &w, 0.03).unwrap();
        assert_eq!(g[0].opacity, 1.0);
        assert!((g[1].opacity - 0.5).abs() < 1e-15);
        assert!(decode_anchor(&AnchorFeature { f_emb: vec![0.0, 1.0], ..f }, &w, 0.03).is_err());
    }

    #[test]
    fn full_rank_round_trip_is_close() {
        let map = random_map(30, 2, 1);
        let fit = fit_full_map(&map, 16).unwrap();
        let dec = fit.decode_with_embeddings(&fit.embeddings()).unwrap();
        for (a, b) in map.gaussians.iter().zip(&dec.gaussians) {
            assert!((a.opacity - b.opacity).abs() < 1e-5);
            assert!((0..3).all(|c| (a.color[c] - b.color[c]).abs() < 1e-5));
            assert!(a.rotation.angle_to(&b.rotation) < 1e-4);
            assert!((a.position - b.position).norm() < 0.03 / 32.0);
        }
    }

    #[test]
    fn stream_round_trip_matches_quantized_decode() {
        let map = random_map(60, 3, 2);
        let fit = fit_full_map(&map, 24).unwrap();
        let step = 0.01;
        let bs = serialize_full(&fit, step).unwrap();
        let bytes = bs.to_bytes();
        assert_eq!(bytes.len(), bs.size_bytes());
        let decoded = match deserialize(&bytes).unwrap() {
            Decoded::Map(m) => m,
            _ => panic!("wrong kind"),
        };
        let q = fit.embeddings().map(|v| quant::from_symbol(quant::to_symbol(v, step as f32 as f64), step as f32 as f64));
        let expected = fit.decode_with_embeddings(&q).unwrap();
        assert_eq!(decoded.canonical_bytes(), expected.canonical_bytes());
        assert_eq!(decoded.anchors, map.anchors);
        // re-serialization is deterministic
        assert_eq!(serialize_full(&fit, step).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn empty_map_round_trips() {
        let map = GaussianMap::empty(10, 0.03);
        let bs = encode_full_map(&map, FULL_EMBED_DIM, DEFAULT_EMBED_STEP).unwrap();
        let bytes = bs.to_bytes();
        let Decoded::Map(m) = deserialize(&bytes).unwrap() else { panic!() };
        assert!(m.is_empty());
        assert_eq!(m.gaussians_per_anchor, 10);
    }

    #[test]
    fn isotropic_maps_are_rejected() {
        let mut map = GaussianMap::empty(1, 0.03);
        map.push_anchor([0, 0, 0], vec![Gaussian::isotropic(Vec3::zeros(), 0.01, 1.0, [0.5; 3])]).unwrap();
        assert!(fit_full_map(&map, 4).is_err());
    }
}
