//! `.gsb` container: header, quantization steps, entropy table, decoder weights, coded
//! payload and a CRC32 trailer. Little-endian throughout.

use crate::codec::entropy::{ChannelModel, EntropyModel};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GSSH";
pub const VERSION: u16 = 1;
/// magic, version, kind, stage, anchor count, K, D, ε
pub const HEADER_BYTES: usize = 4 + 2 + 1 + 4 + 4 + 1 + 1 + 4;
pub const CHANNEL_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadKind {
    FullMap,
    Increment,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::FullMap => "full map",
            PayloadKind::Increment => "increment",
        }
    }

    fn code(self) -> u8 {
        match self {
            PayloadKind::FullMap => 0,
            PayloadKind::Increment => 1,
        }
    }
}

/// Transmitted parameters of one Laplace channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub lo: i32,
    pub hi: i32,
    pub mu: i32,
    pub b: f32,
}

impl ChannelParams {
    pub fn from_model(m: &ChannelModel) -> Result<Self> {
        let (mu, b) = m
            .laplace
            .ok_or_else(|| Error::InvalidInput("only Laplace channels can be serialized".into()))?;
        let to_i32 = |v: i64| i32::try_from(v).map_err(|_| Error::AlphabetTooLarge(usize::MAX));
        Ok(Self {
            lo: to_i32(m.lo)?,
            hi: to_i32(m.hi())?,
            mu: to_i32(mu)?,
            b,
        })
    }

    pub fn to_model(self) -> Result<ChannelModel> {
        ChannelModel::laplace(self.lo as i64, self.hi as i64, self.mu as i64, self.b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub kind: PayloadKind,
    pub stage_id: u32,
    pub anchor_count: u32,
    pub k: u8,
    pub d: u8,
    pub epsilon: f32,
    pub steps: Vec<f32>,
    pub channels: Vec<ChannelParams>,
    /// Attribute dimension of the decoder; 0 when the stream carries no anchors.
    pub attr_dim: u16,
    pub mean: Vec<f32>,
    /// Column-major `attr_dim × d`.
    pub basis: Vec<f32>,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn entropy_model(&self, layout: Vec<usize>) -> Result<EntropyModel> {
        let channels = self.channels.iter().map(|c| c.to_model()).collect::<Result<Vec<_>>>()?;
        EntropyModel::new(channels, layout)
    }

    /// Serialized size: header, tables, weights, payload and CRC.
    pub fn size_bytes(&self) -> usize {
        HEADER_BYTES
            + 2
            + 4 * self.steps.len()
            + 2
            + CHANNEL_BYTES * self.channels.len()
            + 2
            + 4 * (self.mean.len() + self.basis.len())
            + 4
            + self.payload.len()
            + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.stage_id.to_le_bytes());
        out.extend_from_slice(&self.anchor_count.to_le_bytes());
        out.push(self.k);
        out.push(self.d);
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&(self.steps.len() as u16).to_le_bytes());
        for s in &self.steps {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.channels.len() as u16).to_le_bytes());
        for c in &self.channels {
            out.extend_from_slice(&c.lo.to_le_bytes());
            out.extend_from_slice(&c.hi.to_le_bytes());
            out.extend_from_slice(&c.mu.to_le_bytes());
            out.extend_from_slice(&c.b.to_le_bytes());
        }
        out.extend_from_slice(&self.attr_dim.to_le_bytes());
        for v in self.mean.iter().chain(&self.basis) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates a stream. Magic, version and CRC are checked before any field
    /// is interpreted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 {
            return Err(Error::Truncated);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes.len() < HEADER_BYTES + 4 {
            return Err(Error::Truncated);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::CrcMismatch { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 6 };
        let kind = match r.u8()? {
            0 => PayloadKind::FullMap,
            1 => PayloadKind::Increment,
            other => return Err(Error::CorruptPayload(format!("unknown payload kind {other}"))),
        };
        let stage_id = r.u32()?;
        let anchor_count = r.u32()?;
        let k = r.u8()?;
        let d = r.u8()?;
        let epsilon = r.f32()?;
        let n_steps = r.u16()? as usize;
        let steps = (0..n_steps).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let n_channels = r.u16()? as usize;
        let channels = (0..n_channels)
            .map(|_| {
                Ok(ChannelParams {
                    lo: r.i32()?,
                    hi: r.i32()?,
                    mu: r.i32()?,
                    b: r.f32()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let attr_dim = r.u16()?;
        let mean = (0..attr_dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let basis = (0..attr_dim as usize * d as usize).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let payload_len = r.u32()? as usize;
        let payload = r.take(payload_len)?.to_vec();
        if r.pos != body.len() {
            return Err(Error::CorruptPayload(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            kind,
            stage_id,
            anchor_count,
            k,
            d,
            epsilon,
            steps,
            channels,
            attr_dim,
            mean,
            basis,
            payload,
        })
    }

    pub fn expect_kind(&self, kind: PayloadKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind.name(),
                found: self.kind.name(),
            });
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.buf.len() {
            return Err(Error::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            kind: PayloadKind::Increment,
            stage_id: 3,
            anchor_count: 2,
            k: 1,
            d: 1,
            epsilon: 0.03,
            steps: vec![0.5, 0.25],
            channels: vec![ChannelParams {
                lo: -3,
                hi: 4,
                mu: 0,
                b: 1.5,
            }],
            attr_dim: 2,
            mean: vec![0.1, 0.2],
            basis: vec![1.0, 0.0],
            payload: vec![1, 2, 3],
        }
    }

    #[test]
    fn round_trip_and_size() {
        let b = sample();
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), b.size_bytes());
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), b);
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::UnsupportedVersion(9))));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 0x10;
        assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::CrcMismatch { .. })));
        assert!(Bitstream::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(matches!(Bitstream::from_bytes(&bytes[..3]), Err(Error::Truncated)));
        assert!(sample().expect_kind(PayloadKind::FullMap).is_err());
    }
}
