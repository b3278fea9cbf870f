//! Length-prefixed wire protocol with server and client state machines.
//!
//! Frame layout: `[len u32][type u8][stage u32][payload]`, little-endian, where `len`
//! counts the type, stage and payload bytes. A stage of `u32::MAX` means "none".
//!
//! A fresh client receives the stage-0 base map as `MAP_FULL` and then one `MAP_INC`
//! per later stage. A `MAP_INC` payload carries the increment for the previously
//! published anchors followed by a full-map segment for the anchors added at that stage:
//! `[u32 len][increment stream][u32 len][segment stream or nothing]`.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, RwLock};
use std::thread;

use log::{debug, warn};

use crate::codec::bitstream::{Bitstream, PayloadKind};
use crate::codec::{decode_full_map, encode_full_map, ATTRS_PER_GAUSSIAN, FULL_EMBED_DIM};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::increment::{apply_increment, compute_increment, decode_increment, encode_increment};
use crate::model::{pose_distance, quat_from_wxyz, quat_to_wxyz, CameraPose, FrameRgbd, GaussianMap, Intrinsics, Vec3};

pub const MAX_FRAME_BYTES: u32 = 256 << 20;
pub const FRAME_HEADER_BYTES: u32 = 5;
pub const NO_STAGE: u32 = u32::MAX;
pub const DESCRIPTOR_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    Register = 2,
    RegisterOk = 3,
    MapFull = 4,
    MapInc = 5,
    Ack = 6,
    Error = 7,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Self::Hello,
            2 => Self::Register,
            3 => Self::RegisterOk,
            4 => Self::MapFull,
            5 => Self::MapInc,
            6 => Self::Ack,
            7 => Self::Error,
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageType,
    pub stage: Option<u32>,
    pub payload: Vec<u8>,
}

/// Error codes carried in the first byte of an `ERROR` payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    FutureStage = 1,
    BadRequest = 2,
    Internal = 3,
}

impl Message {
    pub fn new(kind: MessageType, stage: Option<u32>, payload: Vec<u8>) -> Self {
        Self { kind, stage, payload }
    }

    pub fn hello(stage: Option<u32>) -> Self {
        Self::new(MessageType::Hello, stage, Vec::new())
    }

    pub fn error(code: ErrorCode, text: &str) -> Self {
        let mut p = vec![code as u8];
        p.extend_from_slice(text.as_bytes());
        Self::new(MessageType::Error, None, p)
    }

    pub fn frame_len(&self) -> usize {
        4 + FRAME_HEADER_BYTES as usize + self.payload.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let len = FRAME_HEADER_BYTES as usize + self.payload.len();
        if len > MAX_FRAME_BYTES as usize {
            return Err(Error::Protocol(format!("frame of {len} bytes exceeds the limit")));
        }
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.stage.unwrap_or(NO_STAGE).to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses exactly one frame.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let m = read_message(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Protocol(format!("{} bytes after the frame", r.len())));
        }
        Ok(m)
    }

    /// `(code, text)` of an `ERROR` message.
    pub fn error_text(&self) -> Option<(u8, String)> {
        if self.kind != MessageType::Error || self.payload.is_empty() {
            return None;
        }
        Some((self.payload[0], String::from_utf8_lossy(&self.payload[1..]).into_owned()))
    }
}

pub fn read_message(r: &mut impl Read) -> Result<Message> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(Error::Protocol(format!("length prefix {len} exceeds the limit")));
    }
    if len < FRAME_HEADER_BYTES {
        return Err(Error::Protocol(format!("length prefix {len} is shorter than the header")));
    }
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let kind = MessageType::from_u8(head[0])?;
    let stage = u32::from_le_bytes(head[1..5].try_into().unwrap());
    let mut payload = vec![0u8; (len - FRAME_HEADER_BYTES) as usize];
    r.read_exact(&mut payload)?;
    Ok(Message {
        kind,
        stage: (stage != NO_STAGE).then_some(stage),
        payload,
    })
}

pub fn write_message(w: &mut impl Write, m: &Message) -> Result<()> {
    w.write_all(&m.to_bytes()?)?;
    w.flush()?;
    Ok(())
}

fn put_block(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn take_block<'a>(buf: &mut &'a [u8]) -> Result<&'a [u8]> {
    if buf.len() < 4 {
        return Err(Error::Truncated);
    }
    let n = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if buf.len() < 4 + n {
        return Err(Error::Truncated);
    }
    let b = &buf[4..4 + n];
    *buf = &buf[4 + n..];
    Ok(b)
}

fn split_inc_payload(payload: &[u8]) -> Result<(&[u8], &[u8])> {
    let mut r = payload;
    let inc = take_block(&mut r)?;
    let seg = take_block(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Protocol("trailing bytes in increment payload".into()));
    }
    Ok((inc, seg))
}

/// Embedding dimension of full-map streams for `k` Gaussians per anchor.
pub fn full_embed_dim(k: usize) -> usize {
    FULL_EMBED_DIM.min(ATTRS_PER_GAUSSIAN * k)
}

/// One published stage as every client will reconstruct it.
#[derive(Clone, Debug)]
pub struct PublishedStage {
    pub stage_id: u32,
    pub map: GaussianMap,
    /// `MAP_FULL` for stage 0, `MAP_INC` otherwise.
    pub message: Message,
    /// Bytes sent on the increment path (base stream at stage 0).
    pub increment_bytes: u64,
    /// Bytes of retransmitting the whole stage map as one full-map stream.
    pub full_bytes: u64,
    /// Anchors carried by the increment; the rest arrived in the segment.
    pub seen_anchors: usize,
}

/// Server side: published stages, contributor frames and their registration descriptors.
#[derive(Default)]
pub struct ServerState {
    stages: Vec<PublishedStage>,
    frames: Vec<FrameRgbd>,
    descriptors: Vec<Vec<f64>>,
}

fn decode_segment(seg: &[u8], stage: u32) -> Result<Option<GaussianMap>> {
    if seg.is_empty() {
        return Ok(None);
    }
    let bs = Bitstream::from_bytes(seg)?;
    bs.expect_kind(PayloadKind::FullMap)?;
    if bs.stage_id != stage {
        return Err(Error::Protocol(format!("segment for stage {} inside stage {stage}", bs.stage_id)));
    }
    Ok(Some(decode_full_map(&bs)?))
}

/// Reconstructs the map after a `MAP_INC` payload without touching `prev`.
pub fn apply_inc_payload(prev: &GaussianMap, stage: u32, payload: &[u8]) -> Result<GaussianMap> {
    if stage != prev.stage_id.wrapping_add(1) {
        return Err(Error::OutOfOrderUpdate {
            current: prev.stage_id,
            update: stage,
        });
    }
    let (inc, seg) = split_inc_payload(payload)?;
    let bs = Bitstream::from_bytes(inc)?;
    bs.expect_kind(PayloadKind::Increment)?;
    if bs.stage_id != stage {
        return Err(Error::Protocol(format!("increment for stage {} inside stage {stage}", bs.stage_id)));
    }
    let mut map = apply_increment(prev, &decode_increment(&bs)?)?;
    if map.anchor_count() != prev.anchor_count() {
        return Err(Error::Protocol("increment does not cover the previous anchors".into()));
    }
    if let Some(seg) = decode_segment(seg, stage)? {
        map.append(seg)?;
    }
    Ok(map)
}

impl ServerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_stage(&self) -> Option<u32> {
        self.stages.last().map(|s| s.stage_id)
    }

    pub fn stages(&self) -> &[PublishedStage] {
        &self.stages
    }

    pub fn latest_map(&self) -> Option<&GaussianMap> {
        self.stages.last().map(|s| &s.map)
    }

    /// Codes `target` as the next stage. Stage 0 is sent whole; later stages must keep the
    /// previous stage's anchors as an ordered prefix and are sent as an increment for
    /// those anchors plus a full-map segment for the new ones.
    pub fn publish(&mut self, target: &GaussianMap, embed_step: f64) -> Result<&PublishedStage> {
        let stage = self.stages.len() as u32;
        let mut target = target.clone();
        target.stage_id = stage;
        let d = full_embed_dim(target.gaussians_per_anchor);
        let full = encode_full_map(&target, d, embed_step)?.to_bytes();
        let published = match self.stages.last() {
            None => {
                let map = decode_full_map(&Bitstream::from_bytes(&full)?)?;
                PublishedStage {
                    stage_id: 0,
                    map,
                    increment_bytes: full.len() as u64,
                    full_bytes: full.len() as u64,
                    message: Message::new(MessageType::MapFull, Some(0), full),
                    seen_anchors: 0,
                }
            }
            Some(prev) => {
                let n = prev.map.anchor_count();
                let inc = compute_increment(&target.prefix(n), &prev.map)?;
                let inc_bytes = encode_increment(&inc, embed_step)?.to_bytes();
                let seg_bytes = if target.anchor_count() > n {
                    encode_full_map(&target.suffix(n), d, embed_step)?.to_bytes()
                } else {
                    Vec::new()
                };
                let mut payload = Vec::with_capacity(8 + inc_bytes.len() + seg_bytes.len());
                put_block(&mut payload, &inc_bytes);
                put_block(&mut payload, &seg_bytes);
                let map = apply_inc_payload(&prev.map, stage, &payload)?;
                PublishedStage {
                    stage_id: stage,
                    map,
                    increment_bytes: payload.len() as u64,
                    full_bytes: full.len() as u64,
                    message: Message::new(MessageType::MapInc, Some(stage), payload),
                    seen_anchors: n,
                }
            }
        };
        self.stages.push(published);
        Ok(self.stages.last().unwrap())
    }

    /// Rebuilds the published stages from their messages, in order.
    pub fn from_messages(messages: Vec<Message>) -> Result<Self> {
        let mut s = Self::new();
        let mut client = ClientState::new();
        for m in messages {
            let before = client.map.as_ref().map_or(0, |m| m.anchor_count());
            let full_bytes = m.payload.len() as u64;
            client.apply(&m)?;
            s.stages.push(PublishedStage {
                stage_id: client.stage.unwrap(),
                map: client.map.clone().unwrap(),
                increment_bytes: m.payload.len() as u64,
                full_bytes,
                message: m,
                seen_anchors: before,
            });
        }
        Ok(s)
    }

    pub fn add_frames(&mut self, frames: &[FrameRgbd]) {
        for f in frames {
            self.descriptors.push(image_descriptor(&f.color));
            self.frames.push(f.clone());
        }
    }

    pub fn frames(&self) -> &[FrameRgbd] {
        &self.frames
    }

    /// Response to a client at `client_stage`.
    pub fn serve_update(&self, client_stage: Option<u32>) -> Message {
        let Some(current) = self.current_stage() else {
            return Message::error(ErrorCode::BadRequest, "server has no published stage");
        };
        match client_stage {
            None => self.stages[0].message.clone(),
            Some(s) if s < current => self.stages[s as usize + 1].message.clone(),
            Some(s) if s == current => Message::new(MessageType::Ack, Some(current), Vec::new()),
            Some(s) => Message::error(ErrorCode::FutureStage, &Error::FutureStage { client: s, server: current }.to_string()),
        }
    }

    /// Nearest contributor frame by image descriptor.
    pub fn register_image(&self, query: &RgbImage) -> Result<Registration> {
        if self.frames.is_empty() {
            return Err(Error::InsufficientData("server has no contributor frames".into()));
        }
        let q = image_descriptor(query);
        let mut best = (0, f64::INFINITY);
        for (i, d) in self.descriptors.iter().enumerate() {
            let dist: f64 = d.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist < best.1 {
                best = (i, dist);
            }
        }
        Ok(self.registration(best.0, best.1))
    }

    /// Nearest contributor frame by rotation angle, then translation.
    pub fn register_pose(&self, query: &CameraPose) -> Result<Registration> {
        if self.frames.is_empty() {
            return Err(Error::InsufficientData("server has no contributor frames".into()));
        }
        let mut best = (0, (f64::INFINITY, f64::INFINITY));
        for (i, f) in self.frames.iter().enumerate() {
            let d = pose_distance(query, &f.pose);
            if d.0 < best.1 .0 || (d.0 == best.1 .0 && d.1 < best.1 .1) {
                best = (i, d);
            }
        }
        Ok(self.registration(best.0, best.1 .0))
    }

    fn registration(&self, frame: usize, distance: f64) -> Registration {
        Registration {
            frame_index: frame as u32,
            pose: self.frames[frame].pose,
            segment: 0,
            distance,
        }
    }

    /// In-process request handling; the TCP server wraps exactly this.
    pub fn handle(&self, req: &Message) -> Message {
        match req.kind {
            MessageType::Hello => self.serve_update(req.stage),
            MessageType::Register => match RegisterQuery::from_payload(&req.payload).and_then(|q| match q {
                RegisterQuery::Pose(p) => self.register_pose(&p),
                RegisterQuery::Image(img) => self.register_image(&img),
            }) {
                Ok(r) => Message::new(MessageType::RegisterOk, self.current_stage(), r.to_payload()),
                Err(e) => Message::error(ErrorCode::BadRequest, &e.to_string()),
            },
            other => Message::error(ErrorCode::BadRequest, &format!("unexpected request {other:?}")),
        }
    }
}

/// Mean-pooled 16×16 grayscale descriptor.
pub fn image_descriptor(img: &RgbImage) -> Vec<f64> {
    let g = img.to_gray();
    let (w, h) = (g.width, g.height);
    let mut out = Vec::with_capacity(DESCRIPTOR_SIZE * DESCRIPTOR_SIZE);
    let range = |i: usize, n: usize| {
        let a = i * n / DESCRIPTOR_SIZE;
        let b = ((i + 1) * n / DESCRIPTOR_SIZE).max(a + 1).min(n);
        a.min(n.saturating_sub(1))..b
    };
    for cy in 0..DESCRIPTOR_SIZE {
        for cx in 0..DESCRIPTOR_SIZE {
            let (xs, ys) = (range(cx, w), range(cy, h));
            let mut s = 0.0;
            let mut n = 0.0;
            for y in ys.clone() {
                for x in xs.clone() {
                    s += g.get(x, y);
                    n += 1.0;
                }
            }
            out.push(if n > 0.0 { s / n } else { 0.0 });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub frame_index: u32,
    pub pose: CameraPose,
    /// Map segment to deliver; the whole map is a single segment.
    pub segment: u32,
    pub distance: f64,
}

fn put_pose(out: &mut Vec<u8>, p: &CameraPose) {
    let q = quat_to_wxyz(&p.rotation);
    let k = &p.intrinsics;
    for v in q.iter().chain(p.translation.as_slice()).chain(&[k.fx, k.fy, k.cx, k.cy]) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(k.width as u32).to_le_bytes());
    out.extend_from_slice(&(k.height as u32).to_le_bytes());
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Truncated);
    }
    let (a, b) = buf.split_at(n);
    *buf = b;
    Ok(a)
}

fn take_f64(buf: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(buf, 8)?.try_into().unwrap()))
}

fn take_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

fn take_pose(buf: &mut &[u8]) -> Result<CameraPose> {
    let v: Vec<f64> = (0..11).map(|_| take_f64(buf)).collect::<Result<_>>()?;
    let (w, h) = (take_u32(buf)?, take_u32(buf)?);
    let k = Intrinsics {
        fx: v[7],
        fy: v[8],
        cx: v[9],
        cy: v[10],
        width: w as usize,
        height: h as usize,
    };
    let p = CameraPose::new(quat_from_wxyz([v[0], v[1], v[2], v[3]]), Vec3::new(v[4], v[5], v[6]), k);
    p.check()?;
    Ok(p)
}

impl Registration {
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.frame_index.to_le_bytes());
        out.extend_from_slice(&self.segment.to_le_bytes());
        out.extend_from_slice(&self.distance.to_le_bytes());
        put_pose(&mut out, &self.pose);
        out
    }

    pub fn from_payload(mut p: &[u8]) -> Result<Self> {
        let frame_index = take_u32(&mut p)?;
        let segment = take_u32(&mut p)?;
        let distance = take_f64(&mut p)?;
        let pose = take_pose(&mut p)?;
        Ok(Self {
            frame_index,
            pose,
            segment,
            distance,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegisterQuery {
    Pose(CameraPose),
    Image(RgbImage),
}

impl RegisterQuery {
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            RegisterQuery::Pose(p) => {
                out.push(0);
                put_pose(&mut out, p);
            }
            RegisterQuery::Image(img) => {
                out.push(1);
                out.extend_from_slice(&(img.width as u32).to_le_bytes());
                out.extend_from_slice(&(img.height as u32).to_le_bytes());
                for px in &img.data {
                    for c in px {
                        out.extend_from_slice(&(*c as f32).to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_payload(mut p: &[u8]) -> Result<Self> {
        let tag = take(&mut p, 1)?[0];
        let q = match tag {
            0 => RegisterQuery::Pose(take_pose(&mut p)?),
            1 => {
                let (w, h) = (take_u32(&mut p)? as usize, take_u32(&mut p)? as usize);
                let n = w.checked_mul(h).filter(|n| n.checked_mul(12) == Some(p.len())).ok_or(Error::Truncated)?;
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut c = [0.0; 3];
                    for v in &mut c {
                        *v = f32::from_le_bytes(take(&mut p, 4)?.try_into().unwrap()) as f64;
                    }
                    data.push(c);
                }
                RegisterQuery::Image(RgbImage { width: w, height: h, data })
            }
            other => return Err(Error::Protocol(format!("unknown registration query {other}"))),
        };
        if !p.is_empty() {
            return Err(Error::Protocol("trailing bytes in registration query".into()));
        }
        Ok(q)
    }
}

/// Client cache. Every update is validated completely before the cache changes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientState {
    pub map: Option<GaussianMap>,
    pub stage: Option<u32>,
}

impl ClientState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, msg: &Message) -> Result<()> {
        match msg.kind {
            MessageType::MapFull => {
                let bs = Bitstream::from_bytes(&msg.payload)?;
                bs.expect_kind(PayloadKind::FullMap)?;
                let map = decode_full_map(&bs)?;
                if Some(map.stage_id) != msg.stage {
                    return Err(Error::Protocol(format!("MAP_FULL header stage {:?} but stream stage {}", msg.stage, map.stage_id)));
                }
                self.stage = Some(map.stage_id);
                self.map = Some(map);
                Ok(())
            }
            MessageType::MapInc => {
                let (Some(prev), Some(stage)) = (self.map.as_ref(), msg.stage) else {
                    return Err(Error::OutOfOrderUpdate {
                        current: self.stage.unwrap_or(NO_STAGE),
                        update: msg.stage.unwrap_or(NO_STAGE),
                    });
                };
                let map = apply_inc_payload(prev, stage, &msg.payload)?;
                self.stage = Some(stage);
                self.map = Some(map);
                Ok(())
            }
            MessageType::Ack => Ok(()),
            MessageType::Error => {
                let (code, text) = msg.error_text().unwrap_or((0, String::new()));
                Err(Error::Protocol(format!("server error {code}: {text}")))
            }
            other => Err(Error::Protocol(format!("client cannot apply {other:?}"))),
        }
    }

    /// Serialized cache, for byte-level comparison with the server.
    pub fn canonical_bytes(&self) -> Option<Vec<u8>> {
        self.map.as_ref().map(GaussianMap::canonical_bytes)
    }
}

/// Pulls updates through `exchange` until the server acknowledges or `until` is reached.
pub fn catch_up(client: &mut ClientState, until: Option<u32>, mut exchange: impl FnMut(&Message) -> Result<Message>) -> Result<usize> {
    let mut applied = 0;
    loop {
        if until.is_some() && client.stage == until {
            return Ok(applied);
        }
        let resp = exchange(&Message::hello(client.stage))?;
        if resp.kind == MessageType::Ack {
            return Ok(applied);
        }
        client.apply(&resp)?;
        applied += 1;
    }
}

/// Accepts connections, one thread each, until `max_connections` have been accepted.
pub fn serve_loop(listener: TcpListener, server: Arc<RwLock<ServerState>>, max_connections: Option<usize>) -> Result<()> {
    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let server = Arc::clone(&server);
        handles.push(thread::spawn(move || {
            if let Err(e) = handle_connection(stream, &server) {
                warn!("connection closed: {e}");
            }
        }));
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn handle_connection(mut stream: TcpStream, server: &RwLock<ServerState>) -> Result<()> {
    loop {
        let req = match read_message(&mut stream) {
            Ok(m) => m,
            Err(Error::Io(e)) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e @ Error::Protocol(_)) => {
                let _ = write_message(&mut stream, &Message::error(ErrorCode::BadRequest, &e.to_string()));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        debug!("request {:?} stage {:?}", req.kind, req.stage);
        let resp = server.read().map_err(|_| Error::Protocol("server state poisoned".into()))?.handle(&req);
        write_message(&mut stream, &resp)?;
    }
}

/// Connects to `addr` and catches a fresh client up to the server's latest stage, or to
/// `until` if given.
pub fn fetch(addr: impl ToSocketAddrs, until: Option<u32>) -> Result<ClientState> {
    let mut stream = TcpStream::connect(addr)?;
    let mut client = ClientState::new();
    catch_up(&mut client, until, |req| {
        write_message(&mut stream, req)?;
        read_message(&mut stream)
    })?;
    Ok(client)
}

/// Sends one registration query over a fresh connection.
pub fn register_remote(addr: impl ToSocketAddrs, query: &RegisterQuery) -> Result<Registration> {
    let mut stream = TcpStream::connect(addr)?;
    write_message(&mut stream, &Message::new(MessageType::Register, None, query.to_payload()))?;
    let resp = read_message(&mut stream)?;
    match resp.kind {
        MessageType::RegisterOk => Registration::from_payload(&resp.payload),
        _ => Err(Error::Protocol(resp.error_text().map_or_else(|| format!("unexpected {:?}", resp.kind), |(_, t)| t))),
    }
}
