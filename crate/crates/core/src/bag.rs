//! Bag-style binary recording: one file per temperature step.
//!
//! Layout (all little-endian):
//!
//! ```text
//! [magic "ARLB"][version u16][cycle u32][step u16][T_set f32][t0 f64]
//! [channel_count u16] ([name_len u8][name][type u8])*
//! ([chan u16][t f64][len u32][payload])*
//! ```
//!
//! Payload type tags: 0 frame, 1 telemetry, 2 thermal, 3 stage,
//! 4 command. Frames store intensity as u16 (12 bit in 16) and distance
//! as f32 meters with NaN sentinel, row-major. The writer hashes every
//! byte as it goes, so the content hash costs no second pass.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lidar::{Frame, OperatingData};

pub const MAGIC: [u8; 4] = *b"ARLB";
pub const VERSION: u16 = 1;
/// Sanity cap on a single record payload; malformed input cannot demand
/// unbounded allocation.
pub const MAX_RECORD_LEN: u32 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum BagError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:02x?}, not a bag file")]
    BadMagic([u8; 4]),
    #[error("unsupported bag version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("record at byte offset {offset} references unknown channel {channel}")]
    UnknownChannel { offset: u64, channel: u16 },
    #[error("record at byte offset {offset} declares length {len} beyond the cap")]
    LengthOverflow { offset: u64, len: u32 },
    #[error("malformed {what} payload at byte offset {offset}")]
    Malformed { offset: u64, what: &'static str },
    #[error("payload type {got} does not match channel '{channel}' type {want}")]
    TypeMismatch {
        channel: String,
        want: u8,
        got: u8,
    },
    #[error("timestamp regression on channel {channel}: {t} after {last}")]
    TimestampRegression { channel: u16, t: f64, last: f64 },
    #[error("duplicate channel name '{0}'")]
    DuplicateChannel(String),
}

/// Channel payload type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ChannelType {
    Frame = 0,
    Telemetry = 1,
    Thermal = 2,
    Stage = 3,
    Command = 4,
}

impl ChannelType {
    fn from_u8(x: u8) -> Option<Self> {
        Some(match x {
            0 => ChannelType::Frame,
            1 => ChannelType::Telemetry,
            2 => ChannelType::Thermal,
            3 => ChannelType::Stage,
            4 => ChannelType::Command,
            _ => return None,
        })
    }
}

/// Bag file header.
#[derive(Debug, Clone, PartialEq)]
pub struct BagHeader {
    pub version: u16,
    pub cycle: u32,
    pub step_index: u16,
    pub t_set_c: f32,
    /// Virtual time at which the recording was created.
    pub created_t: f64,
    /// Channel table: index order is the channel id.
    pub channels: Vec<(String, ChannelType)>,
}

impl BagHeader {
    pub fn channel_id(&self, name: &str) -> Option<u16> {
        self.channels
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| i as u16)
    }
}

/// Frame payload as stored in a bag: detection data only, no simulation
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub dut_id: u8,
    pub seq: u32,
    pub width: u16,
    pub height: u16,
    pub intensity: Vec<u16>,
    pub distance: Vec<f32>,
}

impl From<&Frame> for FrameRecord {
    fn from(f: &Frame) -> Self {
        Self {
            dut_id: f.dut_id,
            seq: f.seq,
            width: f.width,
            height: f.height,
            intensity: f.intensity.clone(),
            distance: f.distance.clone(),
        }
    }
}

impl FrameRecord {
    pub fn bits_eq(&self, other: &FrameRecord) -> bool {
        self.dut_id == other.dut_id
            && self.seq == other.seq
            && self.width == other.width
            && self.height == other.height
            && self.intensity == other.intensity
            && self.distance.len() == other.distance.len()
            && self
                .distance
                .iter()
                .zip(&other.distance)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub dut_id: u8,
    pub data: OperatingData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub position_index: u16,
    pub phi_cmd_deg: f64,
    pub phi_actual_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalRecord {
    pub t_set: f64,
    pub t_oil: f64,
    pub thermocouples: [f64; 5],
}

/// Typed record payload.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordBody {
    Frame(FrameRecord),
    Telemetry(TelemetryRecord),
    Thermal(ThermalRecord),
    Stage(StageRecord),
}

impl RecordBody {
    pub fn channel_type(&self) -> ChannelType {
        match self {
            RecordBody::Frame(_) => ChannelType::Frame,
            RecordBody::Telemetry(_) => ChannelType::Telemetry,
            RecordBody::Thermal(_) => ChannelType::Thermal,
            RecordBody::Stage(_) => ChannelType::Stage,
        }
    }
}

/// One decoded record.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub channel: u16,
    pub t: f64,
    pub body: RecordBody,
}

// --- byte helpers -------------------------------------------------------

fn put_u16(buf: &mut Vec<u8>, x: u16) {
    buf.extend_from_slice(&x.to_le_bytes());
}
fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}
fn put_f32(buf: &mut Vec<u8>, x: f32) {
    buf.extend_from_slice(&x.to_le_bytes());
}
fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.data.len() {
            return None;
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_le_bytes([s[0], s[1]]))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }
    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|s| f32::from_le_bytes(s.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }
}

fn encode_body(body: &RecordBody) -> Vec<u8> {
    let mut buf = Vec::new();
    match body {
        RecordBody::Frame(f) => {
            buf.reserve(9 + f.intensity.len() * 2 + f.distance.len() * 4);
            buf.push(f.dut_id);
            put_u32(&mut buf, f.seq);
            put_u16(&mut buf, f.width);
            put_u16(&mut buf, f.height);
            for &i in &f.intensity {
                put_u16(&mut buf, i);
            }
            for &d in &f.distance {
                put_f32(&mut buf, d);
            }
        }
        RecordBody::Telemetry(t) => {
            buf.push(t.dut_id);
            for x in [
                t.data.t_fpga_c,
                t.data.t_tof_c,
                t.data.t_laser_c,
                t.data.v_tecn_v,
                t.data.v_tecp_v,
                t.data.i_tec_a,
                t.data.v_laser_v,
                t.data.i_laser_a,
                t.data.t_pump_s,
            ] {
                put_f64(&mut buf, x);
            }
            buf.push(t.data.rails_v.len() as u8);
            for (name, v) in &t.data.rails_v {
                buf.push(name.len() as u8);
                buf.extend_from_slice(name.as_bytes());
                put_f64(&mut buf, *v);
            }
        }
        RecordBody::Thermal(t) => {
            put_f64(&mut buf, t.t_set);
            put_f64(&mut buf, t.t_oil);
            for x in t.thermocouples {
                put_f64(&mut buf, x);
            }
        }
        RecordBody::Stage(s) => {
            put_u16(&mut buf, s.position_index);
            put_f64(&mut buf, s.phi_cmd_deg);
            put_f64(&mut buf, s.phi_actual_deg);
        }
    }
    buf
}

fn decode_body(ty: ChannelType, data: &[u8], offset: u64) -> Result<RecordBody, BagError> {
    let mut c = Cursor::new(data);
    let malformed = |what| BagError::Malformed { offset, what };
    let body = match ty {
        ChannelType::Frame => {
            let dut_id = c.u8().ok_or(malformed("frame"))?;
            let seq = c.u32().ok_or(malformed("frame"))?;
            let width = c.u16().ok_or(malformed("frame"))?;
            let height = c.u16().ok_or(malformed("frame"))?;
            let n = width as usize * height as usize;
            let mut intensity = Vec::with_capacity(n);
            for _ in 0..n {
                intensity.push(c.u16().ok_or(malformed("frame"))?);
            }
            let mut distance = Vec::with_capacity(n);
            for _ in 0..n {
                distance.push(c.f32().ok_or(malformed("frame"))?);
            }
            RecordBody::Frame(FrameRecord {
                dut_id,
                seq,
                width,
                height,
                intensity,
                distance,
            })
        }
        ChannelType::Telemetry => {
            let dut_id = c.u8().ok_or(malformed("telemetry"))?;
            let mut vals = [0.0f64; 9];
            for v in vals.iter_mut() {
                *v = c.f64().ok_or(malformed("telemetry"))?;
            }
            let n_rails = c.u8().ok_or(malformed("telemetry"))?;
            let mut rails_v = BTreeMap::new();
            for _ in 0..n_rails {
                let len = c.u8().ok_or(malformed("telemetry"))? as usize;
                let name = std::str::from_utf8(c.take(len).ok_or(malformed("telemetry"))?)
                    .map_err(|_| malformed("telemetry"))?
                    .to_string();
                let v = c.f64().ok_or(malformed("telemetry"))?;
                rails_v.insert(name, v);
            }
            RecordBody::Telemetry(TelemetryRecord {
                dut_id,
                data: OperatingData {
                    t_fpga_c: vals[0],
                    t_tof_c: vals[1],
                    t_laser_c: vals[2],
                    v_tecn_v: vals[3],
                    v_tecp_v: vals[4],
                    i_tec_a: vals[5],
                    v_laser_v: vals[6],
                    i_laser_a: vals[7],
                    t_pump_s: vals[8],
                    rails_v,
                },
            })
        }
        ChannelType::Thermal => {
            let t_set = c.f64().ok_or(malformed("thermal"))?;
            let t_oil = c.f64().ok_or(malformed("thermal"))?;
            let mut tc = [0.0f64; 5];
            for v in tc.iter_mut() {
                *v = c.f64().ok_or(malformed("thermal"))?;
            }
            RecordBody::Thermal(ThermalRecord {
                t_set,
                t_oil,
                thermocouples: tc,
            })
        }
        ChannelType::Stage => {
            let position_index = c.u16().ok_or(malformed("stage"))?;
            let phi_cmd_deg = c.f64().ok_or(malformed("stage"))?;
            let phi_actual_deg = c.f64().ok_or(malformed("stage"))?;
            RecordBody::Stage(StageRecord {
                position_index,
                phi_cmd_deg,
                phi_actual_deg,
            })
        }
        ChannelType::Command => return Err(malformed("command")),
    };
    if c.pos != data.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(body)
}

// --- writer ---------------------------------------------------------------

/// Streams typed records into a bag file, hashing as it writes.
pub struct BagWriter {
    out: BufWriter<File>,
    hasher: Sha256,
    header: BagHeader,
    last_t: Vec<Option<f64>>,
    offset: u64,
}

impl BagWriter {
    pub fn create(path: &Path, header: BagHeader) -> Result<Self, BagError> {
        for (i, (name, _)) in header.channels.iter().enumerate() {
            if header.channels[..i].iter().any(|(n, _)| n == name) {
                return Err(BagError::DuplicateChannel(name.clone()));
            }
        }
        let file = File::create(path)?;
        let mut w = Self {
            out: BufWriter::new(file),
            hasher: Sha256::new(),
            last_t: vec![None; header.channels.len()],
            header,
            offset: 0,
        };
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        put_u16(&mut buf, w.header.version);
        put_u32(&mut buf, w.header.cycle);
        put_u16(&mut buf, w.header.step_index);
        put_f32(&mut buf, w.header.t_set_c);
        put_f64(&mut buf, w.header.created_t);
        put_u16(&mut buf, w.header.channels.len() as u16);
        for (name, ty) in &w.header.channels {
            buf.push(name.len() as u8);
            buf.extend_from_slice(name.as_bytes());
            buf.push(*ty as u8);
        }
        w.write_bytes(&buf)?;
        Ok(w)
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<(), BagError> {
        self.out.write_all(bytes)?;
        self.hasher.update(bytes);
        self.offset += bytes.len() as u64;
        Ok(())
    }

    pub fn write_record(&mut self, channel: u16, t: f64, body: &RecordBody) -> Result<(), BagError> {
        let (name, ty) = self
            .header
            .channels
            .get(channel as usize)
            .ok_or(BagError::UnknownChannel {
                offset: self.offset,
                channel,
            })?;
        if body.channel_type() != *ty {
            return Err(BagError::TypeMismatch {
                channel: name.clone(),
                want: *ty as u8,
                got: body.channel_type() as u8,
            });
        }
        if let Some(last) = self.last_t[channel as usize] {
            if t < last {
                return Err(BagError::TimestampRegression { channel, t, last });
            }
        }
        self.last_t[channel as usize] = Some(t);

        let payload = encode_body(body);
        let mut head = Vec::with_capacity(14);
        put_u16(&mut head, channel);
        put_f64(&mut head, t);
        put_u32(&mut head, payload.len() as u32);
        self.write_bytes(&head)?;
        self.write_bytes(&payload)?;
        Ok(())
    }

    /// Flushes, fsyncs, and returns the hex content hash of the file.
    pub fn finish(mut self) -> Result<String, BagError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(hex(&self.hasher.finalize()))
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Hex sha256 of any file.
pub fn sha256_file(path: &Path) -> Result<String, BagError> {
    let mut f = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

// --- reader ---------------------------------------------------------------

/// Streaming bag reader; records decode one at a time.
pub struct BagReader {
    input: BufReader<File>,
    pub header: BagHeader,
    offset: u64,
}

impl BagReader {
    pub fn open(path: &Path) -> Result<Self, BagError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut offset = 0u64;

        let mut magic = [0u8; 4];
        read_exact_at(&mut input, &mut magic, &mut offset)?;
        if magic != MAGIC {
            return Err(BagError::BadMagic(magic));
        }
        let version = read_u16(&mut input, &mut offset)?;
        if version != VERSION {
            return Err(BagError::UnsupportedVersion(version));
        }
        let cycle = read_u32(&mut input, &mut offset)?;
        let step_index = read_u16(&mut input, &mut offset)?;
        let t_set_c = read_f32(&mut input, &mut offset)?;
        let created_t = read_f64(&mut input, &mut offset)?;
        let n_channels = read_u16(&mut input, &mut offset)?;
        let mut channels = Vec::with_capacity(n_channels as usize);
        for _ in 0..n_channels {
            let mut len = [0u8; 1];
            read_exact_at(&mut input, &mut len, &mut offset)?;
            let mut name = vec![0u8; len[0] as usize];
            read_exact_at(&mut input, &mut name, &mut offset)?;
            let mut ty = [0u8; 1];
            read_exact_at(&mut input, &mut ty, &mut offset)?;
            let ty = ChannelType::from_u8(ty[0]).ok_or(BagError::Malformed {
                offset,
                what: "channel type",
            })?;
            let name = String::from_utf8(name).map_err(|_| BagError::Malformed {
                offset,
                what: "channel name",
            })?;
            channels.push((name, ty));
        }

        Ok(Self {
            input,
            header: BagHeader {
                version,
                cycle,
                step_index,
                t_set_c,
                created_t,
                channels,
            },
            offset,
        })
    }

    /// Reads the next record; `None` at a clean end of file.
    pub fn next_record(&mut self) -> Option<Result<Record, BagError>> {
        let record_offset = self.offset;
        let mut head = [0u8; 14];
        match read_fully(&mut self.input, &mut head) {
            Ok(0) => return None,
            Ok(n) if n < head.len() => {
                return Some(Err(BagError::Truncated { offset: record_offset }))
            }
            Ok(_) => {}
            Err(e) => return Some(Err(e.into())),
        }
        self.offset += head.len() as u64;
        let channel = u16::from_le_bytes([head[0], head[1]]);
        let t = f64::from_le_bytes(head[2..10].try_into().unwrap());
        let len = u32::from_le_bytes(head[10..14].try_into().unwrap());
        if len > MAX_RECORD_LEN {
            return Some(Err(BagError::LengthOverflow {
                offset: record_offset,
                len,
            }));
        }
        let ty = match self.header.channels.get(channel as usize) {
            Some((_, ty)) => *ty,
            None => {
                return Some(Err(BagError::UnknownChannel {
                    offset: record_offset,
                    channel,
                }))
            }
        };
        let mut payload = vec![0u8; len as usize];
        match read_fully(&mut self.input, &mut payload) {
            Ok(n) if n < payload.len() => {
                return Some(Err(BagError::Truncated { offset: record_offset }))
            }
            Ok(_) => {}
            Err(e) => return Some(Err(e.into())),
        }
        self.offset += len as u64;
        Some(decode_body(ty, &payload, record_offset).map(|body| Record { channel, t, body }))
    }

    /// Iterator over the remaining records.
    pub fn records(self) -> BagRecords {
        BagRecords { reader: self }
    }
}

pub struct BagRecords {
    reader: BagReader,
}

impl BagRecords {
    pub fn header(&self) -> &BagHeader {
        &self.reader.header
    }
}

impl Iterator for BagRecords {
    type Item = Result<Record, BagError>;
    fn next(&mut self) -> Option<Self::Item> {
        self.reader.next_record()
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<(), BagError> {
    let n = read_fully(r, buf)?;
    if n < buf.len() {
        return Err(BagError::Truncated { offset: *offset });
    }
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R, offset: &mut u64) -> Result<u16, BagError> {
    let mut b = [0u8; 2];
    read_exact_at(r, &mut b, offset)?;
    Ok(u16::from_le_bytes(b))
}
fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32, BagError> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, offset)?;
    Ok(u32::from_le_bytes(b))
}
fn read_f32<R: Read>(r: &mut R, offset: &mut u64) -> Result<f32, BagError> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, offset)?;
    Ok(f32::from_le_bytes(b))
}
fn read_f64<R: Read>(r: &mut R, offset: &mut u64) -> Result<f64, BagError> {
    let mut b = [0u8; 8];
    read_exact_at(r, &mut b, offset)?;
    Ok(f64::from_le_bytes(b))
}

// --- CSV export -------------------------------------------------------------

/// One-way CSV export, one file per channel, named `<stem>.<channel>.csv`.
///
/// Frame channels export per-record summaries (full per-pixel data stays
/// in the bag); scalar channels export every field.
pub fn export_csv(bag_path: &Path, out_dir: &Path) -> Result<Vec<std::path::PathBuf>, BagError> {
    let reader = BagReader::open(bag_path)?;
    let header = reader.header.clone();
    let stem = bag_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "bag".into());
    std::fs::create_dir_all(out_dir)?;

    let mut files: Vec<BufWriter<File>> = Vec::new();
    let mut paths = Vec::new();
    for (name, ty) in &header.channels {
        let fname = format!("{stem}.{}.csv", name.replace('/', "_"));
        let path = out_dir.join(fname);
        let mut f = BufWriter::new(File::create(&path)?);
        match ty {
            ChannelType::Frame => writeln!(f, "t,dut_id,seq,valid_px,mean_intensity,mean_distance")?,
            ChannelType::Telemetry => writeln!(
                f,
                "t,dut_id,t_fpga_c,t_tof_c,t_laser_c,v_tecn_v,v_tecp_v,i_tec_a,v_laser_v,i_laser_a,t_pump_s"
            )?,
            ChannelType::Thermal => writeln!(f, "t,t_set,t_oil,T0,T1,T2,T3,T4")?,
            ChannelType::Stage => writeln!(f, "t,position_index,phi_cmd_deg,phi_actual_deg")?,
            ChannelType::Command => writeln!(f, "t")?,
        }
        files.push(f);
        paths.push(path);
    }

    for rec in reader.records() {
        let rec = rec?;
        let f = &mut files[rec.channel as usize];
        match &rec.body {
            RecordBody::Frame(fr) => {
                let mut sum_i = 0.0;
                let mut sum_d = 0.0;
                let mut n = 0usize;
                for (i, d) in fr.intensity.iter().zip(&fr.distance) {
                    if d.is_finite() {
                        sum_i += *i as f64;
                        sum_d += *d as f64;
                        n += 1;
                    }
                }
                let (mi, md) = if n > 0 {
                    (sum_i / n as f64, sum_d / n as f64)
                } else {
                    (0.0, f64::NAN)
                };
                writeln!(f, "{},{},{},{},{},{}", rec.t, fr.dut_id, fr.seq, n, mi, md)?;
            }
            RecordBody::Telemetry(t) => {
                let d = &t.data;
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    rec.t,
                    t.dut_id,
                    d.t_fpga_c,
                    d.t_tof_c,
                    d.t_laser_c,
                    d.v_tecn_v,
                    d.v_tecp_v,
                    d.i_tec_a,
                    d.v_laser_v,
                    d.i_laser_a,
                    d.t_pump_s
                )?;
            }
            RecordBody::Thermal(t) => {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    rec.t,
                    t.t_set,
                    t.t_oil,
                    t.thermocouples[0],
                    t.thermocouples[1],
                    t.thermocouples[2],
                    t.thermocouples[3],
                    t.thermocouples[4]
                )?;
            }
            RecordBody::Stage(s) => {
                writeln!(
                    f,
                    "{},{},{},{}",
                    rec.t, s.position_index, s.phi_cmd_deg, s.phi_actual_deg
                )?;
            }
        }
    }
    for mut f in files {
        f.flush()?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn test_header() -> BagHeader {
        BagHeader {
            version: VERSION,
            cycle: 3,
            step_index: 7,
            t_set_c: 45.0,
            created_t: 1234.5,
            channels: vec![
                ("dut0/frame".into(), ChannelType::Frame),
                ("stage/actual".into(), ChannelType::Stage),
                ("thermal/state".into(), ChannelType::Thermal),
            ],
        }
    }

    fn small_frame(seq: u32) -> FrameRecord {
        FrameRecord {
            dut_id: 0,
            seq,
            width: 4,
            height: 2,
            intensity: vec![0, 10, 4095, 7, 1, 2, 3, 4],
            distance: vec![1.1, f32::NAN, 2.5, 0.9, 1.0, 1.0, 25.0, f32::NAN],
        }
    }

    #[test]
    fn header_only_bag_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.arlb");
        let w = BagWriter::create(&path, test_header()).unwrap();
        let hash = w.finish().unwrap();
        assert_eq!(hash.len(), 64);

        let r = BagReader::open(&path).unwrap();
        assert_eq!(r.header, test_header());
        let records: Vec<_> = r.records().collect();
        assert!(records.is_empty());
    }

    #[test]
    fn write_read_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("roundtrip.arlb");
        let mut w = BagWriter::create(&path, test_header()).unwrap();
        w.write_record(0, 1.0, &RecordBody::Frame(small_frame(1))).unwrap();
        w.write_record(
            1,
            1.5,
            &RecordBody::Stage(StageRecord {
                position_index: 12,
                phi_cmd_deg: -60.0 + 12.0 * 0.9375,
                phi_actual_deg: -48.751,
            }),
        )
        .unwrap();
        w.write_record(
            2,
            2.0,
            &RecordBody::Thermal(ThermalRecord {
                t_set: 45.0,
                t_oil: 44.2,
                thermocouples: [22.0, 44.5, 44.9, 45.0, 45.1],
            }),
        )
        .unwrap();
        w.write_record(0, 2.5, &RecordBody::Frame(small_frame(2))).unwrap();
        w.finish().unwrap();

        let r = BagReader::open(&path).unwrap();
        let records: Result<Vec<_>, _> = r.records().collect();
        let records = records.unwrap();
        assert_eq!(records.len(), 4);
        match (&records[0].body, &records[3].body) {
            (RecordBody::Frame(a), RecordBody::Frame(b)) => {
                assert!(a.bits_eq(&small_frame(1)));
                assert!(b.bits_eq(&small_frame(2)));
            }
            _ => panic!("wrong bodies"),
        }
        assert_eq!(records[1].t, 1.5);
    }

    #[test]
    fn identical_content_identical_hash() {
        let dir = tempdir().unwrap();
        let write = |name: &str| {
            let path = dir.path().join(name);
            let mut w = BagWriter::create(&path, test_header()).unwrap();
            w.write_record(0, 1.0, &RecordBody::Frame(small_frame(1))).unwrap();
            w.finish().unwrap()
        };
        assert_eq!(write("a.arlb"), write("b.arlb"));
    }

    #[test]
    fn writer_hash_matches_file_hash() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.arlb");
        let mut w = BagWriter::create(&path, test_header()).unwrap();
        w.write_record(0, 1.0, &RecordBody::Frame(small_frame(9))).unwrap();
        let streamed = w.finish().unwrap();
        assert_eq!(streamed, sha256_file(&path).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.arlb");
        std::fs::write(&path, b"XXXXrest of the file").unwrap();
        match BagReader::open(&path) {
            Err(BagError::BadMagic(m)) => assert_eq!(&m, b"XXXX"),
            Err(other) => panic!("expected BadMagic, got {other:?}"),
            Ok(_) => panic!("expected BadMagic, got a reader"),
        }
    }

    #[test]
    fn truncation_reports_record_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.arlb");
        let mut w = BagWriter::create(&path, test_header()).unwrap();
        w.write_record(0, 1.0, &RecordBody::Frame(small_frame(1))).unwrap();
        let len_before_second = std::fs::metadata(&path).is_ok();
        assert!(len_before_second);
        w.write_record(0, 2.0, &RecordBody::Frame(small_frame(2))).unwrap();
        w.finish().unwrap();

        // compute the offset of the second record and cut into its payload
        let full = std::fs::read(&path).unwrap();
        let r = BagReader::open(&path).unwrap();
        let mut offsets = Vec::new();
        let mut reader = r;
        let mut pos = reader.offset;
        while let Some(rec) = reader.next_record() {
            rec.unwrap();
            offsets.push(pos);
            pos = reader.offset;
        }
        let second_offset = offsets[1];
        std::fs::write(&path, &full[..second_offset as usize + 20]).unwrap();

        let r = BagReader::open(&path).unwrap();
        let results: Vec<_> = r.records().collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(BagError::Truncated { offset }) => assert_eq!(*offset, second_offset),
            other => panic!("expected Truncated at {second_offset}, got {other:?}"),
        }
    }

    #[test]
    fn type_mismatch_rejected_on_write() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mismatch.arlb");
        let mut w = BagWriter::create(&path, test_header()).unwrap();
        let err = w
            .write_record(
                0,
                1.0,
                &RecordBody::Stage(StageRecord {
                    position_index: 0,
                    phi_cmd_deg: 0.0,
                    phi_actual_deg: 0.0,
                }),
            )
            .unwrap_err();
        assert!(matches!(err, BagError::TypeMismatch { .. }));
    }

    #[test]
    fn timestamp_regression_rejected_within_channel() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ts.arlb");
        let mut w = BagWriter::create(&path, test_header()).unwrap();
        w.write_record(0, 2.0, &RecordBody::Frame(small_frame(1))).unwrap();
        let err = w
            .write_record(0, 1.0, &RecordBody::Frame(small_frame(2)))
            .unwrap_err();
        assert!(matches!(err, BagError::TimestampRegression { .. }));
    }

    #[test]
    fn oversized_length_rejected_without_allocation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("huge.arlb");
        let w = BagWriter::create(&path, test_header()).unwrap();
        w.finish().unwrap();
        // append a record header with an absurd length
        let mut bytes = std::fs::read(&path).unwrap();
        let record_offset = bytes.len() as u64;
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        bytes.extend_from_slice(&(u32::MAX).to_le_bytes());
        std::fs::write(&path, bytes).unwrap();

        let r = BagReader::open(&path).unwrap();
        let results: Vec<_> = r.records().collect();
        match &results[0] {
            Err(BagError::LengthOverflow { offset, .. }) => assert_eq!(*offset, record_offset),
            other => panic!("expected LengthOverflow, got {other:?}"),
        }
    }

    #[test]
    fn csv_export_writes_one_file_per_channel() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("exp.arlb");
        let mut w = BagWriter::create(&path, test_header()).unwrap();
        w.write_record(0, 1.0, &RecordBody::Frame(small_frame(1))).unwrap();
        w.write_record(
            1,
            1.0,
            &RecordBody::Stage(StageRecord {
                position_index: 0,
                phi_cmd_deg: -60.0,
                phi_actual_deg: -60.01,
            }),
        )
        .unwrap();
        w.finish().unwrap();
        let out = dir.path().join("csv");
        let paths = export_csv(&path, &out).unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            assert!(p.exists());
        }
        let stage_csv = std::fs::read_to_string(&paths[1]).unwrap();
        assert!(stage_csv.contains("-60.01"));
    }
}
