//! Binary little-endian PLY I/O for Gaussian-splat checkpoints.
//!
//! The on-disk layout is the one written by the reference splatting trainer:
//! a single `vertex` element whose float32 properties are
//!
//! ```text
//! x y z  nx ny nz  f_dc_0..2  f_rest_0..(3m-1)  opacity  scale_0..2  rot_0..3
//! ```
//!
//! Opacity is stored as a logit, scales as natural logs and the rotation as an
//! unnormalized scalar-first quaternion. [`activate`] maps a parsed
//! [`RawGaussianCloud`] into geometric units.
//!
//! Parsing accepts the properties in any order but rejects anything it does
//! not know, so a file that parses is guaranteed to round-trip through
//! [`write_ply`] bit-for-bit.

use std::collections::HashMap;

use thiserror::Error;

use crate::quat::Quat;

const MAGIC: &[u8] = b"ply\n";
const FORMAT_LINE: &str = "format binary_little_endian 1.0";
const END_HEADER: &str = "end_header";

/// Raw quaternions shorter than this cannot be normalized.
pub const MIN_QUAT_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlyError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("missing required property `{0}`")]
    MissingProperty(String),
    #[error("unexpected property `{name}` at byte {offset}")]
    UnknownProperty { name: String, offset: usize },
    #[error("body is {found} bytes, expected {expected} (body starts at byte {offset})")]
    TruncatedBody {
        expected: u64,
        found: u64,
        offset: usize,
    },
    #[error("non-finite value in `{property}` of vertex {vertex} at byte {offset}")]
    NonFiniteValue {
        property: String,
        vertex: usize,
        offset: usize,
    },
    #[error("a cloud needs at least one point")]
    EmptyCloud,
    #[error("inconsistent cloud: {0}")]
    InvalidCloud(String),
    #[error("degenerate quaternion at point {0}")]
    DegenerateQuaternion(usize),
    #[error("scale of point {0} is not representable after exponentiation")]
    ScaleOutOfRange(usize),
}

impl PlyError {
    pub fn code(&self) -> &'static str {
        match self {
            PlyError::MalformedHeader { .. } => "MalformedHeader",
            PlyError::MissingProperty(_) => "MissingProperty",
            PlyError::UnknownProperty { .. } => "UnknownProperty",
            PlyError::TruncatedBody { .. } => "TruncatedBody",
            PlyError::NonFiniteValue { .. } => "NonFiniteValue",
            PlyError::EmptyCloud => "EmptyCloud",
            PlyError::InvalidCloud(_) => "InvalidCloud",
            PlyError::DegenerateQuaternion(_) => "DegenerateQuaternion",
            PlyError::ScaleOutOfRange(_) => "ScaleOutOfRange",
        }
    }
}

/// Storage-space columns of a splat cloud. Use [`RawGaussianCloud::new`] to
/// get a validated cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawColumns {
    pub positions: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
    pub color_dc: Vec<[f32; 3]>,
    /// Row-major `N × rest_width` spherical-harmonic payload.
    pub color_rest: Vec<f32>,
    pub rest_width: usize,
    pub opacity_logit: Vec<f32>,
    pub log_scale: Vec<[f32; 3]>,
    pub raw_rotation: Vec<[f32; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGaussianCloud {
    cols: RawColumns,
}

impl RawGaussianCloud {
    pub fn new(cols: RawColumns) -> Result<Self, PlyError> {
        let n = cols.positions.len();
        if n == 0 {
            return Err(PlyError::EmptyCloud);
        }
        let lengths = [
            ("normals", cols.normals.len()),
            ("color_dc", cols.color_dc.len()),
            ("opacity_logit", cols.opacity_logit.len()),
            ("log_scale", cols.log_scale.len()),
            ("raw_rotation", cols.raw_rotation.len()),
        ];
        for (name, len) in lengths {
            if len != n {
                return Err(PlyError::InvalidCloud(format!(
                    "{name} has {len} rows, positions has {n}"
                )));
            }
        }
        if cols.rest_width % 3 != 0 {
            return Err(PlyError::InvalidCloud(format!(
                "f_rest width {} is not a multiple of 3",
                cols.rest_width
            )));
        }
        if cols.color_rest.len() != n * cols.rest_width {
            return Err(PlyError::InvalidCloud(format!(
                "f_rest payload has {} values, expected {}",
                cols.color_rest.len(),
                n * cols.rest_width
            )));
        }
        let all_finite = cols.positions.iter().flatten().all(|v| v.is_finite())
            && cols.normals.iter().flatten().all(|v| v.is_finite())
            && cols.color_dc.iter().flatten().all(|v| v.is_finite())
            && cols.color_rest.iter().all(|v| v.is_finite())
            && cols.opacity_logit.iter().all(|v| v.is_finite())
            && cols.log_scale.iter().flatten().all(|v| v.is_finite())
            && cols.raw_rotation.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(PlyError::InvalidCloud("non-finite value".into()));
        }
        Ok(Self { cols })
    }

    pub fn len(&self) -> usize {
        self.cols.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn columns(&self) -> &RawColumns {
        &self.cols
    }

    pub fn into_columns(self) -> RawColumns {
        self.cols
    }

    /// Spherical-harmonic degree implied by the payload width, if it is one
    /// of the standard sizes `3((d+1)^2 - 1)`.
    pub fn sh_degree(&self) -> Option<u32> {
        sh_degree_for_rest_width(self.cols.rest_width)
    }

    /// Inverse of [`activate`]: logit opacity, log scale, quaternion as-is,
    /// zero normals. Opacity is clamped away from 0 and 1 so the logit stays
    /// finite.
    pub fn from_cloud(cloud: &GaussianCloud) -> Result<Self, PlyError> {
        const OPACITY_CLAMP: f64 = 1e-7;
        let n = cloud.len();
        let to32 = |v: [f64; 3]| v.map(|c| c as f32);
        let cols = RawColumns {
            positions: cloud.positions().iter().copied().map(to32).collect(),
            normals: vec![[0.0; 3]; n],
            color_dc: cloud.color().dc.clone(),
            color_rest: cloud.color().rest.clone(),
            rest_width: cloud.color().rest_width,
            opacity_logit: cloud
                .opacity()
                .iter()
                .map(|&o| {
                    let o = o.clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
                    (o / (1.0 - o)).ln() as f32
                })
                .collect(),
            log_scale: cloud.scale().iter().map(|s| s.map(|c| c.ln() as f32)).collect(),
            raw_rotation: cloud.rotation().iter().map(|q| q.0.map(|c| c as f32)).collect(),
        };
        Self::new(cols)
    }
}

pub fn sh_degree_for_rest_width(width: usize) -> Option<u32> {
    (0..=8u32).find(|d| 3 * ((d + 1) * (d + 1) - 1) as usize == width)
}

/// Opaque color data carried along with a cloud but never interpreted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColorPayload {
    pub dc: Vec<[f32; 3]>,
    pub rest: Vec<f32>,
    pub rest_width: usize,
}

impl ColorPayload {
    pub fn zeros(n: usize) -> Self {
        Self {
            dc: vec![[0.0; 3]; n],
            rest: Vec::new(),
            rest_width: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.dc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dc.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> Self {
        let w = self.rest_width;
        let mut rest = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            rest.extend_from_slice(&self.rest[i * w..(i + 1) * w]);
        }
        Self {
            dc: indices.iter().map(|&i| self.dc[i]).collect(),
            rest,
            rest_width: w,
        }
    }
}

/// Activated splat cloud in geometric units.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    positions: Vec<[f64; 3]>,
    opacity: Vec<f64>,
    scale: Vec<[f64; 3]>,
    rotation: Vec<Quat>,
    color: ColorPayload,
}

impl GaussianCloud {
    /// Unit-norm tolerance for rotations.
    pub const UNIT_TOLERANCE: f64 = 1e-9;

    pub fn new(
        positions: Vec<[f64; 3]>,
        opacity: Vec<f64>,
        scale: Vec<[f64; 3]>,
        rotation: Vec<Quat>,
        color: ColorPayload,
    ) -> Result<Self, PlyError> {
        let n = positions.len();
        if n == 0 {
            return Err(PlyError::EmptyCloud);
        }
        if opacity.len() != n || scale.len() != n || rotation.len() != n || color.len() != n {
            return Err(PlyError::InvalidCloud("per-point arrays differ in length".into()));
        }
        if color.rest.len() != n * color.rest_width {
            return Err(PlyError::InvalidCloud("color payload width mismatch".into()));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(PlyError::InvalidCloud(format!("non-finite position at point {i}")));
        }
        if let Some(i) = opacity.iter().position(|o| !(0.0..=1.0).contains(o)) {
            return Err(PlyError::InvalidCloud(format!("opacity outside [0,1] at point {i}")));
        }
        if let Some(i) = scale
            .iter()
            .position(|s| !s.iter().all(|c| *c > 0.0 && c.is_finite()))
        {
            return Err(PlyError::InvalidCloud(format!("non-positive scale at point {i}")));
        }
        for (i, q) in rotation.iter().enumerate() {
            if (q.norm() - 1.0).abs() >= Self::UNIT_TOLERANCE || !q.is_canonical() {
                return Err(PlyError::InvalidCloud(format!(
                    "rotation {i} is not a canonical unit quaternion"
                )));
            }
        }
        Ok(Self {
            positions,
            opacity,
            scale,
            rotation,
            color,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn opacity(&self) -> &[f64] {
        &self.opacity
    }

    pub fn scale(&self) -> &[[f64; 3]] {
        &self.scale
    }

    pub fn rotation(&self) -> &[Quat] {
        &self.rotation
    }

    pub fn color(&self) -> &ColorPayload {
        &self.color
    }

    /// Same cloud with positions and scales replaced. Opacity, rotation and
    /// color are kept.
    pub(crate) fn with_geometry(
        &self,
        positions: Vec<[f64; 3]>,
        scale: Vec<[f64; 3]>,
    ) -> Result<Self, PlyError> {
        Self::new(
            positions,
            self.opacity.clone(),
            scale,
            self.rotation.clone(),
            self.color.clone(),
        )
    }

    /// Points at `indices`, in that order.
    pub(crate) fn gather_unchecked(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            opacity: indices.iter().map(|&i| self.opacity[i]).collect(),
            scale: indices.iter().map(|&i| self.scale[i]).collect(),
            rotation: indices.iter().map(|&i| self.rotation[i]).collect(),
            color: self.color.gather(indices),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Position(usize),
    Normal(usize),
    ColorDc(usize),
    ColorRest(usize),
    Opacity,
    Scale(usize),
    Rotation(usize),
}

fn slot_for(name: &str) -> Option<Slot> {
    let indexed = |prefix: &str, count: usize| -> Option<usize> {
        let idx: usize = name.strip_prefix(prefix)?.parse().ok()?;
        // Reject spellings like `scale_01` that would alias `scale_1`.
        (idx < count && name.len() == prefix.len() + idx.to_string().len()).then_some(idx)
    };
    Some(match name {
        "x" => Slot::Position(0),
        "y" => Slot::Position(1),
        "z" => Slot::Position(2),
        "nx" => Slot::Normal(0),
        "ny" => Slot::Normal(1),
        "nz" => Slot::Normal(2),
        "opacity" => Slot::Opacity,
        _ => {
            if let Some(i) = indexed("f_dc_", 3) {
                Slot::ColorDc(i)
            } else if let Some(i) = indexed("f_rest_", usize::MAX) {
                Slot::ColorRest(i)
            } else if let Some(i) = indexed("scale_", 3) {
                Slot::Scale(i)
            } else if let Some(i) = indexed("rot_", 4) {
                Slot::Rotation(i)
            } else {
                return None;
            }
        }
    })
}

fn slot_name(slot: Slot) -> String {
    match slot {
        Slot::Position(i) => ["x", "y", "z"][i].to_string(),
        Slot::Normal(i) => ["nx", "ny", "nz"][i].to_string(),
        Slot::ColorDc(i) => format!("f_dc_{i}"),
        Slot::ColorRest(i) => format!("f_rest_{i}"),
        Slot::Opacity => "opacity".to_string(),
        Slot::Scale(i) => format!("scale_{i}"),
        Slot::Rotation(i) => format!("rot_{i}"),
    }
}

/// Property order used by [`write_ply`].
fn canonical_slots(rest_width: usize) -> Vec<Slot> {
    let mut slots: Vec<Slot> = (0..3).map(Slot::Position).collect();
    slots.extend((0..3).map(Slot::Normal));
    slots.extend((0..3).map(Slot::ColorDc));
    slots.extend((0..rest_width).map(Slot::ColorRest));
    slots.push(Slot::Opacity);
    slots.extend((0..3).map(Slot::Scale));
    slots.extend((0..4).map(Slot::Rotation));
    slots
}

struct Header {
    vertex_count: usize,
    slots: Vec<Slot>,
    rest_width: usize,
    body_offset: usize,
}

fn malformed(offset: usize, reason: impl Into<String>) -> PlyError {
    PlyError::MalformedHeader {
        offset,
        reason: reason.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    if !bytes.starts_with(MAGIC) {
        return Err(malformed(0, "missing `ply` magic line"));
    }
    let mut offset = MAGIC.len();
    let mut saw_format = false;
    let mut vertex_count: Option<usize> = None;
    let mut slots: Vec<Slot> = Vec::new();
    let mut seen: HashMap<Slot, usize> = HashMap::new();

    loop {
        let rest = &bytes[offset..];
        let Some(len) = rest.iter().position(|&b| b == b'\n') else {
            return Err(malformed(offset, "header is not terminated by `end_header`"));
        };
        let line = std::str::from_utf8(&rest[..len])
            .map_err(|_| malformed(offset, "header line is not valid UTF-8"))?;
        let line_offset = offset;
        offset += len + 1;
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();

        if !saw_format {
            if tokens.join(" ") != FORMAT_LINE {
                return Err(malformed(
                    line_offset,
                    format!("expected `{FORMAT_LINE}`, found `{line}`"),
                ));
            }
            saw_format = true;
            continue;
        }

        match tokens.as_slice() {
            [] => return Err(malformed(line_offset, "empty header line")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", count] => {
                if vertex_count.is_some() {
                    return Err(malformed(line_offset, "duplicate `element vertex`"));
                }
                let count = count
                    .parse::<usize>()
                    .map_err(|_| malformed(line_offset, format!("bad vertex count `{count}`")))?;
                vertex_count = Some(count);
            }
            ["element", name, ..] => {
                return Err(malformed(line_offset, format!("unsupported element `{name}`")));
            }
            ["property", ty, name] => {
                if vertex_count.is_none() {
                    return Err(malformed(line_offset, "property before `element vertex`"));
                }
                if *ty != "float" && *ty != "float32" {
                    return Err(malformed(
                        line_offset,
                        format!("property `{name}` has unsupported type `{ty}`"),
                    ));
                }
                let slot = slot_for(name).ok_or_else(|| PlyError::UnknownProperty {
                    name: name.to_string(),
                    offset: line_offset,
                })?;
                if seen.insert(slot, slots.len()).is_some() {
                    return Err(malformed(line_offset, format!("duplicate property `{name}`")));
                }
                slots.push(slot);
            }
            ["property", ..] => {
                return Err(malformed(line_offset, format!("unsupported property line `{line}`")));
            }
            [END_HEADER] => break,
            _ => return Err(malformed(line_offset, format!("unrecognized header line `{line}`"))),
        }
    }

    let vertex_count = vertex_count.ok_or_else(|| malformed(offset, "no `element vertex`"))?;

    let rest_count = slots
        .iter()
        .filter(|s| matches!(s, Slot::ColorRest(_)))
        .count();
    // Next multiple of three, so an incomplete final triple reports its gap.
    let rest_width = rest_count.div_ceil(3) * 3;
    for slot in canonical_slots(rest_width) {
        if !seen.contains_key(&slot) {
            return Err(PlyError::MissingProperty(slot_name(slot)));
        }
    }
    if vertex_count == 0 {
        return Err(PlyError::EmptyCloud);
    }

    Ok(Header {
        vertex_count,
        slots,
        rest_width,
        body_offset: offset,
    })
}

/// Parses a binary little-endian splat PLY.
pub fn parse_ply(bytes: &[u8]) -> Result<RawGaussianCloud, PlyError> {
    let header = parse_header(bytes)?;
    let record = header.slots.len() * 4;
    let body = &bytes[header.body_offset..];
    let expected = (header.vertex_count as u64).saturating_mul(record as u64);
    if body.len() as u64 != expected {
        return Err(PlyError::TruncatedBody {
            expected,
            found: body.len() as u64,
            offset: header.body_offset,
        });
    }

    let n = header.vertex_count;
    let w = header.rest_width;
    let mut cols = RawColumns {
        positions: vec![[0.0; 3]; n],
        normals: vec![[0.0; 3]; n],
        color_dc: vec![[0.0; 3]; n],
        color_rest: vec![0.0; n * w],
        rest_width: w,
        opacity_logit: vec![0.0; n],
        log_scale: vec![[0.0; 3]; n],
        raw_rotation: vec![[0.0; 4]; n],
    };

    for (v, chunk) in body.chunks_exact(record).enumerate() {
        for (slot, raw) in header.slots.iter().zip(chunk.chunks_exact(4)) {
            let value = f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
            if !value.is_finite() {
                let within = raw.as_ptr() as usize - chunk.as_ptr() as usize;
                return Err(PlyError::NonFiniteValue {
                    property: slot_name(*slot),
                    vertex: v,
                    offset: header.body_offset + v * record + within,
                });
            }
            match *slot {
                Slot::Position(i) => cols.positions[v][i] = value,
                Slot::Normal(i) => cols.normals[v][i] = value,
                Slot::ColorDc(i) => cols.color_dc[v][i] = value,
                Slot::ColorRest(i) => cols.color_rest[v * w + i] = value,
                Slot::Opacity => cols.opacity_logit[v] = value,
                Slot::Scale(i) => cols.log_scale[v][i] = value,
                Slot::Rotation(i) => cols.raw_rotation[v][i] = value,
            }
        }
    }
    RawGaussianCloud::new(cols)
}

/// Serializes in canonical property order.
pub fn write_ply(cloud: &RawGaussianCloud) -> Vec<u8> {
    let c = cloud.columns();
    let n = cloud.len();
    let slots = canonical_slots(c.rest_width);

    let mut header = format!("ply\n{FORMAT_LINE}\nelement vertex {n}\n");
    for slot in &slots {
        header.push_str("property float ");
        header.push_str(&slot_name(*slot));
        header.push('\n');
    }
    header.push_str(END_HEADER);
    header.push('\n');

    let mut out = Vec::with_capacity(header.len() + n * slots.len() * 4);
    out.extend_from_slice(header.as_bytes());
    let w = c.rest_width;
    for v in 0..n {
        let mut put = |x: f32| out.extend_from_slice(&x.to_le_bytes());
        c.positions[v].iter().for_each(|&x| put(x));
        c.normals[v].iter().for_each(|&x| put(x));
        c.color_dc[v].iter().for_each(|&x| put(x));
        c.color_rest[v * w..(v + 1) * w].iter().for_each(|&x| put(x));
        put(c.opacity_logit[v]);
        c.log_scale[v].iter().for_each(|&x| put(x));
        c.raw_rotation[v].iter().for_each(|&x| put(x));
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Storage space to geometric space.
pub fn activate(raw: &RawGaussianCloud) -> Result<GaussianCloud, PlyError> {
    let c = raw.columns();
    let positions = c
        .positions
        .iter()
        .map(|p| p.map(f64::from))
        .collect();
    let opacity = c.opacity_logit.iter().map(|&o| sigmoid(o as f64)).collect();
    let mut scale = Vec::with_capacity(raw.len());
    for (i, s) in c.log_scale.iter().enumerate() {
        let s = s.map(|v| (v as f64).exp());
        if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(PlyError::ScaleOutOfRange(i));
        }
        scale.push(s);
    }
    let mut rotation = Vec::with_capacity(raw.len());
    for (i, q) in c.raw_rotation.iter().enumerate() {
        let q = Quat(q.map(f64::from))
            .normalized(MIN_QUAT_NORM)
            .ok_or(PlyError::DegenerateQuaternion(i))?;
        rotation.push(q.canonical());
    }
    let color = ColorPayload {
        dc: c.color_dc.clone(),
        rest: c.color_rest.clone(),
        rest_width: c.rest_width,
    };
    GaussianCloud::new(positions, opacity, scale, rotation, color)
}

/// Plain point-cloud view: positions only.
pub fn strip_to_points(cloud: &GaussianCloud) -> Vec<[f64; 3]> {
    cloud.positions().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(n: usize, rest_width: usize) -> RawColumns {
        RawColumns {
            positions: (0..n).map(|i| [i as f32, 1.0, -2.0]).collect(),
            normals: vec![[0.0; 3]; n],
            color_dc: vec![[0.1, 0.2, 0.3]; n],
            color_rest: (0..n * rest_width).map(|i| i as f32 * 0.01).collect(),
            rest_width,
            opacity_logit: vec![0.0; n],
            log_scale: vec![[-1.0, -2.0, -3.0]; n],
            raw_rotation: vec![[2.0, 0.0, 0.0, 0.0]; n],
        }
    }

    #[test]
    fn record_layout_for_degree_zero() {
        let cloud = RawGaussianCloud::new(raw(1, 0)).unwrap();
        let bytes = write_ply(&cloud);
        let text = String::from_utf8_lossy(&bytes);
        assert_eq!(text.matches("property float").count(), 17);
        let body = bytes.len() - (text.find("end_header\n").unwrap() + "end_header\n".len());
        assert_eq!(body, 68);
    }

    #[test]
    fn degree_three_record_is_248_bytes() {
        let cloud = RawGaussianCloud::new(raw(1, 45)).unwrap();
        let bytes = write_ply(&cloud);
        let text = String::from_utf8_lossy(&bytes);
        assert_eq!(text.matches("property float").count(), 62);
        let body = bytes.len() - (text.find("end_header\n").unwrap() + "end_header\n".len());
        assert_eq!(body, 248);
        let back = parse_ply(&bytes).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.sh_degree(), Some(3));
    }

    #[test]
    fn empty_cloud_rejected() {
        assert_eq!(RawGaussianCloud::new(raw(0, 0)), Err(PlyError::EmptyCloud));
    }

    #[test]
    fn activation_examples() {
        let mut cols = raw(2, 0);
        cols.raw_rotation[1] = [-0.5, 0.5, -0.5, 0.5];
        let cloud = activate(&RawGaussianCloud::new(cols).unwrap()).unwrap();
        assert_eq!(cloud.opacity()[0], 0.5);
        assert_eq!(cloud.rotation()[0], Quat::IDENTITY);
        assert_eq!(cloud.rotation()[1], Quat::new(0.5, -0.5, 0.5, -0.5));
        assert!((cloud.scale()[0][0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_quaternion_is_an_error() {
        let mut cols = raw(3, 0);
        cols.raw_rotation[2] = [0.0; 4];
        let err = activate(&RawGaussianCloud::new(cols).unwrap()).unwrap_err();
        assert_eq!(err, PlyError::DegenerateQuaternion(2));
    }

    #[test]
    fn property_order_in_file_is_respected() {
        // Hand-built file with properties in a scrambled order.
        let names = [
            "rot_3", "rot_2", "rot_1", "rot_0", "opacity", "z", "y", "x", "scale_2", "scale_1",
            "scale_0", "nz", "ny", "nx", "f_dc_2", "f_dc_1", "f_dc_0",
        ];
        let mut file = String::from("ply\nformat binary_little_endian 1.0\ncomment scrambled\nelement vertex 1\n");
        for n in names {
            file.push_str(&format!("property float {n}\n"));
        }
        file.push_str("end_header\n");
        let mut bytes = file.into_bytes();
        let values: [f32; 17] = [
            0.4, 0.3, 0.2, 0.1, 1.5, 3.0, 2.0, 1.0, -3.0, -2.0, -1.0, 0.0, 0.0, 1.0, 0.9, 0.8, 0.7,
        ];
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = parse_ply(&bytes).unwrap();
        let c = cloud.columns();
        assert_eq!(c.positions[0], [1.0, 2.0, 3.0]);
        assert_eq!(c.raw_rotation[0], [0.1, 0.2, 0.3, 0.4]);
        assert_eq!(c.log_scale[0], [-1.0, -2.0, -3.0]);
        assert_eq!(c.color_dc[0], [0.7, 0.8, 0.9]);
        assert_eq!(c.normals[0], [1.0, 0.0, 0.0]);
        assert_eq!(c.opacity_logit[0], 1.5);
    }

    #[test]
    fn error_paths() {
        let good = write_ply(&RawGaussianCloud::new(raw(2, 3)).unwrap());

        let err = parse_ply(b"plx\nformat binary_little_endian 1.0\n").unwrap_err();
        assert_eq!(err.code(), "MalformedHeader");

        let ascii = String::from_utf8_lossy(&good).replace("binary_little_endian", "ascii");
        assert_eq!(parse_ply(ascii.as_bytes()).unwrap_err().code(), "MalformedHeader");

        let truncated = &good[..good.len() - 1];
        assert_eq!(parse_ply(truncated).unwrap_err().code(), "TruncatedBody");

        let mut padded = good.clone();
        padded.push(0);
        assert_eq!(parse_ply(&padded).unwrap_err().code(), "TruncatedBody");

        let text = String::from_utf8_lossy(&good).into_owned();
        let header_end = text.find("end_header\n").unwrap() + "end_header\n".len();
        let header = &text[..header_end];
        let body = &good[header_end..];

        let no_opacity = header.replace("property float opacity\n", "");
        let mut bytes = no_opacity.into_bytes();
        bytes.extend_from_slice(&body[..body.len() - 8]);
        assert_eq!(
            parse_ply(&bytes).unwrap_err(),
            PlyError::MissingProperty("opacity".into())
        );

        let extra = header.replace("property float x\n", "property float x\nproperty float red\n");
        assert_eq!(parse_ply(extra.as_bytes()).unwrap_err().code(), "UnknownProperty");

        let gap = header.replace("property float f_rest_1\n", "");
        let mut bytes = gap.into_bytes();
        bytes.extend_from_slice(&body[..body.len() - 8]);
        assert_eq!(
            parse_ply(&bytes).unwrap_err(),
            PlyError::MissingProperty("f_rest_1".into())
        );

        let mut nan = good.clone();
        let at = header_end + 4;
        nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match parse_ply(&nan).unwrap_err() {
            PlyError::NonFiniteValue {
                property, offset, ..
            } => {
                assert_eq!(property, "y");
                assert_eq!(offset, at);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_vertices_rejected() {
        let file = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        // Missing properties are reported before the empty count.
        assert_eq!(parse_ply(file.as_bytes()).unwrap_err().code(), "MissingProperty");
    }
}
