//! Binary little-endian PLY in the common 3DGS layout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussians::algebra::{OPACITY_MAX, OPACITY_MIN, SCALE_MIN};
use crate::gaussians::scene::{GaussianScene, QUAT_NORM_TOLERANCE};

/// Zeroth-order spherical harmonic basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

fn parse_header(reader: &mut impl BufRead) -> Result<Vec<Element>> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::Format(format!("reading PLY header: {e}")))?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        if !next(&mut line)? {
            return Err(Error::Format("header ended before end_header".into()));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::Format(format!("unsupported PLY format '{other}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(Error::Format("list properties are not supported".into()))
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type '{ty}'")))?;
                el.properties.push((name.to_string(), ty));
            }
            _ => return Err(Error::Format(format!("unrecognised header line '{}'", line.trim_end()))),
        }
    }
    if !saw_format {
        return Err(Error::Format("missing format line".into()));
    }
    Ok(elements)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn decode_color(v: f64) -> f32 {
    (0.5 + SH_C0 * v).clamp(0.0, 1.0) as f32
}

fn decode_opacity(v: f64) -> f32 {
    (sigmoid(v) as f32).clamp(OPACITY_MIN, OPACITY_MAX)
}

fn decode_scale(v: f64) -> f32 {
    (v.exp() as f32).max(SCALE_MIN)
}

/// Stored value for `target`: among a few codes around the naive inverse,
/// the one whose decode is closest, then the code nearest zero with the
/// same decode. Encoding a decoded value therefore returns the same code.
fn settle(target: f32, naive: f32, decode: fn(f64) -> f32) -> f32 {
    let mut c = naive;
    for _ in 0..4 {
        c = c.next_down();
    }
    let mut best = c;
    let mut best_d = f64::INFINITY;
    for _ in 0..9 {
        let d = (decode(c as f64) as f64 - target as f64).abs();
        if d < best_d {
            best = c;
            best_d = d;
        }
        c = c.next_up();
    }
    let value = decode(best as f64);
    if decode(0.0) == value {
        return 0.0;
    }
    // Decode is monotone in magnitude for a fixed sign.
    let sign = best.to_bits() & 0x8000_0000;
    let (mut lo, mut hi) = (0u32, best.to_bits() & 0x7fff_ffff);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if decode(f32::from_bits(mid | sign) as f64) == value {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    f32::from_bits(hi | sign)
}

/// Parse a PLY byte stream, applying activations.
pub fn read_ply(reader: impl Read) -> Result<GaussianScene> {
    let mut reader = BufReader::new(reader);
    let elements = parse_header(&mut reader)?;
    let mut vertex = None;
    for el in &elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        // Skip whole elements that precede the vertex block.
        let stride: usize = el.properties.iter().map(|p| p.1.size()).sum();
        let mut skip = vec![0u8; stride * el.count];
        reader
            .read_exact(&mut skip)
            .map_err(|e| Error::Format(format!("truncated element '{}': {e}", el.name)))?;
    }
    let vertex = vertex.ok_or_else(|| Error::Format("missing vertex element".into()))?;
    let mut offsets = [(0usize, Scalar::F32); 14];
    let mut stride = 0;
    let mut found = [false; 14];
    for (name, ty) in &vertex.properties {
        if let Some(k) = REQUIRED.iter().position(|r| r == name) {
            offsets[k] = (stride, *ty);
            found[k] = true;
        }
        stride += ty.size();
    }
    if let Some(k) = found.iter().position(|f| !f) {
        return Err(Error::Format(format!("missing property '{}'", REQUIRED[k])));
    }
    let n = vertex.count;
    let (mut mu, mut scale, mut opacity, mut color, mut rot) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut record = vec![0u8; stride];
    let mut clamped = 0usize;
    for i in 0..n {
        reader
            .read_exact(&mut record)
            .map_err(|e| Error::Format(format!("truncated vertex data at {i}: {e}")))?;
        let v: [f64; 14] = std::array::from_fn(|k| offsets[k].1.read(&record[offsets[k].0..]));
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data {
                index: i,
                detail: format!("non-finite '{}'", REQUIRED[k]),
            });
        }
        mu.push([v[0] as f32, v[1] as f32, v[2] as f32]);
        if [3, 4, 5].iter().any(|&k| !(0.0..=1.0).contains(&(0.5 + SH_C0 * v[k]))) {
            clamped += 1;
        }
        color.push([3, 4, 5].map(|k| decode_color(v[k])));
        opacity.push(decode_opacity(v[6]));
        scale.push([7, 8, 9].map(|k| decode_scale(v[k])));
        let q = [v[10], v[11], v[12], v[13]].map(|x| x as f32);
        let norm = q.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Data {
                index: i,
                detail: "zero quaternion".into(),
            });
        }
        // Unit quaternions within tolerance are kept as stored.
        if (norm - 1.0).abs() <= QUAT_NORM_TOLERANCE as f64 {
            rot.push(q);
        } else {
            rot.push(q.map(|x| (x as f64 / norm) as f32));
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} primitives had colors outside [0, 1] and were clamped");
    }
    GaussianScene::new(mu, scale, opacity, color, rot)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(file)
}

/// Write `scene` with inverse activations. Returns how many opacities had
/// to be pulled into `[1e-6, 1 − 1e-6]` before taking the logit.
pub fn write_ply(scene: &GaussianScene, writer: impl Write) -> Result<usize> {
    let mut w = BufWriter::new(writer);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        scene.len()
    );
    for name in REQUIRED {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    let io = |e: std::io::Error| Error::Format(format!("writing PLY: {e}"));
    w.write_all(header.as_bytes()).map_err(io)?;
    let mut clamped = 0;
    for p in scene.primitives() {
        let a = p.opacity as f64;
        let a_c = a.clamp(OPACITY_MIN as f64, OPACITY_MAX as f64);
        if a_c != a {
            clamped += 1;
        }
        let mut v = [0f32; 14];
        v[0..3].copy_from_slice(&p.mu);
        for k in 0..3 {
            v[3 + k] = settle(p.color[k], ((p.color[k] as f64 - 0.5) / SH_C0) as f32, decode_color);
            v[7 + k] = settle(p.scale[k], (p.scale[k] as f64).ln() as f32, decode_scale);
        }
        v[6] = settle(a_c as f32, (a_c / (1.0 - a_c)).ln() as f32, decode_opacity);
        v[10..14].copy_from_slice(&p.rot);
        for x in v {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(clamped)
}

pub fn save_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(scene, file)
}
