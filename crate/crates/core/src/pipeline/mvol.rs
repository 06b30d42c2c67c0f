//! MVOL volume files: a 44-byte little-endian header followed by the raw
//! voxel payload, x fastest.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `MVOL`                            |
//! | 4      | 2    | version (1)                             |
//! | 6      | 1    | dtype: 0 = f32, 1 = u8                  |
//! | 7      | 1    | kind: 0 = intensity, 1 = label, 2 = binary |
//! | 8      | 12   | dims D, H, W as u32                     |
//! | 20     | 12   | spacing z, y, x as f32 mm               |
//! | 32     | 12   | origin z, y, x as f32 mm                |
//! | 44     | ..   | payload                                 |

use std::path::Path;

use super::{BinaryMask, Geometry, Image3, LabelMap, Volume};
use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: [u8; 4] = *b"MVOL";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Intensity,
    Label,
    Binary,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Intensity => 0,
            Kind::Label => 1,
            Kind::Binary => 2,
        }
    }

    fn dtype(self) -> u8 {
        match self {
            Kind::Intensity => 0,
            Kind::Label | Kind::Binary => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MvolImage {
    Intensity(Volume),
    Label(LabelMap),
    Binary(BinaryMask),
}

impl MvolImage {
    pub fn kind(&self) -> Kind {
        match self {
            MvolImage::Intensity(_) => Kind::Intensity,
            MvolImage::Label(_) => Kind::Label,
            MvolImage::Binary(_) => Kind::Binary,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        match self {
            MvolImage::Intensity(v) => &v.geom,
            MvolImage::Label(v) | MvolImage::Binary(v) => &v.geom,
        }
    }
}

pub fn encode(img: &MvolImage) -> Vec<u8> {
    let g = img.geometry();
    let kind = img.kind();
    let elem = if kind == Kind::Intensity { 4 } else { 1 };
    let mut out = Vec::with_capacity(HEADER_LEN + g.len() * elem);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind.dtype());
    out.push(kind.code());
    for d in g.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for f in g.spacing.iter().chain(&g.origin) {
        out.extend_from_slice(&f.to_le_bytes());
    }
    match img {
        MvolImage::Intensity(v) => v
            .data
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        MvolImage::Label(v) | MvolImage::Binary(v) => out.extend_from_slice(&v.data),
    }
    out
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn le_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<MvolImage> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let dtype = bytes[6];
    if dtype > 1 {
        return Err(Error::UnknownDtype(dtype));
    }
    let kind = match bytes[7] {
        0 => Kind::Intensity,
        1 => Kind::Label,
        2 => Kind::Binary,
        k => return Err(Error::UnknownKind(k)),
    };
    if kind.dtype() != dtype {
        return Err(Error::parse(
            "MVOL header",
            format!("dtype {dtype} does not fit kind {kind:?}"),
        ));
    }
    let dims: [usize; 3] = std::array::from_fn(|a| le_u32(bytes, 8 + 4 * a) as usize);
    let spacing: [f32; 3] = std::array::from_fn(|a| le_f32(bytes, 20 + 4 * a));
    let origin: [f32; 3] = std::array::from_fn(|a| le_f32(bytes, 32 + 4 * a));
    let geom = Geometry::new(dims, spacing, origin)
        .map_err(|e| Error::parse("MVOL header", e.to_string()))?;
    let elem = if dtype == 0 { 4 } else { 1 };
    let expected = dims
        .iter()
        .try_fold(elem, |acc: usize, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::parse("MVOL header", format!("dims {dims:?} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match kind {
        Kind::Intensity => MvolImage::Intensity(Image3 {
            geom,
            data: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        }),
        Kind::Label => MvolImage::Label(Image3 {
            geom,
            data: payload.to_vec(),
        }),
        Kind::Binary => {
            if let Some(v) = payload.iter().find(|&&v| v > 1) {
                return Err(Error::parse(
                    "MVOL payload",
                    format!("binary volume holds value {v}"),
                ));
            }
            MvolImage::Binary(Image3 {
                geom,
                data: payload.to_vec(),
            })
        }
    })
}

pub fn write_mvol(path: &Path, img: &MvolImage) -> Result<()> {
    fsutil::write_atomic(path, &encode(img))
}

pub fn read_mvol(path: &Path) -> Result<MvolImage> {
    decode(&fsutil::read(path)?)
}

fn wrong_kind(path: &Path, want: Kind, got: Kind) -> Error {
    Error::parse(
        "MVOL file",
        format!(
            "{}: expected {want:?} volume, found {got:?}",
            path.display()
        ),
    )
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_mvol(path)? {
        MvolImage::Intensity(v) => Ok(v),
        other => Err(wrong_kind(path, Kind::Intensity, other.kind())),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match read_mvol(path)? {
        MvolImage::Label(v) => Ok(v),
        other => Err(wrong_kind(path, Kind::Label, other.kind())),
    }
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    match read_mvol(path)? {
        MvolImage::Binary(v) => Ok(v),
        other => Err(wrong_kind(path, Kind::Binary, other.kind())),
    }
}
