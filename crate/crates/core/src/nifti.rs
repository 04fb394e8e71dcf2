//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only 3D volumes and 3D volumes with a fourth channel axis are supported.
//! Header bytes this module does not interpret (intent codes, description,
//! extensions) are carried through a read/write cycle untouched.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use log::warn;

use crate::error::{Error, Result};
use crate::volume::{Affine, BrainMask, Grid, Label, LabelMap, LabelVolume, ScalarVolume, SPACING_TOLERANCE};

pub const HEADER_SIZE: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";
const GZIP_SIGNATURE: [u8; 2] = [0x1f, 0x8b];

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// Sample type of the voxel payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatumKind {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl DatumKind {
    pub const ALL: [DatumKind; 5] = [Self::U8, Self::I16, Self::I32, Self::F32, Self::F64];

    pub fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Self::U8,
            4 => Self::I16,
            8 => Self::I32,
            16 => Self::F32,
            64 => Self::F64,
            other => return Err(Error::UnsupportedDatum(other)),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, Self::U8 | Self::I16 | Self::I32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Endian {
    #[default]
    Little,
    Big,
}

/// Stored (unscaled) voxel samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Samples {
    pub fn kind(&self) -> DatumKind {
        match self {
            Samples::U8(_) => DatumKind::U8,
            Samples::I16(_) => DatumKind::I16,
            Samples::I32(_) => DatumKind::I32,
            Samples::F32(_) => DatumKind::F32,
            Samples::F64(_) => DatumKind::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::I16(v) => v.len(),
            Samples::I32(v) => v.len(),
            Samples::F32(v) => v.len(),
            Samples::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Samples::U8(v) => v.iter().map(|&x| x as f64).collect(),
            Samples::I16(v) => v.iter().map(|&x| x as f64).collect(),
            Samples::I32(v) => v.iter().map(|&x| x as f64).collect(),
            Samples::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Samples::F64(v) => v.clone(),
        }
    }

    fn decode(kind: DatumKind, bytes: &[u8], endian: Endian) -> Samples {
        macro_rules! decode {
            ($t:ty, $n:expr) => {
                bytes
                    .chunks_exact($n)
                    .map(|c| {
                        let a: [u8; $n] = c.try_into().unwrap();
                        match endian {
                            Endian::Little => <$t>::from_le_bytes(a),
                            Endian::Big => <$t>::from_be_bytes(a),
                        }
                    })
                    .collect()
            };
        }
        match kind {
            DatumKind::U8 => Samples::U8(bytes.to_vec()),
            DatumKind::I16 => Samples::I16(decode!(i16, 2)),
            DatumKind::I32 => Samples::I32(decode!(i32, 4)),
            DatumKind::F32 => Samples::F32(decode!(f32, 4)),
            DatumKind::F64 => Samples::F64(decode!(f64, 8)),
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>, endian: Endian) {
        macro_rules! encode {
            ($v:expr) => {
                for x in $v {
                    match endian {
                        Endian::Little => out.extend_from_slice(&x.to_le_bytes()),
                        Endian::Big => out.extend_from_slice(&x.to_be_bytes()),
                    }
                }
            };
        }
        match self {
            Samples::U8(v) => out.extend_from_slice(v),
            Samples::I16(v) => encode!(v),
            Samples::I32(v) => encode!(v),
            Samples::F32(v) => encode!(v),
            Samples::F64(v) => encode!(v),
        }
    }
}

/// The subset of the NIfTI-1 header this toolkit models.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    /// 1 for plain 3D volumes; the length of the fourth axis otherwise.
    pub channels: usize,
    pub datum_kind: DatumKind,
    pub spacing: [f64; 3],
    pub affine: Affine,
    pub scale_slope: f64,
    pub scale_intercept: f64,
    pub endian: Endian,
    /// Original 348 header bytes, re-emitted for fields not modelled above.
    opaque: Option<Box<[u8; HEADER_SIZE]>>,
    /// Bytes between the header and the voxel data (extension flag + extensions).
    extension: Vec<u8>,
}

impl VolumeHeader {
    /// Fresh little-endian header for a grid.
    pub fn for_grid(grid: &Grid, channels: usize, datum_kind: DatumKind) -> Self {
        VolumeHeader {
            dims: grid.dims(),
            channels: channels.max(1),
            datum_kind,
            spacing: grid.spacing(),
            affine: *grid.affine(),
            scale_slope: 1.0,
            scale_intercept: 0.0,
            endian: Endian::Little,
            opaque: None,
            extension: Vec::new(),
        }
    }

    /// Copy of this header describing a new grid and payload, keeping the
    /// opaque fields and extensions.
    pub fn derive(&self, grid: &Grid, channels: usize, datum_kind: DatumKind) -> Self {
        VolumeHeader {
            dims: grid.dims(),
            channels: channels.max(1),
            datum_kind,
            spacing: grid.spacing(),
            affine: *grid.affine(),
            scale_slope: 1.0,
            scale_intercept: 0.0,
            endian: self.endian,
            opaque: self.opaque.clone(),
            extension: self.extension.clone(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels.max(1)
    }

    pub fn extension_bytes(&self) -> &[u8] {
        &self.extension
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.affine)
    }

    /// Whether stored samples are transformed by slope/intercept on load.
    pub fn has_scaling(&self) -> bool {
        self.scale_slope != 0.0
            && self.scale_slope.is_finite()
            && !(self.scale_slope == 1.0 && self.scale_intercept == 0.0)
    }
}

/// A decoded file: header plus stored samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub header: VolumeHeader,
    pub samples: Samples,
}

impl NiftiVolume {
    /// Samples with slope/intercept applied.
    pub fn scaled_values(&self) -> Vec<f64> {
        let mut v = self.samples.to_f64();
        if self.header.has_scaling() {
            let (m, b) = (self.header.scale_slope, self.header.scale_intercept);
            v.iter_mut().for_each(|x| *x = m * *x + b);
        }
        v
    }

    pub fn to_scalar_volume(&self) -> Result<ScalarVolume> {
        ScalarVolume::new(self.header.grid()?, self.header.channels, self.scaled_values())
    }

    /// Interprets the samples as labels; `names` supplies structure names.
    pub fn to_label_volume(&self, names: Option<&LabelMap>) -> Result<LabelVolume> {
        if self.header.channels > 1 {
            return Err(Error::UnsupportedDims(format!(
                "label volume with {} channels",
                self.header.channels
            )));
        }
        let labels = if !self.header.has_scaling() {
            match &self.samples {
                Samples::U8(v) => v.iter().map(|&x| x as Label).collect(),
                _ => to_labels(&self.samples.to_f64())?,
            }
        } else {
            to_labels(&self.scaled_values())?
        };
        let grid = self.header.grid()?;
        match names {
            Some(names) => LabelVolume::with_names(grid, labels, names),
            None => LabelVolume::from_labels(grid, labels),
        }
    }

    /// Nonzero samples are inside.
    pub fn to_mask(&self) -> Result<BrainMask> {
        let inside = self.scaled_values()[..self.header.dims.iter().product()]
            .iter()
            .map(|&v| v != 0.0)
            .collect();
        BrainMask::new(self.header.grid()?, inside)
    }

    /// Smallest integer datum kind holding every label.
    pub fn from_label_volume(volume: &LabelVolume) -> Self {
        let max = volume.labels().iter().copied().max().unwrap_or(0);
        let samples = if max <= u8::MAX as Label {
            Samples::U8(volume.labels().iter().map(|&l| l as u8).collect())
        } else if max <= i16::MAX as Label {
            Samples::I16(volume.labels().iter().map(|&l| l as i16).collect())
        } else {
            Samples::I32(volume.labels().iter().map(|&l| l as i32).collect())
        };
        NiftiVolume {
            header: VolumeHeader::for_grid(volume.grid(), 1, samples.kind()),
            samples,
        }
    }

    pub fn from_scalar_volume(volume: &ScalarVolume, kind: DatumKind) -> Self {
        let v = volume.values();
        let samples = match kind {
            DatumKind::F64 => Samples::F64(v.to_vec()),
            DatumKind::F32 => Samples::F32(v.iter().map(|&x| x as f32).collect()),
            DatumKind::U8 => Samples::U8(v.iter().map(|&x| x.round() as u8).collect()),
            DatumKind::I16 => Samples::I16(v.iter().map(|&x| x.round() as i16).collect()),
            DatumKind::I32 => Samples::I32(v.iter().map(|&x| x.round() as i32).collect()),
        };
        NiftiVolume {
            header: VolumeHeader::for_grid(volume.grid(), volume.channels(), kind),
            samples,
        }
    }
}

fn to_labels(values: &[f64]) -> Result<Vec<Label>> {
    values
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=Label::MAX as f64).contains(&v) {
                Ok(v as Label)
            } else {
                Err(Error::NotALabel { value: v })
            }
        })
        .collect()
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        let a = [self.bytes[at], self.bytes[at + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(a),
            Endian::Big => i16::from_be_bytes(a),
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let a: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        match self.endian {
            Endian::Little => i32::from_le_bytes(a),
            Endian::Big => i32::from_be_bytes(a),
        }
    }

    fn f32(&self, at: usize) -> f64 {
        let a: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        (match self.endian {
            Endian::Little => f32::from_le_bytes(a),
            Endian::Big => f32::from_be_bytes(a),
        }) as f64
    }
}

/// Reads a `.nii` or `.nii.gz` file; gzip is detected from the content.
pub fn read_volume(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Decodes an in-memory file image (plain or gzip-compressed).
pub fn decode_volume(bytes: &[u8]) -> Result<NiftiVolume> {
    if bytes.starts_with(&GZIP_SIGNATURE) {
        let mut raw = Vec::with_capacity(bytes.len() * 4);
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::io("<gzip stream>", e))?;
        parse(&raw)
    } else {
        parse(bytes)
    }
}

fn parse(bytes: &[u8]) -> Result<NiftiVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::TruncatedPayload {
            expected: HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let endian = if le == HEADER_SIZE as i32 {
        Endian::Little
    } else if be == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::BadHeaderSize(le));
    };
    let f = Fields { bytes, endian };
    debug_assert_eq!(f.i32(offset::SIZEOF_HDR), HEADER_SIZE as i32);

    let magic: [u8; 4] = bytes[offset::MAGIC..offset::MAGIC + 4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }

    let dim: Vec<i16> = (0..8).map(|i| f.i16(offset::DIM + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=4).contains(&ndim) {
        return Err(Error::UnsupportedDims(format!("dim[0] = {ndim}; only 3D (+channels) supported")));
    }
    let mut dims = [1usize; 3];
    for (ax, d) in dims.iter_mut().enumerate().take(ndim.min(3) as usize) {
        let v = dim[ax + 1];
        if v < 1 {
            return Err(Error::UnsupportedDims(format!("dim[{}] = {v}", ax + 1)));
        }
        *d = v as usize;
    }
    let channels = if ndim == 4 {
        if dim[4] < 1 {
            return Err(Error::UnsupportedDims(format!("dim[4] = {}", dim[4])));
        }
        dim[4] as usize
    } else {
        1
    };

    let datum_kind = DatumKind::from_code(f.i16(offset::DATATYPE))?;
    let bitpix = f.i16(offset::BITPIX);
    if bitpix as usize != datum_kind.bytes() * 8 {
        warn!("bitpix {bitpix} disagrees with datatype {datum_kind:?}; trusting datatype");
    }

    let pixdim: Vec<f64> = (0..8).map(|i| f.f32(offset::PIXDIM + 4 * i)).collect();
    let mut spacing = [1.0; 3];
    for ax in 0..3 {
        let value = pixdim[ax + 1];
        // unused trailing axes of 1D/2D images may carry a zero pixdim
        if ax >= ndim as usize && value == 0.0 {
            continue;
        }
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveSpacing { axis: ax, value });
        }
        spacing[ax] = value;
    }

    let mut vox_offset = f.f32(offset::VOX_OFFSET) as usize;
    if vox_offset < HEADER_SIZE {
        warn!("vox_offset {vox_offset} inside the header; using 352");
        vox_offset = HEADER_SIZE + 4;
    }
    let scale_slope = f.f32(offset::SCL_SLOPE);
    let scale_intercept = f.f32(offset::SCL_INTER);

    let sform_code = f.i16(offset::SFORM_CODE);
    let qform_code = f.i16(offset::QFORM_CODE);
    let affine = if sform_code > 0 {
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate().take(3) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f.f32(offset::SROW_X + 16 * r + 4 * c);
            }
        }
        m[3][3] = 1.0;
        Affine(m)
    } else if qform_code > 0 {
        let q = [0, 1, 2].map(|i| f.f32(offset::QUATERN_B + 4 * i));
        let t = [0, 1, 2].map(|i| f.f32(offset::QOFFSET_X + 4 * i));
        quatern_to_affine(q, t, spacing, pixdim[0])
    } else {
        warn!("no s-form or q-form; using a diagonal affine of the voxel spacing");
        Affine::from_spacing(spacing)
    };
    if affine.inverse().is_none() {
        return Err(Error::DegenerateAffine);
    }
    let norms = affine.column_norms();
    for ax in 0..3 {
        if ((norms[ax] - spacing[ax]) / spacing[ax]).abs() > SPACING_TOLERANCE {
            warn!(
                "affine column {ax} norm {} disagrees with pixdim {}",
                norms[ax], spacing[ax]
            );
        }
    }

    let n_samples = dims.iter().product::<usize>() * channels;
    let payload = n_samples * datum_kind.bytes();
    let end = vox_offset + payload;
    if bytes.len() < end {
        return Err(Error::TruncatedPayload {
            expected: payload,
            actual: bytes.len().saturating_sub(vox_offset),
        });
    }
    if bytes.len() > end {
        warn!("ignoring {} trailing bytes after the voxel data", bytes.len() - end);
    }
    let samples = Samples::decode(datum_kind, &bytes[vox_offset..end], endian);
    let mut opaque = Box::new([0u8; HEADER_SIZE]);
    opaque.copy_from_slice(&bytes[..HEADER_SIZE]);

    Ok(NiftiVolume {
        header: VolumeHeader {
            dims,
            channels,
            datum_kind,
            spacing,
            affine,
            scale_slope,
            scale_intercept,
            endian,
            opaque: Some(opaque),
            extension: bytes[HEADER_SIZE..vox_offset].to_vec(),
        },
        samples,
    })
}

fn quatern_to_affine(q: [f64; 3], offset: [f64; 3], spacing: [f64; 3], qfac: f64) -> Affine {
    let [mut b, mut c, mut d] = q;
    let mut a = 1.0 - (b * b + c * c + d * d);
    if a < 1e-7 {
        let n = 1.0 / (b * b + c * c + d * d).sqrt();
        b *= n;
        c *= n;
        d *= n;
        a = 0.0;
    } else {
        a = a.sqrt();
    }
    let qfac = if qfac < 0.0 { -1.0 } else { 1.0 };
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let scale = [spacing[0], spacing[1], qfac * spacing[2]];
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scale[j];
        }
        m[i][3] = offset[i];
    }
    m[3][3] = 1.0;
    Affine(m)
}

/// Quaternion (b, c, d), offsets and qfac approximating the affine's rotation.
fn affine_to_quatern(affine: &Affine) -> ([f64; 3], [f64; 3], f64) {
    let norms = affine.column_norms();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = affine.0[i][j] / norms[j];
        }
    }
    let qfac = if affine.det3() < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
        -1.0
    } else {
        1.0
    };
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        let xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        let yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        let zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    ([b, c, d], affine.translation(), qfac)
}

/// Serializes a header and payload to an uncompressed file image.
pub fn encode_volume(header: &VolumeHeader, samples: &Samples) -> Result<Vec<u8>> {
    let expected = header.n_samples();
    if samples.len() != expected {
        return Err(Error::SampleCountMismatch {
            expected,
            actual: samples.len(),
        });
    }
    if samples.kind() != header.datum_kind {
        return Err(Error::InvalidParameter(format!(
            "header datatype {:?} but samples are {:?}",
            header.datum_kind,
            samples.kind()
        )));
    }
    for ax in 0..3 {
        if header.dims[ax] == 0 || header.dims[ax] > i16::MAX as usize {
            return Err(Error::UnsupportedDims(format!("axis {ax} length {}", header.dims[ax])));
        }
        if !(header.spacing[ax] > 0.0) {
            return Err(Error::NonPositiveSpacing {
                axis: ax,
                value: header.spacing[ax],
            });
        }
    }
    if header.channels > i16::MAX as usize {
        return Err(Error::UnsupportedDims(format!("{} channels", header.channels)));
    }

    let endian = header.endian;
    let mut hdr = match &header.opaque {
        Some(raw) => **raw,
        None => {
            let mut h = [0u8; HEADER_SIZE];
            h[offset::XYZT_UNITS] = 2; // mm
            h
        }
    };
    let put = |h: &mut [u8; HEADER_SIZE], at: usize, bytes: &[u8]| {
        h[at..at + bytes.len()].copy_from_slice(bytes);
    };
    macro_rules! bytes {
        ($v:expr) => {
            match endian {
                Endian::Little => $v.to_le_bytes(),
                Endian::Big => $v.to_be_bytes(),
            }
        };
    }

    let mut ext = header.extension.clone();
    if ext.len() < 4 {
        ext.resize(4, 0);
    }
    while !(HEADER_SIZE + ext.len()).is_multiple_of(16) {
        ext.push(0);
    }
    let vox_offset = HEADER_SIZE + ext.len();

    put(&mut hdr, offset::SIZEOF_HDR, &bytes!(HEADER_SIZE as i32));
    let ndim: i16 = if header.channels > 1 { 4 } else { 3 };
    let dim = [
        ndim,
        header.dims[0] as i16,
        header.dims[1] as i16,
        header.dims[2] as i16,
        header.channels.max(1) as i16,
        1,
        1,
        1,
    ];
    for (i, d) in dim.iter().enumerate() {
        put(&mut hdr, offset::DIM + 2 * i, &bytes!(*d));
    }
    put(&mut hdr, offset::DATATYPE, &bytes!(header.datum_kind.code()));
    put(&mut hdr, offset::BITPIX, &bytes!((header.datum_kind.bytes() * 8) as i16));

    let (quat, qoffset, qfac) = affine_to_quatern(&header.affine);
    let mut pixdim = [1.0f32; 8];
    pixdim[0] = qfac as f32;
    for ax in 0..3 {
        pixdim[ax + 1] = header.spacing[ax] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut hdr, offset::PIXDIM + 4 * i, &bytes!(*p));
    }
    put(&mut hdr, offset::VOX_OFFSET, &bytes!(vox_offset as f32));
    put(&mut hdr, offset::SCL_SLOPE, &bytes!(header.scale_slope as f32));
    put(&mut hdr, offset::SCL_INTER, &bytes!(header.scale_intercept as f32));

    let f = Fields {
        bytes: &hdr,
        endian,
    };
    let qform_code = f.i16(offset::QFORM_CODE).max(1);
    let sform_code = f.i16(offset::SFORM_CODE).max(1);
    put(&mut hdr, offset::QFORM_CODE, &bytes!(qform_code));
    put(&mut hdr, offset::SFORM_CODE, &bytes!(sform_code));
    for i in 0..3 {
        put(&mut hdr, offset::QUATERN_B + 4 * i, &bytes!(quat[i] as f32));
        put(&mut hdr, offset::QOFFSET_X + 4 * i, &bytes!(qoffset[i] as f32));
    }
    for r in 0..3 {
        for c in 0..4 {
            put(&mut hdr, offset::SROW_X + 16 * r + 4 * c, &bytes!(header.affine.0[r][c] as f32));
        }
    }
    put(&mut hdr, offset::MAGIC, MAGIC);

    let mut out = Vec::with_capacity(vox_offset + expected * header.datum_kind.bytes());
    out.extend_from_slice(&hdr);
    out.extend_from_slice(&ext);
    samples.encode_into(&mut out, endian);
    Ok(out)
}

/// Writes a volume; gzip-compresses when the path ends in `.gz`.
pub fn write_volume(header: &VolumeHeader, samples: &Samples, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let gzip = path.extension().is_some_and(|e| e == "gz");
    write_volume_with(header, samples, path, gzip)
}

pub fn write_volume_with(
    header: &VolumeHeader,
    samples: &Samples,
    path: impl AsRef<Path>,
    gzip: bool,
) -> Result<()> {
    let path = path.as_ref();
    let raw = encode_volume(header, samples)?;
    let bytes = if gzip {
        let mut enc = GzEncoder::new(Vec::with_capacity(raw.len() / 4), Compression::fast());
        enc.write_all(&raw).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        raw
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_label_volume(path: impl AsRef<Path>, names: Option<&LabelMap>) -> Result<LabelVolume> {
    read_volume(path)?.to_label_volume(names)
}

pub fn read_scalar_volume(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    read_volume(path)?.to_scalar_volume()
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BrainMask> {
    read_volume(path)?.to_mask()
}

pub fn write_label_volume(volume: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let nv = NiftiVolume::from_label_volume(volume);
    write_volume(&nv.header, &nv.samples, path)
}

/// Writes real-valued samples as 32-bit floats.
pub fn write_scalar_volume(volume: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    let nv = NiftiVolume::from_scalar_volume(volume, DatumKind::F32);
    write_volume(&nv.header, &nv.samples, path)
}
