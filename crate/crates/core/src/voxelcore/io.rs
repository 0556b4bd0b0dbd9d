//! Volume file formats.
//!
//! VXV1 layout (all little-endian):
//!
//! ```text
//! magic      4 bytes  "VXV1"
//! dims       3 × u32
//! affine    16 × f64  row-major voxel→world
//! voxels     N × f32  C order, axis 2 fastest
//! ```
//!
//! NIfTI-1 single-file images are read-only, limited to uint8, int16 and
//! float32 payloads.

use super::{Affine, VoxelGrid};
use thiserror::Error;

pub const VXV1_MAGIC: &[u8; 4] = b"VXV1";
const NIFTI_HEADER_SIZE: usize = 348;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated payload: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("format {0:?} cannot be written")]
    ReadOnlyFormat(VolumeFormat),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeFormat {
    Vxv1,
    Nifti1,
}

impl VolumeFormat {
    /// Guess from a file name; `.nii` means NIfTI-1, anything else VXV1.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => VolumeFormat::Nifti1,
            _ => VolumeFormat::Vxv1,
        }
    }
}

/// Decode a volume. With no hint, the VXV1 magic is sniffed first and
/// everything else is tried as NIfTI-1.
pub fn load_volume(bytes: &[u8], hint: Option<VolumeFormat>) -> Result<VoxelGrid, ParseError> {
    let fmt = hint.unwrap_or(if bytes.starts_with(VXV1_MAGIC) { VolumeFormat::Vxv1 } else { VolumeFormat::Nifti1 });
    match fmt {
        VolumeFormat::Vxv1 => read_vxv1(bytes),
        VolumeFormat::Nifti1 => read_nifti1(bytes),
    }
}

pub fn save_volume(g: &VoxelGrid, format: VolumeFormat) -> Result<Vec<u8>, ParseError> {
    match format {
        VolumeFormat::Vxv1 => Ok(write_vxv1(g)),
        VolumeFormat::Nifti1 => Err(ParseError::ReadOnlyFormat(format)),
    }
}

pub fn write_vxv1(g: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 + 128 + 4 * g.len());
    out.extend_from_slice(VXV1_MAGIC);
    for d in g.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in g.affine().to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in g.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take(bytes: &[u8], at: usize, n: usize) -> Result<&[u8], ParseError> {
    bytes.get(at..at + n).ok_or(ParseError::Truncated { needed: at + n, have: bytes.len() })
}

pub fn read_vxv1(bytes: &[u8]) -> Result<VoxelGrid, ParseError> {
    let magic = take(bytes, 0, 4)?;
    if magic != VXV1_MAGIC {
        return Err(ParseError::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let mut shape = [0usize; 3];
    for (a, d) in shape.iter_mut().enumerate() {
        *d = u32::from_le_bytes(take(bytes, 4 + 4 * a, 4)?.try_into().unwrap()) as usize;
    }
    let mut aff = [0.0f64; 16];
    for (i, v) in aff.iter_mut().enumerate() {
        *v = f64::from_le_bytes(take(bytes, 16 + 8 * i, 8)?.try_into().unwrap());
    }
    let n: usize = shape.iter().product();
    let payload = take(bytes, 144, 4 * n)?;
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    VoxelGrid::new(shape, values, Affine::from_row_major(&aff)).map_err(|e| ParseError::InvalidHeader(e.to_string()))
}

struct Endian {
    little: bool,
}

impl Endian {
    fn i16(&self, b: &[u8], at: usize) -> i16 {
        let a = [b[at], b[at + 1]];
        if self.little { i16::from_le_bytes(a) } else { i16::from_be_bytes(a) }
    }
    fn f32(&self, b: &[u8], at: usize) -> f32 {
        let a = [b[at], b[at + 1], b[at + 2], b[at + 3]];
        if self.little { f32::from_le_bytes(a) } else { f32::from_be_bytes(a) }
    }
}

/// Read a NIfTI-1 image. Endianness comes from the `sizeof_hdr` field;
/// the affine comes from the s-form rows when `sform_code > 0`, otherwise
/// from `pixdim`. Voxels are reordered from Fortran to C order.
pub fn read_nifti1(bytes: &[u8]) -> Result<VoxelGrid, ParseError> {
    let hdr = take(bytes, 0, NIFTI_HEADER_SIZE)?;
    let little = if i32::from_le_bytes(hdr[0..4].try_into().unwrap()) == 348 {
        true
    } else if i32::from_be_bytes(hdr[0..4].try_into().unwrap()) == 348 {
        false
    } else {
        return Err(ParseError::InvalidHeader("sizeof_hdr is not 348 in either byte order".into()));
    };
    let e = Endian { little };

    let magic = &hdr[344..348];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(ParseError::BadMagic(String::from_utf8_lossy(magic).into_owned())),
    };

    let ndim = e.i16(hdr, 40);
    let dims: Vec<i16> = (1..=7).map(|i| e.i16(hdr, 40 + 2 * i)).collect();
    if !(1..=7).contains(&ndim) {
        return Err(ParseError::InvalidHeader(format!("dim[0] = {ndim}")));
    }
    if ndim > 3 && dims[3..ndim as usize].iter().any(|&d| d > 1) {
        return Err(ParseError::InvalidHeader("only 3D volumes are supported".into()));
    }
    let mut shape = [1usize; 3];
    for a in 0..(ndim as usize).min(3) {
        if dims[a] < 1 {
            return Err(ParseError::InvalidHeader(format!("dim[{}] = {}", a + 1, dims[a])));
        }
        shape[a] = dims[a] as usize;
    }

    let datatype = e.i16(hdr, 70);
    let bytes_per = match datatype {
        2 => 1,
        4 => 2,
        16 => 4,
        other => return Err(ParseError::UnsupportedDatatype(other)),
    };
    let pixdim: Vec<f32> = (0..8).map(|i| e.f32(hdr, 76 + 4 * i)).collect();
    let vox_offset = e.f32(hdr, 108);
    let slope = e.f32(hdr, 112);
    let inter = e.f32(hdr, 116);
    let sform_code = e.i16(hdr, 254);

    let affine = if sform_code > 0 {
        let mut m = Affine::identity();
        for r in 0..3 {
            for c in 0..4 {
                m.0[r][c] = e.f32(hdr, 280 + 16 * r + 4 * c) as f64;
            }
        }
        m
    } else {
        let sp: [f64; 3] = std::array::from_fn(|a| {
            let p = pixdim[a + 1].abs() as f64;
            if p > 0.0 { p } else { 1.0 }
        });
        Affine::from_spacing(sp, [0.0; 3])
    };

    let offset = if single_file { (vox_offset.max(352.0)) as usize } else { NIFTI_HEADER_SIZE };
    let n: usize = shape.iter().product();
    let data = take(bytes, offset, n * bytes_per)?;
    let raw: Vec<f32> = match datatype {
        2 => data.iter().map(|&b| b as f32).collect(),
        4 => data.chunks_exact(2).map(|c| e.i16(c, 0) as f32).collect(),
        _ => data.chunks_exact(4).map(|c| e.f32(c, 0)).collect(),
    };
    let (slope, inter) = if slope != 0.0 && slope.is_finite() { (slope, inter) } else { (1.0, 0.0) };

    // NIfTI stores x fastest
    let mut values = vec![0.0f32; n];
    let [nx, ny, nz] = shape;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let src = i + nx * (j + ny * k);
                values[(i * ny + j) * nz + k] = raw[src] * slope + inter;
            }
        }
    }
    VoxelGrid::new(shape, values, affine).map_err(|e| ParseError::InvalidHeader(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vxv1_single_voxel_layout() {
        let g = VoxelGrid::new([1, 1, 1], vec![0.0], Affine::identity()).unwrap();
        let b = save_volume(&g, VolumeFormat::Vxv1).unwrap();
        assert_eq!(b.len(), 4 + 12 + 128 + 4);
        assert_eq!(&b[..4], b"VXV1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&b[144..], &[0, 0, 0, 0]);
    }

    #[test]
    fn vxv1_roundtrip_and_determinism() {
        let a = Affine::from_spacing([0.9, 0.9, 3.0], [-10.0, 4.5, 2.25]);
        let g = VoxelGrid::new([2, 3, 4], (0..24).map(|v| v as f32 * 0.37 - 2.0).collect(), a).unwrap();
        let b1 = save_volume(&g, VolumeFormat::Vxv1).unwrap();
        let b2 = save_volume(&g, VolumeFormat::Vxv1).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(load_volume(&b1, None).unwrap(), g);
    }

    #[test]
    fn vxv1_errors_are_distinct() {
        assert!(matches!(read_vxv1(b"VXV2aaaa"), Err(ParseError::BadMagic(_))));
        let g = VoxelGrid::filled([2, 2, 2], 1.0, Affine::identity()).unwrap();
        let b = write_vxv1(&g);
        assert!(matches!(read_vxv1(&b[..b.len() - 1]), Err(ParseError::Truncated { .. })));
    }

    #[test]
    fn nifti_cannot_be_written() {
        let g = VoxelGrid::filled([1, 1, 1], 1.0, Affine::identity()).unwrap();
        assert_eq!(save_volume(&g, VolumeFormat::Nifti1), Err(ParseError::ReadOnlyFormat(VolumeFormat::Nifti1)));
    }
}
