//! Minimal NIfTI-1 reader/writer: single-file (`n+1`), optionally gzipped,
//! axis-aligned volumes of float or common integer types.
//!
//! NIfTI stores x fastest; our arrays are `(z, y, x)` with x fastest, so the
//! byte order of the payload maps directly and only the dims are reversed.
//! The intensity domain travels in the `descrip` field as `domain=<TAG>`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::{Domain, Volume};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    Ok(match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::format("NIfTI header", format!("unsupported datatype {other}"))),
    })
}

fn decode<B: ByteOrder>(datatype: i16, payload: &[u8], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    match datatype {
        DT_UINT8 => out.extend(payload[..n].iter().map(|&b| b as f64)),
        DT_INT8 => out.extend(payload[..n].iter().map(|&b| b as i8 as f64)),
        DT_INT16 => out.extend(payload.chunks_exact(2).take(n).map(|c| B::read_i16(c) as f64)),
        DT_UINT16 => out.extend(payload.chunks_exact(2).take(n).map(|c| B::read_u16(c) as f64)),
        DT_INT32 => out.extend(payload.chunks_exact(4).take(n).map(|c| B::read_i32(c) as f64)),
        DT_UINT32 => out.extend(payload.chunks_exact(4).take(n).map(|c| B::read_u32(c) as f64)),
        DT_FLOAT32 => out.extend(payload.chunks_exact(4).take(n).map(|c| B::read_f32(c) as f64)),
        DT_FLOAT64 => out.extend(payload.chunks_exact(8).take(n).map(B::read_f64)),
        _ => unreachable!("datatype validated"),
    }
    out
}

struct Header {
    dims: [usize; 3],
    pixdim: [f64; 3],
    datatype: i16,
    vox_offset: usize,
    slope: f64,
    inter: f64,
    descrip: String,
}

fn parse_header<B: ByteOrder>(h: &[u8]) -> Result<Header> {
    let ndim = B::read_i16(&h[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format("NIfTI header", format!("dim[0] = {ndim}")));
    }
    let mut dim = [1usize; 7];
    for (i, d) in dim.iter_mut().enumerate().take(ndim as usize) {
        let v = B::read_i16(&h[42 + 2 * i..44 + 2 * i]);
        if v < 1 {
            return Err(Error::format("NIfTI header", format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    if dim[3..].iter().any(|&d| d != 1) {
        return Err(Error::format("NIfTI header", "only 3-D volumes are supported"));
    }
    let datatype = B::read_i16(&h[70..72]);
    bytes_per_voxel(datatype)?;
    let pix = |i: usize| B::read_f32(&h[76 + 4 * i..80 + 4 * i]) as f64;
    let pixdim = [pix(3), pix(2), pix(1)].map(|p| if p.is_finite() && p > 0.0 { p } else { 1.0 });
    let vox_offset = B::read_f32(&h[108..112]);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::format("NIfTI header", format!("vox_offset {vox_offset}")));
    }
    let magic = &h[344..348];
    if magic != b"n+1\0" {
        return Err(Error::format("NIfTI header", "only single-file n+1 images are supported"));
    }
    let descrip_raw = &h[148..228];
    let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(80);
    Ok(Header {
        dims: [dim[2], dim[1], dim[0]],
        pixdim,
        datatype,
        vox_offset: vox_offset as usize,
        slope: B::read_f32(&h[112..116]) as f64,
        inter: B::read_f32(&h[116..120]) as f64,
        descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
    })
}

fn domain_from_descrip(descrip: &str) -> Result<Domain> {
    match descrip.split_whitespace().find_map(|tok| tok.strip_prefix("domain=")) {
        Some(tag) => tag.parse(),
        None => Ok(Domain::Arbitrary),
    }
}

pub(super) fn load(path: &Path) -> Result<Volume> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format("NIfTI gzip stream", e.to_string()))?;
        out
    } else {
        raw
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format("NIfTI header", format!("file has only {} bytes", bytes.len())));
    }
    let big_endian = LittleEndian::read_i32(&bytes[0..4]) != HEADER_SIZE as i32;
    if big_endian && BigEndian::read_i32(&bytes[0..4]) != HEADER_SIZE as i32 {
        return Err(Error::format("NIfTI header", "sizeof_hdr is not 348"));
    }
    let header = if big_endian {
        parse_header::<BigEndian>(&bytes[..HEADER_SIZE])?
    } else {
        parse_header::<LittleEndian>(&bytes[..HEADER_SIZE])?
    };
    let n: usize = header.dims.iter().product();
    let need = n * bytes_per_voxel(header.datatype)?;
    let payload = bytes.get(header.vox_offset..).unwrap_or(&[]);
    if payload.len() < need {
        return Err(Error::format(
            "NIfTI payload",
            format!("dims {:?} need {need} bytes, only {} present", header.dims, payload.len()),
        ));
    }
    let mut values = if big_endian {
        decode::<BigEndian>(header.datatype, payload, n)
    } else {
        decode::<LittleEndian>(header.datatype, payload, n)
    };
    if header.slope != 0.0 && header.slope.is_finite() && (header.slope != 1.0 || header.inter != 0.0) {
        for v in &mut values {
            *v = *v * header.slope + header.inter;
        }
    }
    let data = Array3::from_shape_vec(header.dims, values.into_iter().map(|v| v as f32).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let domain = domain_from_descrip(&header.descrip)?;
    Ok(Volume::new(data, header.pixdim, domain)?.with_provenance(path.display().to_string()))
}

fn encode_header(v: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let le = |buf: &mut [u8], off: usize, val: i16| LittleEndian::write_i16(&mut buf[off..off + 2], val);
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    let [d, hh, w] = v.shape();
    let dims = [3i16, w as i16, hh as i16, d as i16, 1, 1, 1, 1];
    for (i, &dv) in dims.iter().enumerate() {
        le(&mut h, 40 + 2 * i, dv);
    }
    le(&mut h, 70, DT_FLOAT32);
    le(&mut h, 72, 32);
    let [sz, sy, sx] = v.spacing();
    let pixdim = [1.0f32, sx as f32, sy as f32, sz as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, &p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..80 + 4 * i], p);
    }
    LittleEndian::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..116], 1.0);
    h[123] = 2; // mm
    let descrip = format!("domain={}", v.domain());
    h[148..148 + descrip.len()].copy_from_slice(descrip.as_bytes());
    // sform: diagonal scaling, code 2 (aligned)
    le(&mut h, 254, 2);
    LittleEndian::write_f32(&mut h[280..284], sx as f32);
    LittleEndian::write_f32(&mut h[300..304], sy as f32);
    LittleEndian::write_f32(&mut h[320..324], sz as f32);
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

pub(super) fn save(v: &Volume, path: &Path) -> Result<()> {
    if v.shape().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidArgument(format!("shape {:?} exceeds NIfTI-1 limits", v.shape())));
    }
    let mut bytes = encode_header(v);
    let values: Vec<f32> = v.data().iter().copied().collect();
    let start = bytes.len();
    bytes.resize(start + 4 * values.len(), 0);
    LittleEndian::write_f32_into(&values, &mut bytes[start..]);
    let gz = path.to_string_lossy().to_ascii_lowercase().ends_with(".gz");
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()).map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
