//! RAW_F32: little-endian f32 payload (z slowest) plus a UTF-8 sidecar with
//! `shape=D,H,W`, `spacing=sz,sy,sx`, `domain=HU|UNIT|ARBITRARY`.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::{Domain, Volume};

/// Sidecar path for a payload: `<payload>.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| Error::format("sidecar", format!("bad {key} entry `{p}`"))))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|_| Error::format("sidecar", format!("{key} needs three entries")))
}

pub(super) fn load(path: &Path) -> Result<Volume> {
    let meta_path = sidecar_path(path);
    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let (mut shape, mut spacing, mut domain, mut provenance) = (None, None, Domain::Arbitrary, String::new());
    for line in meta.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format("sidecar", format!("line `{line}` is not key=value")))?;
        match key.trim() {
            "shape" => shape = Some(parse_list::<usize>("shape", value)?),
            "spacing" => spacing = Some(parse_list::<f64>("spacing", value)?),
            "domain" => domain = value.parse()?,
            "provenance" => provenance = value.trim().to_owned(),
            other => return Err(Error::format("sidecar", format!("unknown key `{other}`"))),
        }
    }
    let shape = shape.ok_or_else(|| Error::format("sidecar", "missing shape"))?;
    let spacing = spacing.unwrap_or([1.0; 3]);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::format(
            "RAW_F32 payload",
            format!("shape {shape:?} needs {} bytes, file has {}", 4 * n, bytes.len()),
        ));
    }
    let mut data = vec![0f32; n];
    LittleEndian::read_f32_into(&bytes, &mut data);
    let arr = Array3::from_shape_vec(shape, data).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(Volume::new(arr, spacing, domain)?.with_provenance(provenance))
}

pub(super) fn save(v: &Volume, path: &Path) -> Result<()> {
    let values: Vec<f32> = v.data().iter().copied().collect();
    let mut bytes = vec![0u8; 4 * values.len()];
    LittleEndian::write_f32_into(&values, &mut bytes);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let [d, h, w] = v.shape();
    let [sz, sy, sx] = v.spacing();
    let mut meta = format!("shape={d},{h},{w}\nspacing={sz},{sy},{sx}\ndomain={}\n", v.domain());
    if !v.provenance().is_empty() {
        meta.push_str(&format!("provenance={}\n", v.provenance().replace('\n', " ")));
    }
    let meta_path = sidecar_path(path);
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}
