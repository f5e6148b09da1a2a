//! Binary erosion and dilation with cube or ball structuring elements.
//! Voxels outside the volume count as background.

use ndarray::{Array3, Axis};

use crate::volume::SegmentationMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub enum StructuringElement {
    /// Voxels within Euclidean radius.
    #[serde(rename = "BALL")]
    Ball,
    /// `(2r+1)³` cube.
    #[default]
    #[serde(rename = "CUBE")]
    Cube,
}

impl std::str::FromStr for StructuringElement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BALL" => Ok(Self::Ball),
            "CUBE" => Ok(Self::Cube),
            other => Err(format!("unknown structuring element `{other}` (expected BALL or CUBE)")),
        }
    }
}

impl std::fmt::Display for StructuringElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ball => "BALL",
            Self::Cube => "CUBE",
        })
    }
}

/// Offsets `(dz, dy, dx)` covered by the element.
pub fn element_offsets(se: StructuringElement, radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if se == StructuringElement::Cube || dz * dz + dy * dy + dx * dx <= r * r {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

/// 1-D sliding window along `axis`: erosion needs the whole window set, dilation any of it.
fn window_pass(src: &Array3<bool>, axis: usize, radius: usize, erode: bool) -> Array3<bool> {
    let mut out = src.clone();
    for (lane_in, mut lane_out) in src.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        let n = lane_in.len();
        for i in 0..n {
            let lo = i as isize - radius as isize;
            let hi = i + radius;
            lane_out[i] = if erode {
                lo >= 0 && hi < n && (lo as usize..=hi).all(|j| lane_in[j])
            } else {
                (lo.max(0) as usize..=hi.min(n - 1)).any(|j| lane_in[j])
            };
        }
    }
    out
}

fn offset_pass(src: &Array3<bool>, offsets: &[[isize; 3]], erode: bool) -> Array3<bool> {
    let [d, h, w] = [src.shape()[0], src.shape()[1], src.shape()[2]].map(|s| s as isize);
    Array3::from_shape_fn(src.raw_dim(), |(z, y, x)| {
        let hit = |o: &[isize; 3]| {
            let (zz, yy, xx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
            (0..d).contains(&zz) && (0..h).contains(&yy) && (0..w).contains(&xx) && src[[zz as usize, yy as usize, xx as usize]]
        };
        if erode {
            offsets.iter().all(hit)
        } else {
            offsets.iter().any(hit)
        }
    })
}

fn morph(m: &SegmentationMask, se: StructuringElement, radius: usize, erode: bool) -> SegmentationMask {
    if radius == 0 {
        return m.clone();
    }
    let data = match se {
        StructuringElement::Cube => {
            (0..3).fold(m.data().clone(), |acc, axis| window_pass(&acc, axis, radius, erode))
        }
        StructuringElement::Ball => offset_pass(m.data(), &element_offsets(se, radius), erode),
    };
    SegmentationMask::new(data, m.spacing()).expect("spacing already validated")
}

pub fn erode(m: &SegmentationMask, se: StructuringElement, radius: usize) -> SegmentationMask {
    morph(m, se, radius, true)
}

pub fn dilate(m: &SegmentationMask, se: StructuringElement, radius: usize) -> SegmentationMask {
    morph(m, se, radius, false)
}

/// Closing on the volume embedded in an unbounded background: dilation may
/// spill past the faces, so the erosion runs on a grid padded by `radius`.
pub fn closing(m: &SegmentationMask, se: StructuringElement, radius: usize) -> SegmentationMask {
    if radius == 0 {
        return m.clone();
    }
    let [d, h, w] = m.shape();
    let mut padded = Array3::from_elem((d + 2 * radius, h + 2 * radius, w + 2 * radius), false);
    padded.slice_mut(ndarray::s![radius..radius + d, radius..radius + h, radius..radius + w]).assign(m.data());
    let padded = SegmentationMask::new(padded, m.spacing()).expect("spacing already validated");
    let closed = erode(&dilate(&padded, se, radius), se, radius);
    let data = closed.data().slice(ndarray::s![radius..radius + d, radius..radius + h, radius..radius + w]).to_owned();
    SegmentationMask::new(data, m.spacing()).expect("spacing already validated")
}
