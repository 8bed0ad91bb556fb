//! Light-field data model: the 4D sample grid, the four subspace
//! tokenizations with exact inverses, SAI/MacPI views, geometry-preserving
//! augmentation, and file I/O.
//!
//! Grid axis order is `[u, v, h, w, c]` (angular outer, spatial inner,
//! channel last), row-major. Feature tensors add a batch axis in front:
//! `[B, U, V, H, W, C]`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};

/// A 4D light field: `u_res x v_res` views of `h_res x w_res` pixels with
/// `channels` samples each, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField4D {
    pub u_res: usize,
    pub v_res: usize,
    pub h_res: usize,
    pub w_res: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl LightField4D {
    pub fn new(u_res: usize, v_res: usize, h_res: usize, w_res: usize, channels: usize) -> Self {
        assert!(u_res >= 1 && v_res >= 1 && h_res >= 1 && w_res >= 1 && channels >= 1);
        LightField4D {
            u_res,
            v_res,
            h_res,
            w_res,
            channels,
            data: vec![0.0; u_res * v_res * h_res * w_res * channels],
        }
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> usize {
        (((u * self.v_res + v) * self.h_res + h) * self.w_res + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> f32 {
        self.data[self.index(u, v, h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, h: usize, w: usize, c: usize, value: f32) {
        let i = self.index(u, v, h, w, c);
        self.data[i] = value;
    }

    pub fn views(&self) -> usize {
        self.u_res * self.v_res
    }

    /// One sub-aperture image as `[H, W, C]` values.
    pub fn view_data(&self, u: usize, v: usize) -> &[f32] {
        let stride = self.h_res * self.w_res * self.channels;
        let start = (u * self.v_res + v) * stride;
        &self.data[start..start + stride]
    }

    /// Stacks light fields into a `[B, U, V, H, W, C]` tensor.
    pub fn batch_to_tensor<E: Elem>(lfs: &[&LightField4D]) -> Tensor<E> {
        assert!(!lfs.is_empty());
        let first = lfs[0];
        let mut data = Vec::with_capacity(lfs.len() * first.data.len());
        for lf in lfs {
            assert_eq!(
                (lf.u_res, lf.v_res, lf.h_res, lf.w_res, lf.channels),
                (
                    first.u_res,
                    first.v_res,
                    first.h_res,
                    first.w_res,
                    first.channels
                ),
                "batch_to_tensor: inconsistent light-field extents"
            );
            data.extend(lf.data.iter().map(|&v| E::of_f64(v as f64)));
        }
        Tensor::from_vec(
            data,
            &[
                lfs.len(),
                first.u_res,
                first.v_res,
                first.h_res,
                first.w_res,
                first.channels,
            ],
        )
    }

    /// Splits a `[B, U, V, H, W, C]` tensor back into light fields, clamping
    /// to `[0, 1]` (values are only clamped at I/O boundaries).
    pub fn batch_from_tensor<E: Elem>(t: &Tensor<E>, clamp: bool) -> Vec<LightField4D> {
        let s = t.shape();
        assert_eq!(s.len(), 6, "expected [B,U,V,H,W,C], got {:?}", s);
        let per = s[1] * s[2] * s[3] * s[4] * s[5];
        (0..s[0])
            .map(|b| {
                let mut lf = LightField4D::new(s[1], s[2], s[3], s[4], s[5]);
                for (dst, src) in lf.data.iter_mut().zip(&t.data()[b * per..(b + 1) * per]) {
                    let v = src.as_f64() as f32;
                    *dst = if clamp { v.clamp(0.0, 1.0) } else { v };
                }
                lf
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Subspace tokenization
// ---------------------------------------------------------------------------

/// The four subspace sequence layouts. Within a sequence, tokens follow
/// raster order of the two in-sequence axes (first outer, second inner);
/// groups raster the remaining axes with batch outermost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Layout {
    /// G = B*U*V, L = H*W, token order (h, w).
    Spatial,
    /// G = B*H*W, L = U*V, token order (u, v).
    Angular,
    /// G = B*V*W, L = U*H, token order (u, h).
    EpiH,
    /// G = B*U*H, L = V*W, token order (v, w).
    EpiW,
}

impl Layout {
    /// Axis permutation applied to `[B, U, V, H, W, C]` so that the two
    /// in-sequence axes become adjacent (positions 3 and 4).
    pub fn permute_order(self) -> [usize; 6] {
        match self {
            Layout::Spatial => [0, 1, 2, 3, 4, 5],
            Layout::Angular => [0, 3, 4, 1, 2, 5],
            Layout::EpiH => [0, 2, 4, 1, 3, 5],
            Layout::EpiW => [0, 1, 3, 2, 4, 5],
        }
    }

    /// `(G, L)` for a batched grid.
    pub fn group_len(self, b: usize, u: usize, v: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Layout::Spatial => (b * u * v, h * w),
            Layout::Angular => (b * h * w, u * v),
            Layout::EpiH => (b * v * w, u * h),
            Layout::EpiW => (b * u * h, v * w),
        }
    }

    pub fn all() -> [Layout; 4] {
        [Layout::Spatial, Layout::Angular, Layout::EpiH, Layout::EpiW]
    }
}

/// Origin extents needed to invert a tokenization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridDims {
    pub b: usize,
    pub u: usize,
    pub v: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl GridDims {
    pub fn of<E: Elem>(grid: &Tensor<E>) -> Self {
        let s = grid.shape();
        assert_eq!(s.len(), 6, "expected [B,U,V,H,W,C], got {:?}", s);
        GridDims {
            b: s[0],
            u: s[1],
            v: s[2],
            h: s[3],
            w: s[4],
            c: s[5],
        }
    }
}

/// A layout-tagged batch of token sequences `[G, L, C]`.
pub struct TokenSequenceBatch<E: Elem> {
    pub layout: Layout,
    pub dims: GridDims,
    pub data: Tensor<E>,
}

impl<E: Elem> TokenSequenceBatch<E> {
    pub fn groups(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Flattens a `[B, U, V, H, W, C]` grid into token sequences.
pub fn tokenize<E: Elem>(grid: &Tensor<E>, layout: Layout) -> TokenSequenceBatch<E> {
    let dims = GridDims::of(grid);
    let (g, l) = layout.group_len(dims.b, dims.u, dims.v, dims.h, dims.w);
    let data = match layout {
        // Spatial order matches the grid's memory order: reshape only.
        Layout::Spatial => grid.reshape(&[g, l, dims.c]),
        _ => grid
            .permute(&layout.permute_order())
            .reshape(&[g, l, dims.c]),
    };
    TokenSequenceBatch { layout, dims, data }
}

/// Exact inverse of [`tokenize`].
pub fn untokenize<E: Elem>(t: &TokenSequenceBatch<E>) -> Tensor<E> {
    let d = t.dims;
    let (g, l) = t.layout.group_len(d.b, d.u, d.v, d.h, d.w);
    assert_eq!(
        (t.groups(), t.len()),
        (g, l),
        "untokenize: token batch {:?} inconsistent with origin dims {:?}",
        t.data.shape(),
        d
    );
    let order = t.layout.permute_order();
    let permuted_shape: Vec<usize> = {
        let s = [d.b, d.u, d.v, d.h, d.w, d.c];
        order.iter().map(|&o| s[o]).collect()
    };
    let expanded = t.data.reshape(&permuted_shape);
    match t.layout {
        Layout::Spatial => expanded,
        _ => expanded.permute(&crate::lf::inverse_permutation(&order)),
    }
}

pub(crate) fn inverse_permutation(order: &[usize; 6]) -> Vec<usize> {
    let mut inv = vec![0usize; 6];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

/// Reverses every sequence in the batch (axis `L`). Involutive.
pub fn reverse_sequence<E: Elem>(t: &TokenSequenceBatch<E>) -> TokenSequenceBatch<E> {
    TokenSequenceBatch {
        layout: t.layout,
        dims: t.dims,
        data: t.data.reverse(1),
    }
}

// ---------------------------------------------------------------------------
// SAI <-> MacPI
// ---------------------------------------------------------------------------

/// Macro-pixel image: pixel `(h*U + u, w*V + v)` holds SAI sample
/// `(u, v, h, w)`. Returns `(data, height, width)` with the channel count of
/// the input.
pub fn sai_to_macpi(lf: &LightField4D) -> (Vec<f32>, usize, usize) {
    let (u_res, v_res, h_res, w_res, c) =
        (lf.u_res, lf.v_res, lf.h_res, lf.w_res, lf.channels);
    let height = h_res * u_res;
    let width = w_res * v_res;
    let mut out = vec![0.0f32; height * width * c];
    for u in 0..u_res {
        for v in 0..v_res {
            for h in 0..h_res {
                for w in 0..w_res {
                    for ch in 0..c {
                        out[((h * u_res + u) * width + (w * v_res + v)) * c + ch] =
                            lf.get(u, v, h, w, ch);
                    }
                }
            }
        }
    }
    (out, height, width)
}

/// Exact inverse of [`sai_to_macpi`].
pub fn macpi_to_sai(
    data: &[f32],
    height: usize,
    width: usize,
    channels: usize,
    u_res: usize,
    v_res: usize,
) -> Result<LightField4D> {
    if height % u_res != 0 || width % v_res != 0 {
        return Err(Error::Format(format!(
            "MacPI extents {}x{} not divisible by angular resolution {}x{}",
            height, width, u_res, v_res
        )));
    }
    let h_res = height / u_res;
    let w_res = width / v_res;
    let mut lf = LightField4D::new(u_res, v_res, h_res, w_res, channels);
    for u in 0..u_res {
        for v in 0..v_res {
            for h in 0..h_res {
                for w in 0..w_res {
                    for ch in 0..channels {
                        let val = data[((h * u_res + u) * width + (w * v_res + v)) * channels + ch];
                        lf.set(u, v, h, w, ch, val);
                    }
                }
            }
        }
    }
    Ok(lf)
}

// ---------------------------------------------------------------------------
// Geometry-preserving augmentation
// ---------------------------------------------------------------------------

/// Augmentations that keep epipolar geometry intact: flips reverse an
/// angular axis together with its paired spatial axis; the rotation turns
/// both planes jointly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AugmentOp {
    /// Reverses both `w` and `v`.
    HFlip,
    /// Reverses both `h` and `u`.
    VFlip,
    /// 90 degrees clockwise on both the spatial and the angular plane.
    Rot90,
}

pub fn augment(lf: &LightField4D, op: AugmentOp) -> LightField4D {
    let (u_res, v_res, h_res, w_res, c) =
        (lf.u_res, lf.v_res, lf.h_res, lf.w_res, lf.channels);
    match op {
        AugmentOp::HFlip => {
            let mut out = LightField4D::new(u_res, v_res, h_res, w_res, c);
            for u in 0..u_res {
                for v in 0..v_res {
                    for h in 0..h_res {
                        for w in 0..w_res {
                            for ch in 0..c {
                                out.set(
                                    u,
                                    v,
                                    h,
                                    w,
                                    ch,
                                    lf.get(u, v_res - 1 - v, h, w_res - 1 - w, ch),
                                );
                            }
                        }
                    }
                }
            }
            out
        }
        AugmentOp::VFlip => {
            let mut out = LightField4D::new(u_res, v_res, h_res, w_res, c);
            for u in 0..u_res {
                for v in 0..v_res {
                    for h in 0..h_res {
                        for w in 0..w_res {
                            for ch in 0..c {
                                out.set(
                                    u,
                                    v,
                                    h,
                                    w,
                                    ch,
                                    lf.get(u_res - 1 - u, v, h_res - 1 - h, w, ch),
                                );
                            }
                        }
                    }
                }
            }
            out
        }
        AugmentOp::Rot90 => {
            // Output extents swap: (U,V,H,W) -> (V,U,W,H).
            let mut out = LightField4D::new(v_res, u_res, w_res, h_res, c);
            for u in 0..v_res {
                for v in 0..u_res {
                    for h in 0..w_res {
                        for w in 0..h_res {
                            for ch in 0..c {
                                out.set(
                                    u,
                                    v,
                                    h,
                                    w,
                                    ch,
                                    lf.get(u_res - 1 - v, u, h_res - 1 - w, h, ch),
                                );
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

/// Applies the same augmentation to an LR/HR pair.
pub fn augment_pair(
    lf_lr: &LightField4D,
    lf_hr: &LightField4D,
    op: AugmentOp,
) -> (LightField4D, LightField4D) {
    (augment(lf_lr, op), augment(lf_hr, op))
}

// ---------------------------------------------------------------------------
// LFB container I/O
// ---------------------------------------------------------------------------

const LFB_MAGIC: &[u8; 4] = b"LFB1";

/// Writes the LFB container: magic `LFB1`, little-endian `u16` extents
/// `U, V, H, W, C`, then the full payload as little-endian `f32`.
pub fn write_lfb(path: &Path, lf: &LightField4D) -> Result<()> {
    for (name, ext) in [
        ("U", lf.u_res),
        ("V", lf.v_res),
        ("H", lf.h_res),
        ("W", lf.w_res),
        ("C", lf.channels),
    ] {
        if ext > u16::MAX as usize {
            return Err(Error::Format(format!(
                "LFB extent {} = {} overflows u16",
                name, ext
            )));
        }
    }
    let mut buf = Vec::with_capacity(14 + lf.data.len() * 4);
    buf.extend_from_slice(LFB_MAGIC);
    for ext in [lf.u_res, lf.v_res, lf.h_res, lf.w_res, lf.channels] {
        buf.extend_from_slice(&(ext as u16).to_le_bytes());
    }
    for v in &lf.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads an LFB container; round trip with [`write_lfb`] is bit-exact.
pub fn read_lfb(path: &Path) -> Result<LightField4D> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[0..4] != LFB_MAGIC {
        return Err(Error::Format(format!("bad LFB magic in {}", path.display())));
    }
    if bytes.len() < 14 {
        return Err(Error::Format(format!(
            "truncated LFB header in {}",
            path.display()
        )));
    }
    let ext = |i: usize| u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]) as usize;
    let (u, v, h, w, c) = (ext(0), ext(1), ext(2), ext(3), ext(4));
    if u == 0 || v == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::Format(format!(
            "zero extent in LFB header of {}",
            path.display()
        )));
    }
    let count = u * v * h * w * c;
    let expected = 14 + count * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "LFB payload size mismatch in {}: expected {} bytes, got {}",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    let mut lf = LightField4D::new(u, v, h, w, c);
    for (i, chunk) in bytes[14..].chunks_exact(4).enumerate() {
        lf.data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Ok(lf)
}

// ---------------------------------------------------------------------------
// PGM per-view grids
// ---------------------------------------------------------------------------

/// Exports every view as `view_{u}_{v}.pgm` (P5, 8-bit, round-to-nearest).
pub fn export_pgm_grid(dir: &Path, lf: &LightField4D) -> Result<()> {
    if lf.channels != 1 {
        return Err(Error::Format(format!(
            "PGM export needs a single channel, light field has {}",
            lf.channels
        )));
    }
    fs::create_dir_all(dir)?;
    for u in 0..lf.u_res {
        for v in 0..lf.v_res {
            let mut buf = Vec::with_capacity(32 + lf.h_res * lf.w_res);
            buf.extend_from_slice(format!("P5\n{} {}\n255\n", lf.w_res, lf.h_res).as_bytes());
            for h in 0..lf.h_res {
                for w in 0..lf.w_res {
                    let val = (lf.get(u, v, h, w, 0) * 255.0).round().clamp(0.0, 255.0) as u8;
                    buf.push(val);
                }
            }
            fs::write(dir.join(format!("view_{}_{}.pgm", u, v)), &buf)?;
        }
    }
    Ok(())
}

/// Imports a `view_{u}_{v}.pgm` grid, scaling to `[0, 1]`.
pub fn import_pgm_grid(dir: &Path, u_res: usize, v_res: usize) -> Result<LightField4D> {
    let mut lf: Option<LightField4D> = None;
    for u in 0..u_res {
        for v in 0..v_res {
            let path = dir.join(format!("view_{}_{}.pgm", u, v));
            let bytes = fs::read(&path).map_err(|e| {
                Error::Format(format!("missing view file {}: {}", path.display(), e))
            })?;
            let (w, h, values) = parse_pgm(&bytes, &path)?;
            let lf = lf.get_or_insert_with(|| LightField4D::new(u_res, v_res, h, w, 1));
            if lf.h_res != h || lf.w_res != w {
                return Err(Error::Format(format!(
                    "view {} has dimensions {}x{}, expected {}x{}",
                    path.display(),
                    w,
                    h,
                    lf.w_res,
                    lf.h_res
                )));
            }
            for hh in 0..h {
                for ww in 0..w {
                    lf.set(u, v, hh, ww, 0, values[hh * w + ww]);
                }
            }
        }
    }
    Ok(lf.expect("at least one view"))
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
    let mut pos = 0usize;
    let mut read_token = || -> Result<String> {
        // Skip whitespace and '#' comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!(
                "{}: truncated PGM header",
                path.display()
            )));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if read_token()? != "P5" {
        return Err(bad("not a P5 PGM"));
    }
    let w: usize = read_token()?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = read_token()?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = read_token()?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let two_byte = maxval > 255;
    let needed = w * h * if two_byte { 2 } else { 1 };
    if bytes.len() < pos + needed {
        return Err(bad("truncated PGM raster"));
    }
    let raster = &bytes[pos..pos + needed];
    let scale = 1.0f32 / maxval as f32;
    let values: Vec<f32> = if two_byte {
        raster
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f32 * scale)
            .collect()
    } else {
        raster.iter().map(|&b| b as f32 * scale).collect()
    };
    Ok((w, h, values))
}
