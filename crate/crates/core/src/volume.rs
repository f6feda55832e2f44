//! Volume container and the preprocessing chain: trilinear resampling to
//! a common spacing, center crop / zero pad to a fixed grid, and
//! mask-based intensity gating with optional region restriction.
//!
//! # File format
//!
//! A `.svol` file is a sequence of records, one per grid. Each record is
//! a 64-byte little-endian header followed by the raw payload:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SVOLGRID"
//! 8       4     format version (u32, currently 1)
//! 12      4     dtype: 1 = f32, 2 = u8
//! 16      12    dims (3 x u32), x fastest in the payload
//! 28      24    spacing in mm (3 x f64)
//! 52      4     grid kind: 0 intensity, 1 mask, 2 region labels
//! 56      8     reserved (zero)
//! ```
//!
//! A volume is stored as three records: f32 intensities, u8 mask, u8
//! region labels.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::report::Region;

pub const SVOL_MAGIC: &[u8; 8] = b"SVOLGRID";
pub const SVOL_VERSION: u32 = 1;

const DTYPE_F32: u32 = 1;
const DTYPE_U8: u32 = 2;
const KIND_INTENSITY: u32 = 0;
const KIND_MASK: u32 = 1;
const KIND_LABELS: u32 = 2;

/// Voxel labels for the region grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RegionLabel {
    Background = 0,
    Cervical = 1,
    Thoracic = 2,
    Lumbar = 3,
    /// Rendered anatomy outside the three spine regions (e.g. sacrum).
    Other = 4,
}

impl RegionLabel {
    pub fn from_region(region: Region) -> Self {
        match region {
            Region::Cervical => RegionLabel::Cervical,
            Region::Thoracic => RegionLabel::Thoracic,
            Region::Lumbar => RegionLabel::Lumbar,
        }
    }
}

/// A 3D grid with intensities in [0, 1], a binary anatomy mask, and
/// per-voxel region labels. Memory order is x-fastest:
/// `index = x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub intensities: Vec<f32>,
    pub mask: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Volume {
            dims,
            spacing,
            intensities: vec![0.0; n],
            mask: vec![0; n],
            labels: vec![0; n],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.voxel_count();
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("volume has a zero dimension".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("volume spacing must be positive".into()));
        }
        if self.intensities.len() != n || self.mask.len() != n || self.labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "volume buffers disagree with dims {:?}",
                self.dims
            )));
        }
        if self
            .intensities
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidArgument(
                "volume intensities must be finite and in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut write_record = |dtype: u32, kind: u32, payload: &[u8]| -> Result<()> {
            let mut header = [0u8; 64];
            header[..8].copy_from_slice(SVOL_MAGIC);
            header[8..12].copy_from_slice(&SVOL_VERSION.to_le_bytes());
            header[12..16].copy_from_slice(&dtype.to_le_bytes());
            for (i, &d) in self.dims.iter().enumerate() {
                header[16 + 4 * i..20 + 4 * i].copy_from_slice(&(d as u32).to_le_bytes());
            }
            for (i, &s) in self.spacing.iter().enumerate() {
                header[28 + 8 * i..36 + 8 * i].copy_from_slice(&s.to_le_bytes());
            }
            header[52..56].copy_from_slice(&kind.to_le_bytes());
            file.write_all(&header).map_err(|e| Error::io(path, e))?;
            file.write_all(payload).map_err(|e| Error::io(path, e))?;
            Ok(())
        };
        let intensity_bytes: Vec<u8> = self
            .intensities
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        write_record(DTYPE_F32, KIND_INTENSITY, &intensity_bytes)?;
        write_record(DTYPE_U8, KIND_MASK, &self.mask)?;
        write_record(DTYPE_U8, KIND_LABELS, &self.labels)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Volume> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

        let mut offset = 0usize;
        let mut dims = [0usize; 3];
        let mut spacing = [0f64; 3];
        let mut intensities: Option<Vec<f32>> = None;
        let mut mask: Option<Vec<u8>> = None;
        let mut labels: Option<Vec<u8>> = None;
        let mut first = true;
        while offset < bytes.len() {
            if bytes.len() - offset < 64 {
                return Err(Error::VolumeFormat("truncated record header".into()));
            }
            let header = &bytes[offset..offset + 64];
            if &header[..8] != SVOL_MAGIC {
                return Err(Error::VolumeFormat("bad magic".into()));
            }
            let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
            if version != SVOL_VERSION {
                return Err(Error::VolumeFormat(format!(
                    "unsupported version {version}"
                )));
            }
            let dtype = u32::from_le_bytes(header[12..16].try_into().unwrap());
            let rec_dims = [
                u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize,
                u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize,
                u32::from_le_bytes(header[24..28].try_into().unwrap()) as usize,
            ];
            let rec_spacing = [
                f64::from_le_bytes(header[28..36].try_into().unwrap()),
                f64::from_le_bytes(header[36..44].try_into().unwrap()),
                f64::from_le_bytes(header[44..52].try_into().unwrap()),
            ];
            let kind = u32::from_le_bytes(header[52..56].try_into().unwrap());
            if first {
                dims = rec_dims;
                spacing = rec_spacing;
                first = false;
            } else if rec_dims != dims {
                return Err(Error::VolumeFormat("records disagree on dims".into()));
            }
            let n = rec_dims[0] * rec_dims[1] * rec_dims[2];
            let payload_len = match dtype {
                DTYPE_F32 => 4 * n,
                DTYPE_U8 => n,
                other => return Err(Error::VolumeFormat(format!("unknown dtype {other}"))),
            };
            offset += 64;
            if bytes.len() - offset < payload_len {
                return Err(Error::VolumeFormat("truncated payload".into()));
            }
            let payload = &bytes[offset..offset + payload_len];
            offset += payload_len;
            match (kind, dtype) {
                (KIND_INTENSITY, DTYPE_F32) => {
                    intensities = Some(
                        payload
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    );
                }
                (KIND_MASK, DTYPE_U8) => mask = Some(payload.to_vec()),
                (KIND_LABELS, DTYPE_U8) => labels = Some(payload.to_vec()),
                _ => {
                    return Err(Error::VolumeFormat(format!(
                        "unexpected record kind {kind} / dtype {dtype}"
                    )))
                }
            }
        }
        let volume = Volume {
            dims,
            spacing,
            intensities: intensities
                .ok_or_else(|| Error::VolumeFormat("missing intensity record".into()))?,
            mask: mask.ok_or_else(|| Error::VolumeFormat("missing mask record".into()))?,
            labels: labels.ok_or_else(|| Error::VolumeFormat("missing labels record".into()))?,
        };
        volume.validate()?;
        Ok(volume)
    }
}

/// Trilinear resampling of intensities to `target_spacing` with
/// nearest-neighbour resampling for mask and labels. Output dims are
/// chosen so physical extent is preserved to within one voxel. Axes of
/// size one pass through untouched.
pub fn resample(vol: &Volume, target_spacing: [f64; 3]) -> Result<Volume> {
    vol.validate()?;
    if target_spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("target spacing must be positive".into()));
    }
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        out_dims[a] = if vol.dims[a] == 1 {
            1
        } else {
            ((vol.dims[a] as f64 * vol.spacing[a] / target_spacing[a]).round() as usize).max(1)
        };
    }
    let mut spacing = target_spacing;
    for a in 0..3 {
        if vol.dims[a] == 1 {
            spacing[a] = vol.spacing[a];
        }
    }
    let mut out = Volume::zeros(out_dims, spacing);

    // Voxel-center convention: output center (o + 0.5) * out_sp lands at
    // source coordinate (o + 0.5) * out_sp / in_sp - 0.5.
    let src_coord = |o: usize, a: usize| -> f64 {
        if vol.dims[a] == 1 {
            0.0
        } else {
            ((o as f64 + 0.5) * spacing[a] / vol.spacing[a] - 0.5)
                .clamp(0.0, (vol.dims[a] - 1) as f64)
        }
    };

    for z in 0..out_dims[2] {
        let sz = src_coord(z, 2);
        let (z0, fz) = (sz.floor() as usize, sz.fract());
        let z1 = (z0 + 1).min(vol.dims[2] - 1);
        for y in 0..out_dims[1] {
            let sy = src_coord(y, 1);
            let (y0, fy) = (sy.floor() as usize, sy.fract());
            let y1 = (y0 + 1).min(vol.dims[1] - 1);
            for x in 0..out_dims[0] {
                let sx = src_coord(x, 0);
                let (x0, fx) = (sx.floor() as usize, sx.fract());
                let x1 = (x0 + 1).min(vol.dims[0] - 1);

                let c = |xi: usize, yi: usize, zi: usize| -> f64 {
                    vol.intensities[vol.index(xi, yi, zi)] as f64
                };
                let v = c(x0, y0, z0) * (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
                    + c(x1, y0, z0) * fx * (1.0 - fy) * (1.0 - fz)
                    + c(x0, y1, z0) * (1.0 - fx) * fy * (1.0 - fz)
                    + c(x1, y1, z0) * fx * fy * (1.0 - fz)
                    + c(x0, y0, z1) * (1.0 - fx) * (1.0 - fy) * fz
                    + c(x1, y0, z1) * fx * (1.0 - fy) * fz
                    + c(x0, y1, z1) * (1.0 - fx) * fy * fz
                    + c(x1, y1, z1) * fx * fy * fz;

                let (xn, yn, zn) = (
                    sx.round() as usize,
                    sy.round() as usize,
                    sz.round() as usize,
                );
                let oi = out.index(x, y, z);
                let si = vol.index(xn, yn, zn);
                out.intensities[oi] = v.clamp(0.0, 1.0) as f32;
                out.mask[oi] = vol.mask[si];
                out.labels[oi] = vol.labels[si];
            }
        }
    }
    Ok(out)
}

/// Signed low-side shift applied by [`crop_or_pad`] per axis: positive
/// when cropping (source voxel `shift` maps to output 0), negative when
/// padding.
pub fn crop_offsets(in_dims: [usize; 3], out_dims: [usize; 3]) -> [isize; 3] {
    let mut off = [0isize; 3];
    for a in 0..3 {
        let diff = in_dims[a] as isize - out_dims[a] as isize;
        // Truncating division keeps the extra voxel on the high side for
        // both odd crops and odd pads.
        off[a] = diff / 2;
    }
    off
}

/// Center crop or symmetric zero pad to `target_dims`; when the
/// difference is odd the extra voxel goes to the high side. Padding is
/// zero intensity / background label.
pub fn crop_or_pad(vol: &Volume, target_dims: [usize; 3]) -> Result<Volume> {
    vol.validate()?;
    if target_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument("target dims must be positive".into()));
    }
    let off = crop_offsets(vol.dims, target_dims);
    let mut out = Volume::zeros(target_dims, vol.spacing);
    for z in 0..target_dims[2] {
        let sz = z as isize + off[2];
        if sz < 0 || sz >= vol.dims[2] as isize {
            continue;
        }
        for y in 0..target_dims[1] {
            let sy = y as isize + off[1];
            if sy < 0 || sy >= vol.dims[1] as isize {
                continue;
            }
            for x in 0..target_dims[0] {
                let sx = x as isize + off[0];
                if sx < 0 || sx >= vol.dims[0] as isize {
                    continue;
                }
                let oi = out.index(x, y, z);
                let si = vol.index(sx as usize, sy as usize, sz as usize);
                out.intensities[oi] = vol.intensities[si];
                out.mask[oi] = vol.mask[si];
                out.labels[oi] = vol.labels[si];
            }
        }
    }
    Ok(out)
}

/// Dilates a binary grid by a city-block (L1) ball of the given radius;
/// one iteration adds the six face neighbours.
pub fn dilate_cityblock(grid: &[u8], dims: [usize; 3], radius: usize) -> Vec<u8> {
    let mut current: Vec<u8> = grid.iter().map(|&v| (v != 0) as u8).collect();
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    for _ in 0..radius {
        let prev = current.clone();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if prev[idx(x, y, z)] != 0 {
                        continue;
                    }
                    let hit = (x > 0 && prev[idx(x - 1, y, z)] != 0)
                        || (x + 1 < dims[0] && prev[idx(x + 1, y, z)] != 0)
                        || (y > 0 && prev[idx(x, y - 1, z)] != 0)
                        || (y + 1 < dims[1] && prev[idx(x, y + 1, z)] != 0)
                        || (z > 0 && prev[idx(x, y, z - 1)] != 0)
                        || (z + 1 < dims[2] && prev[idx(x, y, z + 1)] != 0);
                    if hit {
                        current[idx(x, y, z)] = 1;
                    }
                }
            }
        }
    }
    current
}

/// Zeroes intensities outside the mask dilated by `dilation_radius`.
/// The returned volume's mask is the dilated one.
pub fn apply_mask(vol: &Volume, dilation_radius: usize) -> Result<Volume> {
    vol.validate()?;
    let dilated = dilate_cityblock(&vol.mask, vol.dims, dilation_radius);
    let mut out = vol.clone();
    for (i, &m) in dilated.iter().enumerate() {
        if m == 0 {
            out.intensities[i] = 0.0;
        }
    }
    out.mask = dilated;
    Ok(out)
}

/// Region-restricted masking: keeps intensities only where the dilated
/// full mask and the dilated region-label support overlap.
pub fn mask_region(vol: &Volume, region: Region, dilation_radius: usize) -> Result<Volume> {
    let mut out = apply_mask(vol, dilation_radius)?;
    let wanted = RegionLabel::from_region(region) as u8;
    if !vol.labels.contains(&wanted) {
        log::warn!("region {region} has no labelled voxels; output is empty");
    }
    let region_grid: Vec<u8> = vol.labels.iter().map(|&l| (l == wanted) as u8).collect();
    let region_dilated = dilate_cityblock(&region_grid, vol.dims, dilation_radius);
    for (i, &keep) in region_dilated.iter().enumerate() {
        if keep == 0 {
            out.intensities[i] = 0.0;
            out.mask[i] = 0;
        }
    }
    Ok(out)
}

/// The canonical preprocessing chain: resample to the common spacing,
/// crop or pad to the network grid, then mask (optionally restricted to
/// one region).
pub fn preprocess(
    vol: &Volume,
    target_spacing: [f64; 3],
    target_dims: [usize; 3],
    dilation_radius: usize,
    region: Option<Region>,
) -> Result<Volume> {
    let resampled = resample(vol, target_spacing)?;
    let fitted = crop_or_pad(&resampled, target_dims)?;
    match region {
        Some(r) => mask_region(&fitted, r, dilation_radius),
        None => apply_mask(&fitted, dilation_radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ramp_volume(dims: [usize; 3], spacing: [f64; 3]) -> Volume {
        let mut v = Volume::zeros(dims, spacing);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = v.index(x, y, z);
                    v.intensities[i] = (x as f32) / (dims[0] as f32);
                    v.mask[i] = ((x + y + z) % 3 == 0) as u8;
                    v.labels[i] = ((x + y) % 5) as u8;
                }
            }
        }
        v
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.svol");
        let vol = ramp_volume([7, 5, 3], [0.9, 1.1, 3.0]);
        vol.save(&path).unwrap();
        let back = Volume::load(&path).unwrap();
        assert_eq!(vol, back);
        // f32 payload must be byte-identical, not just approximately equal.
        let b1: Vec<u8> = vol.intensities.iter().flat_map(|v| v.to_le_bytes()).collect();
        let b2: Vec<u8> = back.intensities.iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn container_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.svol");
        let vol = ramp_volume([4, 4, 2], [1.0, 1.0, 1.0]);
        vol.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Volume::load(&path), Err(Error::VolumeFormat(_))));

        let vol2 = ramp_volume([4, 4, 2], [1.0, 1.0, 1.0]);
        vol2.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(Volume::load(&path), Err(Error::VolumeFormat(_))));
    }

    #[test]
    fn resample_same_spacing_is_identity() {
        let vol = ramp_volume([8, 6, 4], [1.0, 2.0, 3.0]);
        let out = resample(&vol, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn resample_preserves_extent_within_one_voxel() {
        let vol = ramp_volume([96, 192, 8], [1.07, 0.93, 3.3]);
        let out = resample(&vol, [2.0, 2.0, 3.0]).unwrap();
        for a in 0..3 {
            let in_extent = vol.dims[a] as f64 * vol.spacing[a];
            let out_extent = out.dims[a] as f64 * out.spacing[a];
            assert!(
                (in_extent - out_extent).abs() <= out.spacing[a],
                "axis {a}: {in_extent} vs {out_extent}"
            );
        }
    }

    #[test]
    fn resample_matches_trilinear_oracle_on_ramp() {
        // A linear field is reproduced exactly by trilinear interpolation
        // away from clamped edges.
        let vol = ramp_volume([16, 6, 4], [1.0, 1.0, 1.0]);
        let out = resample(&vol, [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.dims[0], 8);
        for x in 0..out.dims[0] {
            let src_x: f64 = (x as f64 + 0.5) * 2.0 - 0.5;
            if src_x >= 0.0 && src_x <= 15.0 {
                let got = out.intensities[out.index(x, 2, 1)] as f64;
                let want = src_x / 16.0;
                assert!((got - want).abs() < 1e-6, "x {x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn resample_passes_degenerate_axis_through() {
        let vol = ramp_volume([8, 8, 1], [1.0, 1.0, 3.0]);
        let out = resample(&vol, [2.0, 2.0, 1.0]).unwrap();
        assert_eq!(out.dims[2], 1);
        assert_eq!(out.spacing[2], 3.0);
        assert!(out.intensities.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn crop_and_pad_place_the_extra_voxel_high() {
        let mut vol = Volume::zeros([3, 3, 1], [1.0, 1.0, 1.0]);
        let i = vol.index(0, 0, 0);
        vol.intensities[i] = 1.0;
        vol.mask[i] = 1;

        // Pad 3 -> 6: low pad gets floor(3/2) = 1, so x=0 moves to x=1.
        let padded = crop_or_pad(&vol, [6, 3, 1]).unwrap();
        assert_eq!(padded.intensities[padded.index(1, 0, 0)], 1.0);
        assert_eq!(padded.intensities[padded.index(0, 0, 0)], 0.0);

        // Crop back 6 -> 3 must be the exact inverse.
        let back = crop_or_pad(&padded, [3, 3, 1]).unwrap();
        assert_eq!(back, vol);

        assert_eq!(crop_offsets([3, 3, 1], [6, 3, 1]), [-1, 0, 0]);
        assert_eq!(crop_offsets([6, 3, 1], [3, 3, 1]), [1, 0, 0]);
    }

    #[test]
    fn pad_then_crop_round_trips_randomly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let dims = [
                rng.gen_range(2..9),
                rng.gen_range(2..9),
                rng.gen_range(1..5),
            ];
            let grown = [
                dims[0] + rng.gen_range(0..4),
                dims[1] + rng.gen_range(0..4),
                dims[2] + rng.gen_range(0..4),
            ];
            let vol = ramp_volume(dims, [1.0, 1.0, 1.0]);
            let padded = crop_or_pad(&vol, grown).unwrap();
            let back = crop_or_pad(&padded, dims).unwrap();
            assert_eq!(back, vol);
        }
    }

    #[test]
    fn single_voxel_mask_dilates_to_cityblock_ball() {
        let mut vol = Volume::zeros([7, 7, 7], [1.0, 1.0, 1.0]);
        let c = vol.index(3, 3, 3);
        vol.mask[c] = 1;
        for i in 0..vol.voxel_count() {
            vol.intensities[i] = 0.5;
        }

        let r1 = apply_mask(&vol, 1).unwrap();
        assert_eq!(r1.mask.iter().map(|&m| m as usize).sum::<usize>(), 7);
        assert_eq!(
            r1.intensities.iter().filter(|&&v| v > 0.0).count(),
            7,
            "radius 1 keeps the centre and six face neighbours"
        );

        let r2 = apply_mask(&vol, 2).unwrap();
        // |dx|+|dy|+|dz| <= 2 in 3D has 1 + 6 + 18 = 25 voxels.
        assert_eq!(r2.mask.iter().map(|&m| m as usize).sum::<usize>(), 25);
    }

    #[test]
    fn region_outputs_cover_labelled_full_mask() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dims = [10, 14, 4];
        let mut vol = Volume::zeros(dims, [1.0, 1.0, 1.0]);
        for i in 0..vol.voxel_count() {
            vol.intensities[i] = rng.gen_range(0.0..1.0);
            vol.mask[i] = rng.gen_bool(0.5) as u8;
            vol.labels[i] = rng.gen_range(0..5);
        }
        let radius = 2;
        let full = apply_mask(&vol, radius).unwrap();
        let regions: Vec<Volume> = Region::ALL
            .iter()
            .map(|&r| mask_region(&vol, r, radius).unwrap())
            .collect();
        for i in 0..vol.voxel_count() {
            let labelled = vol.labels[i] >= 1 && vol.labels[i] <= 3;
            if labelled && full.intensities[i] > 0.0 {
                let covered = regions.iter().any(|r| r.intensities[i] == full.intensities[i]);
                assert!(covered, "voxel {i} lost by region masking");
            }
        }
    }

    #[test]
    fn masked_intensities_vanish_outside_support() {
        let vol = ramp_volume([9, 9, 3], [1.0, 1.0, 1.0]);
        let out = apply_mask(&vol, 1).unwrap();
        for i in 0..out.voxel_count() {
            if out.mask[i] == 0 {
                assert_eq!(out.intensities[i], 0.0);
            }
        }
    }
}
