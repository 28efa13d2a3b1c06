//! The keyed block-warping-remapping transform.
//!
//! A feature map is partitioned into `b x b` blocks. Each block carries a
//! square mesh of cells with edge length `s` (`s` must divide `b`); the
//! interior mesh vertices are displaced by keyed random offsets in
//! `[0, o*s]` per axis while border vertices stay pinned, so a warp never
//! imports content from a neighboring block. A keyed subset of the warped
//! blocks (`max(1, floor(r * n_blocks))` of them) is selected and remapped
//! into the output slots; since there are fewer selected blocks than slots,
//! some are reused. One spatial plan is shared across all channels.
//!
//! All randomness expands from the 64-bit user key through three
//! domain-separated SplitMix64 streams (warp offsets, block selection, slot
//! mapping), making [`protect`] a pure function of
//! `(input, key, parameters)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmap::{bilinear_sample, FeatureMap};
use crate::rng::SplitMix64;

const WARP_DOMAIN: u64 = 0x5741_5250_0000_0001;
const SELECT_DOMAIN: u64 = 0x5345_4C45_0000_0002;
const MAP_DOMAIN: u64 = 0x4D41_5000_0000_0003;

/// System-level transform hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BwrParams {
    /// Block size `b` in pixels; must divide the map height and width.
    #[serde(rename = "b")]
    pub block_size: usize,
    /// Mesh cell edge length `s` in pixels; must divide `b`.
    #[serde(rename = "s")]
    pub mesh_cell: usize,
    /// Warping factor `o` in `[0, 1)`: interior vertex offsets are drawn
    /// from `[0, o*s]` per axis.
    #[serde(rename = "o")]
    pub warp_factor: f64,
    /// Resampling rate `r` in `(0, 1]`: the fraction of blocks that survive.
    #[serde(rename = "r")]
    pub resample_rate: f64,
    /// Draw offsets from `[-o*s, o*s]` instead of `[0, o*s]`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub symmetric_offsets: bool,
}

fn is_false(v: &bool) -> bool {
    !*v
}

impl Default for BwrParams {
    fn default() -> Self {
        BwrParams {
            block_size: 16,
            mesh_cell: 8,
            warp_factor: 0.625,
            resample_rate: 0.8,
            symmetric_offsets: false,
        }
    }
}

impl BwrParams {
    /// Checks the parameter invariants, without reference to a map.
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.mesh_cell == 0 {
            return Err(Error::domain("block and mesh sizes must be positive"));
        }
        if !self.block_size.is_multiple_of(self.mesh_cell) {
            return Err(Error::domain(format!(
                "mesh cell {} must divide block size {}",
                self.mesh_cell, self.block_size
            )));
        }
        if !(0.0..1.0).contains(&self.warp_factor) {
            return Err(Error::domain(format!("warp factor {} not in [0, 1)", self.warp_factor)));
        }
        if !(self.resample_rate > 0.0 && self.resample_rate <= 1.0) {
            return Err(Error::domain(format!(
                "resample rate {} not in (0, 1]",
                self.resample_rate
            )));
        }
        Ok(())
    }

    /// Checks the invariants against a target map shape.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if height == 0 || width == 0 {
            return Err(Error::domain("cannot protect an empty map"));
        }
        if !height.is_multiple_of(self.block_size) || !width.is_multiple_of(self.block_size) {
            return Err(Error::domain(format!(
                "block size {} must divide map dims {}x{}",
                self.block_size, height, width
            )));
        }
        Ok(())
    }

    /// Mesh cells per block axis.
    pub fn cells(&self) -> usize {
        self.block_size / self.mesh_cell
    }
}

/// A user's 64-bit key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransformKey(pub u64);

/// The expanded deterministic randomness for one `(key, params, shape)`
/// combination: per-block mesh vertex offsets, the selected block subset,
/// and the slot assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct BwrPlan {
    pub block_size: usize,
    pub cells: usize,
    pub blocks_y: usize,
    pub blocks_x: usize,
    /// Per block, per mesh vertex row-major `((cells+1)^2)`: `(dx, dy)` in
    /// pixels. Border vertices carry zero offsets.
    pub vertex_offsets: Vec<Vec<(f64, f64)>>,
    /// Ordered distinct block indices, length `max(1, floor(r * n_blocks))`.
    pub selected: Vec<usize>,
    /// Per output slot, an index into `selected`. Every selected entry
    /// appears at least once.
    pub slot_assignment: Vec<usize>,
}

impl BwrPlan {
    pub fn n_blocks(&self) -> usize {
        self.blocks_y * self.blocks_x
    }

    /// Identity plan: zero offsets, every block selected in order, every
    /// slot mapped to itself. With `o = 0, r = 1` this makes the transform
    /// the identity.
    pub fn identity(params: &BwrParams, height: usize, width: usize) -> Result<Self> {
        params.validate_for(height, width)?;
        let blocks_y = height / params.block_size;
        let blocks_x = width / params.block_size;
        let n = blocks_y * blocks_x;
        let cells = params.cells();
        let verts = (cells + 1) * (cells + 1);
        Ok(BwrPlan {
            block_size: params.block_size,
            cells,
            blocks_y,
            blocks_x,
            vertex_offsets: vec![vec![(0.0, 0.0); verts]; n],
            selected: (0..n).collect(),
            slot_assignment: (0..n).collect(),
        })
    }
}

/// Expands a key into a [`BwrPlan`] for a `height x width` map.
///
/// Stream layout (the bit-exact contract): three SplitMix64 streams seeded
/// `key ^ 0x5741525000000001` (warp), `key ^ 0x53454C4500000002` (select),
/// `key ^ 0x4D41500000000003` (map); uniform reals are
/// `(next_u64 >> 11) * 2^-53`. Warp offsets are drawn per block in ascending
/// index order, per interior vertex row-major, `u_x` then `u_y`. Selection is
/// a Fisher-Yates shuffle of the block indices taking the first
/// `max(1, floor(r * n_blocks))`. Slots are a keyed shuffle of the slot
/// order; the first `N_s` shuffled slots receive the selected blocks in
/// order, each remaining shuffled slot receives `floor(u * N_s)`.
pub fn derive_plan(
    key: TransformKey,
    params: &BwrParams,
    height: usize,
    width: usize,
) -> Result<BwrPlan> {
    params.validate_for(height, width)?;
    let blocks_y = height / params.block_size;
    let blocks_x = width / params.block_size;
    let n_blocks = blocks_y * blocks_x;
    let n_selected = ((params.resample_rate * n_blocks as f64).floor() as usize).max(1);
    let cells = params.cells();

    let mut warp_rng = SplitMix64::new(key.0 ^ WARP_DOMAIN);
    let scale = params.warp_factor * params.mesh_cell as f64;
    let vertex_offsets: Vec<Vec<(f64, f64)>> = (0..n_blocks)
        .map(|_| {
            let mut offsets = vec![(0.0, 0.0); (cells + 1) * (cells + 1)];
            for vy in 0..=cells {
                for vx in 0..=cells {
                    if vy == 0 || vy == cells || vx == 0 || vx == cells {
                        continue; // border vertices stay pinned
                    }
                    let ux = warp_rng.next_f64();
                    let uy = warp_rng.next_f64();
                    offsets[vy * (cells + 1) + vx] = if params.symmetric_offsets {
                        ((2.0 * ux - 1.0) * scale, (2.0 * uy - 1.0) * scale)
                    } else {
                        (ux * scale, uy * scale)
                    };
                }
            }
            offsets
        })
        .collect();

    let mut select_rng = SplitMix64::new(key.0 ^ SELECT_DOMAIN);
    let mut order: Vec<usize> = (0..n_blocks).collect();
    select_rng.shuffle(&mut order);
    let selected: Vec<usize> = order[..n_selected].to_vec();

    let mut map_rng = SplitMix64::new(key.0 ^ MAP_DOMAIN);
    let mut slot_order: Vec<usize> = (0..n_blocks).collect();
    map_rng.shuffle(&mut slot_order);
    let mut slot_assignment = vec![0usize; n_blocks];
    for (k, &slot) in slot_order.iter().enumerate() {
        slot_assignment[slot] =
            if k < n_selected { k } else { map_rng.next_index(n_selected) };
    }

    Ok(BwrPlan {
        block_size: params.block_size,
        cells,
        blocks_y,
        blocks_x,
        vertex_offsets,
        selected,
        slot_assignment,
    })
}

/// Warps one `(C, b, b)` block through its perturbed mesh.
///
/// Every destination cell keeps its regular geometry; destination node
/// `(t_x, t_y)` inside a cell maps back to the bilinear point of the warped
/// quad at the same parameters and takes the bilinear sample of the source
/// block there. The spatial transform is shared across channels. With zero
/// offsets the mesh is the identity and the block is returned bit-exactly.
pub fn warp_block(block: &FeatureMap, offsets: &[(f64, f64)], cells: usize) -> Result<FeatureMap> {
    let b = block.height();
    if block.width() != b || b == 0 {
        return Err(Error::domain("block must be square and non-empty"));
    }
    if cells == 0 || !b.is_multiple_of(cells) {
        return Err(Error::domain("cell count must divide the block size"));
    }
    if offsets.len() != (cells + 1) * (cells + 1) {
        return Err(Error::domain(format!(
            "expected {} mesh vertex offsets, got {}",
            (cells + 1) * (cells + 1),
            offsets.len()
        )));
    }
    let s = b / cells; // cell edge = node subdivision count
    let vert = |vy: usize, vx: usize| -> (f64, f64) {
        let (dx, dy) = offsets[vy * (cells + 1) + vx];
        ((vx * s) as f64 + dx, (vy * s) as f64 + dy)
    };

    let t_sq = (s * s) as f64;
    let mut out = FeatureMap::zeros(block.channels(), b, b);
    for cy in 0..cells {
        for cx in 0..cells {
            let (b1x, b1y) = vert(cy, cx); // top-left
            let (b2x, b2y) = vert(cy, cx + 1); // top-right
            let (b3x, b3y) = vert(cy + 1, cx + 1); // bottom-right
            let (b4x, b4y) = vert(cy + 1, cx); // bottom-left
            for ty in 0..s {
                let py = cy * s + ty;
                for tx in 0..s {
                    let px = cx * s + tx;
                    // integer-weighted bilinear blend of the quad; exact
                    // integers when the offsets are zero
                    let w11 = ((s - tx) * (s - ty)) as f64;
                    let w21 = (tx * (s - ty)) as f64;
                    let w22 = (tx * ty) as f64;
                    let w12 = ((s - tx) * ty) as f64;
                    let sx = (w11 * b1x + w21 * b2x + w22 * b3x + w12 * b4x) / t_sq;
                    let sy = (w11 * b1y + w21 * b2y + w22 * b3y + w12 * b4y) / t_sq;
                    for c in 0..block.channels() {
                        out.set(c, py, px, bilinear_sample(block, c, sx, sy)? as f32);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn extract_block(fmap: &FeatureMap, plan: &BwrPlan, index: usize) -> FeatureMap {
    let b = plan.block_size;
    let (by, bx) = (index / plan.blocks_x, index % plan.blocks_x);
    let mut out = FeatureMap::zeros(fmap.channels(), b, b);
    for c in 0..fmap.channels() {
        for y in 0..b {
            for x in 0..b {
                out.set(c, y, x, fmap.get(c, by * b + y, bx * b + x));
            }
        }
    }
    out
}

fn place_block(out: &mut FeatureMap, plan: &BwrPlan, slot: usize, block: &FeatureMap) {
    let b = plan.block_size;
    let (by, bx) = (slot / plan.blocks_x, slot % plan.blocks_x);
    for c in 0..block.channels() {
        for y in 0..b {
            for x in 0..b {
                out.set(c, by * b + y, bx * b + x, block.get(c, y, x));
            }
        }
    }
}

/// Applies an already-derived plan: warp the selected source blocks, then
/// fill every output slot from its assigned warped block.
pub fn apply_plan(fmap: &FeatureMap, plan: &BwrPlan) -> Result<FeatureMap> {
    let b = plan.block_size;
    if fmap.height() != plan.blocks_y * b || fmap.width() != plan.blocks_x * b {
        return Err(Error::domain(format!(
            "plan covers {}x{}, map is {}x{}",
            plan.blocks_y * b,
            plan.blocks_x * b,
            fmap.height(),
            fmap.width()
        )));
    }
    if plan.slot_assignment.len() != plan.n_blocks() {
        return Err(Error::domain("slot assignment length mismatch"));
    }
    // warp each selected block once; unselected blocks never surface
    let mut warped = Vec::with_capacity(plan.selected.len());
    for &src in &plan.selected {
        if src >= plan.n_blocks() {
            return Err(Error::domain("selected block index out of range"));
        }
        let block = extract_block(fmap, plan, src);
        warped.push(warp_block(&block, &plan.vertex_offsets[src], plan.cells)?);
    }
    let mut out = FeatureMap::zeros(fmap.channels(), fmap.height(), fmap.width());
    for (slot, &sel) in plan.slot_assignment.iter().enumerate() {
        let block = warped
            .get(sel)
            .ok_or_else(|| Error::domain("slot assignment index out of range"))?;
        place_block(&mut out, plan, slot, block);
    }
    Ok(out)
}

/// The protection transform: a pure function of `(fmap, key, params)`.
pub fn protect(fmap: &FeatureMap, key: TransformKey, params: &BwrParams) -> Result<FeatureMap> {
    let plan = derive_plan(key, params, fmap.height(), fmap.width())?;
    apply_plan(fmap, &plan)
}

// ---------------------------------------------------------------------------
// key files

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFileRepr {
    key_hex: String,
    params: KeyParamsRepr,
    #[serde(default)]
    symmetric_offsets: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyParamsRepr {
    b: usize,
    s: usize,
    o: f64,
    r: f64,
}

/// Writes a key file: `{key_hex, params: {b, s, o, r}, symmetric_offsets}`.
pub fn write_key_file(path: impl AsRef<Path>, key: TransformKey, params: &BwrParams) -> Result<()> {
    let repr = KeyFileRepr {
        key_hex: format!("{:016x}", key.0),
        params: KeyParamsRepr {
            b: params.block_size,
            s: params.mesh_cell,
            o: params.warp_factor,
            r: params.resample_rate,
        },
        symmetric_offsets: params.symmetric_offsets,
    };
    std::fs::write(path, serde_json::to_vec_pretty(&repr)?)?;
    Ok(())
}

/// Reads and validates a key file.
pub fn read_key_file(path: impl AsRef<Path>) -> Result<(TransformKey, BwrParams)> {
    let bytes = std::fs::read(path)?;
    let repr: KeyFileRepr =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("key file: {e}")))?;
    if repr.key_hex.len() != 16 || !repr.key_hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::format("key file: key_hex must be exactly 16 hex characters"));
    }
    let key = u64::from_str_radix(&repr.key_hex, 16)
        .map_err(|e| Error::format(format!("key file: {e}")))?;
    let params = BwrParams {
        block_size: repr.params.b,
        mesh_cell: repr.params.s,
        warp_factor: repr.params.o,
        resample_rate: repr.params.r,
        symmetric_offsets: repr.symmetric_offsets,
    };
    params.validate()?;
    Ok((TransformKey(key), params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmap::{conv2d, ConvSpec};
    use crate::rng::SplitMix64;

    fn params() -> BwrParams {
        BwrParams::default()
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        let data = (0..c * h * w).map(|_| rng.next_range(-1.0, 1.0) as f32).collect();
        FeatureMap::new(c, h, w, data).unwrap()
    }

    fn smooth_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut m = random_map(c, h, w, seed);
        let blur = ConvSpec::new(3, 3, 1, 1, c, c, {
            let mut w = vec![0.0; c * c * 9];
            for ch in 0..c {
                for k in 0..9 {
                    w[(ch * c + ch) * 9 + k] = 1.0 / 9.0;
                }
            }
            w
        }, vec![0.0; c]).unwrap();
        for _ in 0..3 {
            m = conv2d(&m, &blur).unwrap();
        }
        m
    }

    #[test]
    fn plan_counts_for_default_params() {
        let plan = derive_plan(TransformKey(1), &params(), 32, 64).unwrap();
        assert_eq!(plan.n_blocks(), 8);
        assert_eq!(plan.selected.len(), 6); // floor(0.8 * 8)
        assert_eq!(plan.slot_assignment.len(), 8);
    }

    #[test]
    fn plan_invariants() {
        for key in 0..50u64 {
            let plan = derive_plan(TransformKey(key), &params(), 32, 64).unwrap();
            // selected entries distinct
            let mut sorted = plan.selected.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), plan.selected.len());
            // every selected index appears at least once
            for k in 0..plan.selected.len() {
                assert!(plan.slot_assignment.contains(&k), "selected {k} unused");
            }
            // assignment in range
            assert!(plan.slot_assignment.iter().all(|&a| a < plan.selected.len()));
            // offsets: border zero, interior within [0, o*s]
            let cells = plan.cells;
            let bound = params().warp_factor * params().mesh_cell as f64;
            for offsets in &plan.vertex_offsets {
                for vy in 0..=cells {
                    for vx in 0..=cells {
                        let (dx, dy) = offsets[vy * (cells + 1) + vx];
                        if vy == 0 || vy == cells || vx == 0 || vx == cells {
                            assert_eq!((dx, dy), (0.0, 0.0));
                        } else {
                            assert!((0.0..=bound).contains(&dx));
                            assert!((0.0..=bound).contains(&dy));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_warp_factor_means_zero_offsets() {
        let p = BwrParams { warp_factor: 0.0, ..params() };
        let plan = derive_plan(TransformKey(9), &p, 32, 64).unwrap();
        for offsets in &plan.vertex_offsets {
            assert!(offsets.iter().all(|&o| o == (0.0, 0.0)));
        }
    }

    #[test]
    fn warp_zero_offsets_is_identity() {
        let m = random_map(3, 16, 16, 5);
        let offsets = vec![(0.0, 0.0); 9]; // 2x2 cells
        let out = warp_block(&m, &offsets, 2).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn warp_is_deterministic() {
        let m = random_map(2, 16, 16, 6);
        let plan = derive_plan(TransformKey(3), &params(), 32, 64).unwrap();
        let a = warp_block(&m, &plan.vertex_offsets[0], 2).unwrap();
        let b = warp_block(&m, &plan.vertex_offsets[0], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warp_cell_corner_nodes_hit_warped_vertices() {
        // On an x-ramp the sampled value equals the source x coordinate, so
        // a destination cell-corner pixel must read exactly its (possibly
        // warped) vertex x. Border-pinned vertices therefore preserve corner
        // pixel values exactly.
        let b = 16;
        let cells = 2;
        let s = b / cells;
        let mut m = FeatureMap::zeros(1, b, b);
        for y in 0..b {
            for x in 0..b {
                m.set(0, y, x, x as f32);
            }
        }
        // keep the interior vertex displacement small enough to stay clear of
        // the clamped border zone of the ramp
        let mut offsets = vec![(0.0, 0.0); (cells + 1) * (cells + 1)];
        offsets[(cells + 1) + 1] = (3.25, 2.5); // the single interior vertex
        let out = warp_block(&m, &offsets, cells).unwrap();
        for cy in 0..=cells {
            for cx in 0..=cells {
                let (px, py) = ((cx * s).min(b - 1), (cy * s).min(b - 1));
                if cx == cells || cy == cells {
                    continue; // those pixels belong to interior cell params
                }
                let expect = (cx * s) as f64 + offsets[cy * (cells + 1) + cx].0;
                assert!(
                    (out.get(0, py, px) as f64 - expect).abs() < 1e-9,
                    "corner ({cy},{cx}): {} vs {expect}",
                    out.get(0, py, px)
                );
            }
        }
    }

    #[test]
    fn protect_is_deterministic() {
        let m = random_map(3, 32, 64, 7);
        let a = protect(&m, TransformKey(0xDEAD_BEEF), &params()).unwrap();
        let b = protect(&m, TransformKey(0xDEAD_BEEF), &params()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn identity_plan_is_bit_exact_identity() {
        let m = random_map(4, 32, 64, 8);
        let p = BwrParams { warp_factor: 0.0, resample_rate: 1.0, ..params() };
        let plan = BwrPlan::identity(&p, 32, 64).unwrap();
        let out = apply_plan(&m, &plan).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn full_rate_zero_warp_permutes_blocks() {
        let m = random_map(2, 32, 64, 9);
        let p = BwrParams { warp_factor: 0.0, resample_rate: 1.0, ..params() };
        let key = TransformKey(0x1234);
        let plan = derive_plan(key, &p, 32, 64).unwrap();
        let out = apply_plan(&m, &plan).unwrap();

        let block_bytes = |f: &FeatureMap, idx: usize| -> Vec<u32> {
            extract_block(f, &plan, idx).data().iter().map(|v| v.to_bits()).collect()
        };
        let mut src: Vec<Vec<u32>> = (0..plan.n_blocks()).map(|i| block_bytes(&m, i)).collect();
        let mut dst: Vec<Vec<u32>> = (0..plan.n_blocks()).map(|i| block_bytes(&out, i)).collect();
        src.sort();
        dst.sort();
        assert_eq!(src, dst);
    }

    #[test]
    fn information_ceiling() {
        for key in 0..100u64 {
            let plan = derive_plan(TransformKey(key), &params(), 32, 64).unwrap();
            let distinct: std::collections::BTreeSet<usize> =
                plan.slot_assignment.iter().copied().collect();
            let ceiling = (params().resample_rate * plan.n_blocks() as f64).floor() as usize;
            assert!(distinct.len() <= ceiling.max(1));
        }
    }

    #[test]
    fn key_bit_flip_changes_plan() {
        let p = params();
        let mut rng = SplitMix64::new(0xF00D);
        let mut changed = 0usize;
        let trials = 1000;
        for _ in 0..trials {
            let key = rng.next_u64();
            let bit = rng.next_index(64);
            let a = derive_plan(TransformKey(key), &p, 32, 64).unwrap();
            let b = derive_plan(TransformKey(key ^ (1 << bit)), &p, 32, 64).unwrap();
            if a != b {
                changed += 1;
            }
        }
        assert!(
            changed as f64 >= 0.99 * trials as f64,
            "only {changed}/{trials} bit flips changed the plan"
        );
    }

    #[test]
    fn distinct_keys_decorrelate_protected_maps() {
        let m = smooth_map(1, 32, 64, 10);
        let p = params();
        let mut rng = SplitMix64::new(0xBEE);
        let mut sum = 0.0;
        let pairs = 100;
        for _ in 0..pairs {
            let (k1, k2) = (rng.next_u64(), rng.next_u64());
            let a = protect(&m, TransformKey(k1), &p).unwrap();
            let b = protect(&m, TransformKey(k2), &p).unwrap();
            let dot: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum();
            let na: f64 = a.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            sum += dot / (na * nb);
        }
        let mean_cross = sum / pairs as f64;
        // same-key similarity is exactly 1.0; require a gap of at least 0.3
        assert!(
            mean_cross <= 0.7,
            "mean cross-key similarity {mean_cross:.3} too close to same-key 1.0"
        );
    }

    #[test]
    fn protect_rejects_indivisible_dims() {
        let m = random_map(1, 30, 64, 11);
        assert!(protect(&m, TransformKey(1), &params()).is_err());
    }

    #[test]
    fn key_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.json");
        let p = params();
        write_key_file(&path, TransformKey(0x00FF_00FF_00FF_00FF), &p).unwrap();
        let (key, back) = read_key_file(&path).unwrap();
        assert_eq!(key, TransformKey(0x00FF_00FF_00FF_00FF));
        assert_eq!(back, p);

        std::fs::write(&path, br#"{"key_hex":"xyz","params":{"b":16,"s":8,"o":0.5,"r":0.8}}"#)
            .unwrap();
        assert!(read_key_file(&path).is_err());
        std::fs::write(
            &path,
            br#"{"key_hex":"0000000000000001","params":{"b":16,"s":5,"o":0.5,"r":0.8}}"#,
        )
        .unwrap();
        assert!(read_key_file(&path).is_err(), "s must divide b");
    }
}
