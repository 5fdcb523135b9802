//! Fine alignment and deblurring network.
//!
//! Shallow feature extraction brings the blurry image and the pre-aligned
//! voxel grid to `C x H/2 x W/2` features. `N` cascaded stages then each
//! refine both paths with a residual dense block, estimate bidirectional
//! per-group disparities, warp each path's channel groups towards the other
//! and fuse with an attention gate. The global fusion head turns the
//! blur-path outputs of every stage plus the final event-path output into
//! `M` frames at full resolution.
//!
//! The disparity head and both fusion blocks are shared by every stage; the
//! dense blocks are per stage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Result, StedError};
use crate::nn::{Conv2d, ParamStore};
use crate::tensor::Real;

/// Saturating logit used to pin an attention gate in tests and probes.
pub const GATE_SATURATION: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DblrNetConfig {
    /// Feature channels `C`.
    pub channels: usize,
    /// Number of cascaded stages `N`.
    pub stages: usize,
    /// Warp groups `L`.
    pub groups: usize,
    /// Output frames `M`.
    pub frames: usize,
    pub out_channels: usize,
    pub bins: usize,
    /// Dense block growth rate.
    pub growth: usize,
    /// Dense block depth.
    pub dense_layers: usize,
    pub use_dual_path: bool,
    pub use_bde: bool,
    pub use_aff: bool,
}

impl Default for DblrNetConfig {
    fn default() -> Self {
        Self {
            channels: 48,
            stages: 6,
            groups: 6,
            frames: 7,
            out_channels: 3,
            bins: 6,
            growth: 16,
            dense_layers: 4,
            use_dual_path: true,
            use_bde: true,
            use_aff: true,
        }
    }
}

impl DblrNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.frames == 0 || self.groups == 0 {
            return Err(StedError::invalid("stages, frames and groups must be at least 1"));
        }
        if self.channels == 0 || self.channels % self.groups != 0 {
            return Err(StedError::invalid(format!(
                "channels ({}) must be a positive multiple of groups ({})",
                self.channels, self.groups
            )));
        }
        if self.out_channels == 0 || self.bins == 0 || self.growth == 0 || self.dense_layers == 0 {
            return Err(StedError::invalid("channel counts and dense block sizes must be positive"));
        }
        Ok(())
    }
}

/// Two-layer shallow extractor: pixel unshuffle ×2, projection, refinement.
#[derive(Clone, Debug)]
pub struct Sfe {
    pub convs: [Conv2d; 2],
}

impl Sfe {
    pub fn new(name: &str, in_channels: usize, channels: usize) -> Self {
        Self {
            convs: [
                Conv2d::new(format!("{name}.0"), in_channels * 4, channels, 3),
                Conv2d::new(format!("{name}.1"), channels, channels, 3),
            ],
        }
    }

    fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.convs.iter().for_each(|c| c.init(p, rng));
    }

    /// `[N, Cin, H, W] -> [N, C, H/2, W/2]`.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let [_, _, h, w] = g.shape(x);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(StedError::shape(format!("feature extraction needs even dims, got {h}x{w}")));
        }
        let u = g.pixel_unshuffle(x, 2)?;
        let f = self.convs[0].forward_act(g, p, u)?;
        self.convs[1].forward(g, p, f)
    }
}

/// Residual dense block: densely connected 3×3 layers, 1×1 local fusion,
/// identity residual.
#[derive(Clone, Debug)]
pub struct Rdb {
    pub dense: Vec<Conv2d>,
    pub fuse: Conv2d,
    pub channels: usize,
}

impl Rdb {
    pub fn new(name: &str, channels: usize, growth: usize, layers: usize) -> Self {
        let dense = (0..layers)
            .map(|k| Conv2d::new(format!("{name}.dense{k}"), channels + k * growth, growth, 3))
            .collect();
        let fuse = Conv2d::new(format!("{name}.fuse"), channels + layers * growth, channels, 1);
        Self { dense, fuse, channels }
    }

    fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.dense.iter().for_each(|c| c.init(p, rng));
        // residual branch starts small
        let fan_in = self.fuse.cin as f64;
        self.fuse.init_scaled(p, rng, 0.1 / fan_in.sqrt());
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        self.forward_masked(g, p, x, None)
    }

    /// Forward with the output of dense layer `drop` replaced by zeros
    /// (connectivity probe).
    pub fn forward_masked<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, x: Var, drop: Option<usize>) -> Result<Var> {
        if g.shape(x)[1] != self.channels {
            return Err(StedError::shape(format!(
                "dense block expects {} channels, got {}",
                self.channels,
                g.shape(x)[1]
            )));
        }
        let mut feats = vec![x];
        for (k, conv) in self.dense.iter().enumerate() {
            let inp = if feats.len() == 1 { x } else { g.concat(&feats)? };
            let mut y = conv.forward_act(g, p, inp)?;
            if drop == Some(k) {
                y = g.scale(y, T::zero());
            }
            feats.push(y);
        }
        let all = g.concat(&feats)?;
        let fused = self.fuse.forward(g, p, all)?;
        g.add(x, fused)
    }
}

/// Bidirectional per-group disparity head: `2C -> C -> C -> 2L`.
#[derive(Clone, Debug)]
pub struct Bde {
    pub convs: [Conv2d; 3],
    pub groups: usize,
}

/// Per-group fields of one stage, each `[N, L, H/2, W/2]`.
#[derive(Clone, Copy, Debug)]
pub struct GroupDisparities {
    pub b_to_e: Var,
    pub e_to_b: Var,
}

impl Bde {
    pub fn new(name: &str, channels: usize, groups: usize) -> Self {
        Self {
            convs: [
                Conv2d::new(format!("{name}.0"), 2 * channels, channels, 3),
                Conv2d::new(format!("{name}.1"), channels, channels, 3),
                Conv2d::new(format!("{name}.2"), channels, 2 * groups, 3),
            ],
            groups,
        }
    }

    fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.convs[0].init(p, rng);
        self.convs[1].init(p, rng);
        // zero last layer: alignment starts at the identity
        self.convs[2].init_zero(p);
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, f_blur: Var, f_event: Var) -> Result<GroupDisparities> {
        if g.shape(f_blur) != g.shape(f_event) {
            return Err(StedError::shape("feature pair shapes differ"));
        }
        let x = g.concat(&[f_blur, f_event])?;
        let x = self.convs[0].forward_act(g, p, x)?;
        let x = self.convs[1].forward_act(g, p, x)?;
        let d = self.convs[2].forward(g, p, x)?;
        Ok(GroupDisparities {
            b_to_e: g.slice_channels(d, 0, self.groups)?,
            e_to_b: g.slice_channels(d, self.groups, self.groups)?,
        })
    }
}

/// Splits channels into `L` contiguous groups and warps group `l` with field
/// `l` of `d` (`[N, L, H, W]`).
pub fn group_warp<T: Real>(g: &Graph<T>, f: Var, d: Var) -> Result<Var> {
    let c = g.shape(f)[1];
    let l = g.shape(d)[1];
    if l == 0 || c % l != 0 {
        return Err(StedError::shape(format!("{c} channels cannot split into {l} groups")));
    }
    g.warp(f, d)
}

/// Attention fusion: `A = sigmoid(conv([self, other]))`,
/// `out = self + proj(A*self + (1-A)*other)`.
#[derive(Clone, Debug)]
pub struct Aff {
    pub gate: Conv2d,
    pub proj: Conv2d,
}

impl Aff {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gate: Conv2d::new(format!("{name}.gate"), 2 * channels, channels, 3),
            proj: Conv2d::new(format!("{name}.proj"), channels, channels, 1),
        }
    }

    fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.gate.init(p, rng);
        self.proj.init(p, rng);
    }

    /// Gate-weighted convex combination before projection.
    pub fn fuse<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, f_self: Var, w_other: Var) -> Result<Var> {
        if g.shape(f_self) != g.shape(w_other) {
            return Err(StedError::shape("fusion inputs differ in shape"));
        }
        let joint = g.concat(&[f_self, w_other])?;
        let a = g.sigmoid(self.gate.forward(g, p, joint)?);
        let keep = g.mul(a, f_self)?;
        let take = g.mul(g.one_minus(a), w_other)?;
        g.add(keep, take)
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, f_self: Var, w_other: Var) -> Result<Var> {
        let fused = self.fuse(g, p, f_self, w_other)?;
        let y = self.proj.forward(g, p, fused)?;
        g.add(f_self, y)
    }

    /// Fusion without attention (ablation): `self + proj(self + other)`.
    pub fn forward_plain<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, f_self: Var, w_other: Var) -> Result<Var> {
        let s = g.add(f_self, w_other)?;
        let y = self.proj.forward(g, p, s)?;
        g.add(f_self, y)
    }
}

/// Global feature fusion: 1×1 fusion, 3×3 refinement, 3×3 to
/// `4*M*out_channels`, pixel shuffle ×2.
#[derive(Clone, Debug)]
pub struct Gff {
    pub fuse: Conv2d,
    pub conv: Conv2d,
    pub out: Conv2d,
    pub frames: usize,
    pub out_channels: usize,
}

impl Gff {
    pub fn new(name: &str, in_channels: usize, channels: usize, frames: usize, out_channels: usize) -> Self {
        Self {
            fuse: Conv2d::new(format!("{name}.fuse"), in_channels, channels, 1),
            conv: Conv2d::new(format!("{name}.conv"), channels, channels, 3),
            out: Conv2d::new(format!("{name}.out"), channels, 4 * frames * out_channels, 3),
            frames,
            out_channels,
        }
    }

    fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.fuse.init(p, rng);
        self.conv.init(p, rng);
        let fan_in = (self.out.cin * 9) as f64;
        self.out.init_scaled(p, rng, 0.1 / fan_in.sqrt());
    }

    /// `[N, (N_stages+1)*C, H/2, W/2] -> [N, M*out_channels, H, W]`.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, f_cat: Var) -> Result<Var> {
        if g.shape(f_cat)[1] != self.fuse.cin {
            return Err(StedError::shape(format!(
                "global fusion expects {} channels, got {}",
                self.fuse.cin,
                g.shape(f_cat)[1]
            )));
        }
        let x = self.fuse.forward_act(g, p, f_cat)?;
        let x = self.conv.forward_act(g, p, x)?;
        let x = self.out.forward(g, p, x)?;
        g.pixel_shuffle(x, 2)
    }
}

/// Output of one cascade stage.
#[derive(Clone, Copy, Debug)]
pub struct StageOutput {
    pub f_blur: Var,
    pub f_event: Var,
    /// `None` when the disparity head is ablated.
    pub disparities: Option<GroupDisparities>,
}

/// Shared blocks used by every stage.
#[derive(Clone, Debug)]
pub struct SharedBlocks {
    pub bde: Bde,
    pub aff_blur: Aff,
    pub aff_event: Aff,
}

/// One dual-feature embedding stage.
pub fn ddfe<T: Real>(
    g: &Graph<T>,
    p: &ParamStore<T>,
    cfg: &DblrNetConfig,
    shared: &SharedBlocks,
    rdb_blur: &Rdb,
    rdb_event: &Rdb,
    f_blur: Var,
    f_event: Var,
) -> Result<StageOutput> {
    let fb = rdb_blur.forward(g, p, f_blur)?;
    let fe = rdb_event.forward(g, p, f_event)?;
    let (wb, we, disparities) = if cfg.use_bde {
        let d = shared.bde.forward(g, p, fb, fe)?;
        let wb = group_warp(g, fb, d.e_to_b)?;
        let we = group_warp(g, fe, d.b_to_e)?;
        (wb, we, Some(d))
    } else {
        (fb, fe, None)
    };
    // blur path takes the warped event features and vice versa
    let (nb, ne) = if cfg.use_aff {
        (
            shared.aff_blur.forward(g, p, fb, we)?,
            shared.aff_event.forward(g, p, fe, wb)?,
        )
    } else {
        (
            shared.aff_blur.forward_plain(g, p, fb, we)?,
            shared.aff_event.forward_plain(g, p, fe, wb)?,
        )
    };
    Ok(StageOutput {
        f_blur: nb,
        f_event: ne,
        disparities,
    })
}

/// Forward result.
#[derive(Clone, Debug)]
pub struct DblrOutput {
    /// `[N, M*out_channels, H, W]`, frame `m` in channels `m*oc..(m+1)*oc`.
    pub frames: Var,
    pub stages: Vec<StageOutput>,
    /// Shallow features `F^0` of both paths (event entry equals blur entry in
    /// single-path mode).
    pub initial: (Var, Var),
}

#[derive(Clone, Debug)]
pub struct DblrNet {
    pub cfg: DblrNetConfig,
    sfe_blur: Sfe,
    sfe_event: Sfe,
    sfe_single: Sfe,
    rdb_blur: Vec<Rdb>,
    rdb_event: Vec<Rdb>,
    rdb_single: Vec<Rdb>,
    pub shared: SharedBlocks,
    gff: Gff,
}

impl DblrNet {
    pub fn new(cfg: DblrNetConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let rdb = |path: &str| -> Vec<Rdb> {
            (0..cfg.stages)
                .map(|i| Rdb::new(&format!("dblr.ddfe{i}.rdb_{path}"), c, cfg.growth, cfg.dense_layers))
                .collect()
        };
        Ok(Self {
            sfe_blur: Sfe::new("dblr.sfe_b", cfg.out_channels, c),
            sfe_event: Sfe::new("dblr.sfe_e", cfg.bins, c),
            sfe_single: Sfe::new("dblr.sfe_s", cfg.out_channels + cfg.bins, c),
            rdb_blur: rdb("b"),
            rdb_event: rdb("e"),
            rdb_single: rdb("s"),
            shared: SharedBlocks {
                bde: Bde::new("dblr.bde", c, cfg.groups),
                aff_blur: Aff::new("dblr.aff_b", c),
                aff_event: Aff::new("dblr.aff_e", c),
            },
            gff: Gff::new("dblr.gff", (cfg.stages + 1) * c, c, cfg.frames, cfg.out_channels),
            cfg,
        })
    }

    pub fn init<T: Real>(&self, p: &mut ParamStore<T>, rng: &mut impl Rng) {
        if self.cfg.use_dual_path {
            self.sfe_blur.init(p, rng);
            self.sfe_event.init(p, rng);
            for r in self.rdb_blur.iter().chain(&self.rdb_event) {
                r.init(p, rng);
            }
            self.shared.bde.init(p, rng);
            self.shared.aff_blur.init(p, rng);
            self.shared.aff_event.init(p, rng);
        } else {
            self.sfe_single.init(p, rng);
            for r in &self.rdb_single {
                r.init(p, rng);
            }
        }
        self.gff.init(p, rng);
    }

    pub fn sfe_blur(&self) -> &Sfe {
        &self.sfe_blur
    }

    pub fn sfe_event(&self) -> &Sfe {
        &self.sfe_event
    }

    pub fn rdb(&self, stage: usize) -> (&Rdb, &Rdb) {
        (&self.rdb_blur[stage], &self.rdb_event[stage])
    }

    pub fn gff(&self) -> &Gff {
        &self.gff
    }

    /// `blurry`: `[N, out_channels, H, W]`; `voxel`: pre-aligned
    /// `[N, bins, H, W]`. Predicted frames are a residual on the blurry input.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, blurry: Var, voxel: Var) -> Result<DblrOutput> {
        let [n, ic, h, w] = g.shape(blurry);
        let [vn, vb, vh, vw] = g.shape(voxel);
        if (vn, vh, vw) != (n, h, w) || ic != self.cfg.out_channels || vb != self.cfg.bins {
            return Err(StedError::shape(format!(
                "deblurring net got image {:?} and voxel {:?}",
                g.shape(blurry),
                g.shape(voxel)
            )));
        }
        let (initial, stages, f_cat) = if self.cfg.use_dual_path {
            let mut fb = self.sfe_blur.forward(g, p, blurry)?;
            let mut fe = self.sfe_event.forward(g, p, voxel)?;
            let initial = (fb, fe);
            let mut stages = Vec::with_capacity(self.cfg.stages);
            for i in 0..self.cfg.stages {
                let s = ddfe(g, p, &self.cfg, &self.shared, &self.rdb_blur[i], &self.rdb_event[i], fb, fe)?;
                fb = s.f_blur;
                fe = s.f_event;
                stages.push(s);
            }
            let mut cat: Vec<Var> = stages.iter().map(|s| s.f_blur).collect();
            cat.push(fe);
            (initial, stages, g.concat(&cat)?)
        } else {
            let x = g.concat(&[blurry, voxel])?;
            let mut f = self.sfe_single.forward(g, p, x)?;
            let initial = (f, f);
            let mut stages = Vec::with_capacity(self.cfg.stages);
            for r in &self.rdb_single {
                f = r.forward(g, p, f)?;
                stages.push(StageOutput {
                    f_blur: f,
                    f_event: f,
                    disparities: None,
                });
            }
            let mut cat: Vec<Var> = stages.iter().map(|s| s.f_blur).collect();
            cat.push(f);
            (initial, stages, g.concat(&cat)?)
        };
        let residual = self.gff.forward(g, p, f_cat)?;
        let base = g.concat(&vec![blurry; self.cfg.frames])?;
        let frames = g.add(base, residual)?;
        Ok(DblrOutput {
            frames,
            stages,
            initial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DblrNetConfig {
        DblrNetConfig {
            channels: 8,
            stages: 2,
            groups: 4,
            frames: 3,
            out_channels: 1,
            bins: 2,
            growth: 4,
            dense_layers: 3,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(DblrNet::new(DblrNetConfig { groups: 3, ..tiny() }).is_err());
        assert!(DblrNet::new(DblrNetConfig { stages: 0, ..tiny() }).is_err());
        assert!(DblrNet::new(DblrNetConfig { frames: 0, ..tiny() }).is_err());
    }

    #[test]
    fn sfe_rejects_odd_dims() {
        let net = DblrNet::new(tiny()).unwrap();
        let mut p = ParamStore::<f64>::new();
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        let g = Graph::new();
        let x = g.input(Tensor::zeros([1, 1, 7, 8]));
        assert!(net.sfe_blur().forward(&g, &p, x).is_err());
    }

    #[test]
    fn group_warp_rejects_indivisible() {
        let g = Graph::<f64>::new();
        let f = g.input(Tensor::zeros([1, 6, 4, 4]));
        let d = g.input(Tensor::zeros([1, 4, 4, 4]));
        assert!(group_warp(&g, f, d).is_err());
    }

    #[test]
    fn single_path_mode_runs() {
        let cfg = DblrNetConfig {
            use_dual_path: false,
            use_bde: false,
            use_aff: false,
            ..tiny()
        };
        let net = DblrNet::new(cfg).unwrap();
        let mut p = ParamStore::<f32>::new();
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        let g = Graph::new();
        let b = g.input(Tensor::full([2, 1, 8, 8], 0.5));
        let v = g.input(Tensor::zeros([2, 2, 8, 8]));
        let out = net.forward(&g, &p, b, v).unwrap();
        assert_eq!(g.shape(out.frames), [2, 3, 8, 8]);
        assert!(out.stages.iter().all(|s| s.disparities.is_none()));
    }
}
