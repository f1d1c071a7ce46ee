//! Four-scale encoder-decoder restoration network: shallow-feature
//! injection of downscaled inputs on the way down, attention-gated skip
//! connections on the way up, and per-level residual heads so each scale
//! predicts a correction to its own downsampled input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{HsfsBlock, HsfsOptions, MssfOptions, Scam, SfeBlock};
use crate::graph::{Graph, Var};
use crate::layers::Conv2d;
use crate::params::{Binding, ParamStore};

pub const NUM_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipMode {
    /// Element-wise addition of the encoder feature.
    Sum,
    /// Channel concatenation of the encoder feature + 1x1 adjust.
    Concat,
    /// Cross-gating: each stream is modulated by a 1x1 projection of the
    /// other before concatenation.
    CgbLike,
    /// Attention-gated skip aggregation over all encoder levels.
    Scam,
}

impl SkipMode {
    pub fn parse(s: &str) -> Option<SkipMode> {
        match s {
            "sum" => Some(SkipMode::Sum),
            "concat" => Some(SkipMode::Concat),
            "cgb" | "cgb-like" => Some(SkipMode::CgbLike),
            "scam" => Some(SkipMode::Scam),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SkipMode::Sum => "sum",
            SkipMode::Concat => "concat",
            SkipMode::CgbLike => "cgb-like",
            SkipMode::Scam => "scam",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_width: usize,
    pub blocks_per_level: [usize; NUM_LEVELS],
    /// (groups, kernel) per frequency branch of the selective frequency
    /// module; empty disables the module.
    pub msfm_branches: Vec<(usize, usize)>,
    pub heads: usize,
    pub mssf_branches: usize,
    pub skip_mode: SkipMode,
    /// Inject downscaled inputs at levels 2-4 and emit a restored image at
    /// every level (training-time deep supervision).
    pub multi_io: bool,
    /// Ablation baseline: detail branch only, no context stage, no
    /// spectral or frequency-selection paths.
    pub local_only: bool,
    /// Fourier-domain branch inside each detail block.
    pub spectral_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 16,
            blocks_per_level: [2, 2, 4, 6],
            msfm_branches: vec![(4, 3), (4, 5)],
            heads: 2,
            mssf_branches: 2,
            skip_mode: SkipMode::Scam,
            multi_io: true,
            local_only: false,
            spectral_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn widths(&self) -> [usize; NUM_LEVELS] {
        let c = self.base_width;
        [c, 2 * c, 4 * c, 8 * c]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.base_width == 0 {
            return Err("base_width must be positive".into());
        }
        if !(1..=3).contains(&self.mssf_branches) {
            return Err(format!("mssf_branches must be 1..=3, got {}", self.mssf_branches));
        }
        let nb = self.msfm_branches.len();
        for &c in &self.widths() {
            if !(self.mssf_branches * c).is_multiple_of(2) {
                return Err(format!("context width {}x{c} must be even", self.mssf_branches));
            }
            if nb > 0 {
                if c % nb != 0 {
                    return Err(format!("width {c} not divisible by {nb} frequency branches"));
                }
                let cb = c / nb;
                for &(g, k) in &self.msfm_branches {
                    if k % 2 == 0 {
                        return Err(format!("frequency kernel {k} must be odd"));
                    }
                    if !cb.is_multiple_of(g) {
                        return Err(format!("branch width {cb} not divisible by {g} groups"));
                    }
                }
                if !cb.is_multiple_of(self.heads) {
                    return Err(format!("branch width {cb} not divisible by {} heads", self.heads));
                }
            }
        }
        Ok(())
    }

    fn hsfs_opts(&self) -> HsfsOptions {
        HsfsOptions {
            mssf: MssfOptions {
                branches: self.mssf_branches,
                spectral_enabled: self.spectral_enabled,
                local_only: self.local_only,
            },
            msfm_branches: if self.local_only {
                Vec::new()
            } else {
                self.msfm_branches.clone()
            },
            heads: self.heads,
        }
    }
}

enum SkipFuse {
    Sum,
    Concat(Conv2d),
    Cgb {
        gate_skip: Conv2d,
        gate_dec: Conv2d,
        out: Conv2d,
    },
}

impl SkipFuse {
    fn init(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, mode: SkipMode, c: usize) -> Self {
        match mode {
            SkipMode::Sum => SkipFuse::Sum,
            // the attention-gated skip is fused the same way as plain concat
            SkipMode::Concat | SkipMode::Scam => {
                SkipFuse::Concat(Conv2d::pointwise(ps, rng, &format!("{name}.fuse"), 2 * c, c))
            }
            SkipMode::CgbLike => SkipFuse::Cgb {
                gate_skip: Conv2d::pointwise(ps, rng, &format!("{name}.gate_s"), c, c),
                gate_dec: Conv2d::pointwise(ps, rng, &format!("{name}.gate_d"), c, c),
                out: Conv2d::pointwise(ps, rng, &format!("{name}.fuse"), 2 * c, c),
            },
        }
    }

    fn apply(&self, g: &mut Graph, bind: &Binding, dec: Var, skip: Var) -> Var {
        match self {
            SkipFuse::Sum => g.add(dec, skip),
            SkipFuse::Concat(conv) => {
                let cat = g.concat_ch(&[dec, skip]);
                conv.apply(g, bind, cat)
            }
            SkipFuse::Cgb { gate_skip, gate_dec, out } => {
                let gs = gate_skip.apply(g, bind, skip);
                let gd = gate_dec.apply(g, bind, dec);
                let s_mod = g.mul(skip, gd);
                let d_mod = g.mul(dec, gs);
                let cat = g.concat_ch(&[d_mod, s_mod]);
                out.apply(g, bind, cat)
            }
        }
    }
}

pub struct LcdNet {
    pub cfg: ModelConfig,
    intro: Conv2d,
    enc: Vec<HsfsBlock>,     // levels 0..2
    down: Vec<Conv2d>,       // stride-2, level i -> i+1
    inject: Vec<(SfeBlock, Conv2d)>, // levels 1..3 when multi-input
    middle: HsfsBlock,
    scam: Option<Scam>,
    fuse: Vec<SkipFuse>,     // per level 0..3
    up: Vec<Conv2d>,         // level i+1 -> i
    dec: Vec<HsfsBlock>,     // levels 0..2
    heads: Vec<Option<Conv2d>>, // per level residual heads
}

impl LcdNet {
    pub fn init(ps: &mut ParamStore, seed: u64, cfg: &ModelConfig) -> Self {
        cfg.validate().expect("invalid model configuration");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let w = cfg.widths();
        let opts = cfg.hsfs_opts();
        let intro = Conv2d::init(ps, rng, "intro", 3, w[0], 3, 1, 1);
        let enc = (0..3)
            .map(|i| HsfsBlock::init(ps, rng, &format!("enc{i}"), w[i], cfg.blocks_per_level[i], &opts))
            .collect();
        let down = (0..3)
            .map(|i| Conv2d::init(ps, rng, &format!("down{i}"), w[i], w[i + 1], 3, 2, 1))
            .collect();
        let inject = if cfg.multi_io {
            (1..NUM_LEVELS)
                .map(|i| {
                    (
                        SfeBlock::init(ps, rng, &format!("sfe{i}"), w[i]),
                        Conv2d::init(ps, rng, &format!("adjust{i}"), 2 * w[i], w[i], 3, 1, 1),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let middle = HsfsBlock::init(ps, rng, "middle", w[3], cfg.blocks_per_level[3], &opts);
        let scam = if cfg.skip_mode == SkipMode::Scam {
            Some(Scam::init(ps, rng, "scam", &w))
        } else {
            None
        };
        let fuse = (0..NUM_LEVELS)
            .map(|i| SkipFuse::init(ps, rng, &format!("dec{i}"), cfg.skip_mode, w[i]))
            .collect();
        let up = (0..3)
            .map(|i| Conv2d::pointwise(ps, rng, &format!("up{i}"), w[i + 1], 2 * w[i + 1]))
            .collect();
        let dec = (0..3)
            .map(|i| HsfsBlock::init(ps, rng, &format!("dec{i}"), w[i], cfg.blocks_per_level[i], &opts))
            .collect();
        let heads = (0..NUM_LEVELS)
            .map(|i| {
                if i == 0 || cfg.multi_io {
                    Some(Conv2d::init(ps, rng, &format!("head{i}"), w[i], 3, 3, 1, 1))
                } else {
                    None
                }
            })
            .collect();
        LcdNet {
            cfg: cfg.clone(),
            intro,
            enc,
            down,
            inject,
            middle,
            scam,
            fuse,
            up,
            dec,
            heads,
        }
    }

    /// Runs the network on an image pyramid (level 0 at full resolution).
    /// Returns one restored image per level with `multi_io`, otherwise just
    /// the full-resolution output.
    pub fn forward(&self, g: &mut Graph, bind: &Binding, imgs: &[Var]) -> Vec<Var> {
        assert_eq!(imgs.len(), NUM_LEVELS, "expected a {NUM_LEVELS}-level pyramid");
        let shape = g.shape(imgs[0]).to_vec();
        assert_eq!(shape[1], 3, "expected RGB input");
        assert!(
            shape[2].is_multiple_of(8) && shape[3].is_multiple_of(8),
            "input extent must be divisible by 8, got {}x{}",
            shape[2],
            shape[3]
        );

        // encoder
        let mut enc_feats = Vec::with_capacity(NUM_LEVELS);
        let mut v = self.intro.apply(g, bind, imgs[0]);
        for lvl in 0..3 {
            if lvl > 0 {
                v = self.inject_level(g, bind, v, imgs, lvl);
            }
            v = self.enc[lvl].forward(g, bind, v);
            enc_feats.push(v);
            v = self.down[lvl].apply(g, bind, v);
        }
        v = self.inject_level(g, bind, v, imgs, 3);
        enc_feats.push(v);

        let mid = self.middle.forward(g, bind, v);

        // skip features: gated aggregation or the raw encoder outputs
        let skips: Vec<Var> = match &self.scam {
            Some(s) => s.forward(g, bind, &enc_feats, mid),
            None => enc_feats.clone(),
        };

        // decoder, deepest level first
        let mut outputs: Vec<Option<Var>> = vec![None; NUM_LEVELS];
        let mut d = self.fuse[3].apply(g, bind, mid, skips[3]);
        outputs[3] = self.apply_head(g, bind, d, imgs, 3);
        for lvl in (0..3).rev() {
            let expanded = self.up[lvl].apply(g, bind, d);
            d = g.pixel_shuffle2(expanded);
            d = self.fuse[lvl].apply(g, bind, d, skips[lvl]);
            d = self.dec[lvl].forward(g, bind, d);
            outputs[lvl] = self.apply_head(g, bind, d, imgs, lvl);
        }

        if self.cfg.multi_io {
            outputs.into_iter().map(|o| o.unwrap()).collect()
        } else {
            vec![outputs[0].unwrap()]
        }
    }

    fn inject_level(&self, g: &mut Graph, bind: &Binding, v: Var, imgs: &[Var], lvl: usize) -> Var {
        if !self.cfg.multi_io {
            return v;
        }
        let (sfe, adjust) = &self.inject[lvl - 1];
        let s = sfe.forward(g, bind, imgs[lvl]);
        let cat = g.concat_ch(&[v, s]);
        adjust.apply(g, bind, cat)
    }

    fn apply_head(&self, g: &mut Graph, bind: &Binding, d: Var, imgs: &[Var], lvl: usize) -> Option<Var> {
        self.heads[lvl].as_ref().map(|head| {
            let residual = head.apply(g, bind, d);
            g.add(residual, imgs[lvl])
        })
    }
}

/// 2x2-average image pyramid with `NUM_LEVELS` levels, level 0 = input.
pub fn make_pyramid(g: &mut Graph, img: Var) -> Vec<Var> {
    let mut levels = vec![img];
    for _ in 1..NUM_LEVELS {
        let next = g.avg_pool2(*levels.last().unwrap());
        levels.push(next);
    }
    levels
}
