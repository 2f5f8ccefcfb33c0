//! Synthetic SPI data: board layouts, normal sequences with stencil-cleaning
//! periodicity and alternating squeegee-blade bias, random pad anomalies,
//! and the five printer-defect patterns.
//!
//! All volumes are in normalized units (per-pad z-scale), so anomaly means
//! of +/-5 are five standard-deviation-scale units.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Dims, Tensor};

pub type T64 = Tensor<f64>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pad {
    pub row: usize,
    pub col: usize,
    pub h: usize,
    pub w: usize,
    pub group: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeGroup {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoardLayout {
    pub height: usize,
    pub width: usize,
    pub pads: Vec<Pad>,
    pub groups: Vec<ShapeGroup>,
}

impl BoardLayout {
    pub fn pad_mask(&self) -> T64 {
        let mut m = Tensor::zeros(Dims::new(1, 1, self.height, self.width));
        for p in &self.pads {
            for y in p.row..p.row + p.h {
                for x in p.col..p.col + p.w {
                    m.set(0, 0, y, x, 1.0);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub n_groups: usize,
    pub n_pads: usize,
    pub t_len: usize,
    /// Stencil cleaning period. Kept even so the cleaning sawtooth and the
    /// period-2 blade alternation stay spectrally separate.
    pub t_c: usize,
    pub amp_clean: f64,
    pub amp_blade: f64,
    pub sigma_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            height: 32,
            width: 32,
            n_groups: 10,
            n_pads: 120,
            t_len: 20,
            t_c: 4,
            amp_clean: 0.5,
            amp_blade: 0.1,
            sigma_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub seed: u64,
    pub t_c: usize,
    pub defect: Option<String>,
    /// Signed per-timestep profile amplitude (defect sequences only).
    pub f_trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SpiSequence {
    /// X_1..T, each (1, 2, h, w): channel 0 volume, channel 1 pad mask.
    pub frames: Vec<T64>,
    /// Signed labels per t, (1, 1, h, w): +1 excessive, -1 insufficient.
    pub labels: Option<Vec<T64>>,
    pub meta: SequenceMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    SqueegeeBlade,
    Support,
    RemovedArea,
    NoKneading,
    Clamp,
}

impl DefectKind {
    pub const ALL: [DefectKind; 5] = [
        DefectKind::SqueegeeBlade,
        DefectKind::Support,
        DefectKind::RemovedArea,
        DefectKind::NoKneading,
        DefectKind::Clamp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DefectKind::SqueegeeBlade => "squeegee_blade",
            DefectKind::Support => "support",
            DefectKind::RemovedArea => "removed_area",
            DefectKind::NoKneading => "no_kneading",
            DefectKind::Clamp => "clamp",
        }
    }

    pub fn parse(s: &str) -> Result<DefectKind> {
        DefectKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown defect kind '{s}'")))
    }
}

/// Pads are placed on a uniform slot grid (slot pitch 3, footprints up to
/// 2x2), so overlap is impossible by construction. Slots are assigned to
/// shape groups in contiguous raster runs, giving each group a spatially
/// clustered region as real aperture groups have.
pub fn generate_layout(
    seed: u64,
    height: usize,
    width: usize,
    n_groups: usize,
    n_pads: usize,
) -> Result<BoardLayout> {
    if n_groups == 0 && n_pads > 0 {
        return Err(Error::invalid("need at least one shape group"));
    }
    let pitch = 3;
    let slots_per_row = (width + pitch - 1) / pitch;
    let slot_rows = (height + pitch - 1) / pitch;
    let mut slots = Vec::new();
    for sr in 0..slot_rows {
        for sc in 0..slots_per_row {
            let (r, c) = (sr * pitch, sc * pitch);
            if r + 2 <= height && c + 2 <= width {
                slots.push((r, c));
            }
        }
    }
    if n_pads > slots.len() {
        return Err(Error::invalid(format!(
            "cannot place {n_pads} pads: only {} slots on {height}x{width}",
            slots.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<ShapeGroup> = (0..n_groups)
        .map(|_| ShapeGroup {
            mu: rng.gen_range(0.5..1.5),
            sigma: rng.gen_range(0.02..0.08),
        })
        .collect();
    let footprints = [(1, 1), (1, 2), (2, 1), (2, 2)];
    let pads: Vec<Pad> = (0..n_pads)
        .map(|i| {
            let group = i * n_groups / n_pads;
            let (h, w) = footprints[group % footprints.len()];
            let (row, col) = slots[i];
            Pad { row, col, h, w, group }
        })
        .collect();
    Ok(BoardLayout {
        height,
        width,
        pads,
        groups,
    })
}

/// Per-pad volume at 1-based timestep t in [1, T]:
/// mu_g + amp_clean * ((t-1) mod T_c)/T_c + amp_blade * (-1)^t
///      + N(0, sigma_g^2) + N(0, sigma_noise^2)
/// with both noises drawn per (pad, t) and constant over the footprint.
pub fn generate_normal(layout: &BoardLayout, cfg: &GeneratorConfig, seed: u64) -> SpiSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = layout.pad_mask();
    let mut frames = Vec::with_capacity(cfg.t_len);
    for t in 1..=cfg.t_len {
        let ramp = ((t - 1) % cfg.t_c) as f64 / cfg.t_c as f64;
        let blade = if t % 2 == 0 { cfg.amp_blade } else { -cfg.amp_blade };
        let mut frame = Tensor::zeros(Dims::new(1, 2, layout.height, layout.width));
        for p in &layout.pads {
            let g = &layout.groups[p.group];
            let v = g.mu
                + cfg.amp_clean * ramp
                + blade
                + Normal::new(0.0, g.sigma).unwrap().sample(&mut rng)
                + Normal::new(0.0, cfg.sigma_noise).unwrap().sample(&mut rng);
            for y in p.row..p.row + p.h {
                for x in p.col..p.col + p.w {
                    frame.set(0, 0, y, x, v);
                }
            }
        }
        for y in 0..layout.height {
            for x in 0..layout.width {
                frame.set(0, 1, y, x, mask.at(0, 0, y, x));
            }
        }
        frames.push(frame);
    }
    SpiSequence {
        frames,
        labels: None,
        meta: SequenceMeta {
            seed,
            t_c: cfg.t_c,
            defect: None,
            f_trace: None,
        },
    }
}

/// Eq. 9 random anomaly injection. Pads join the anomaly set independently
/// with probability p_a; the anomaly sign (+5 excessive / -5 insufficient)
/// is one coin flip per sequence, as a printing fault biases a whole board
/// the same way. Offsets are N(sign*mu, sigma^2) per (pad, t).
pub fn inject_random(
    seq: &SpiSequence,
    layout: &BoardLayout,
    p_a: f64,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> SpiSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let chosen: Vec<bool> = layout.pads.iter().map(|_| rng.gen_bool(p_a)).collect();
    let normal = Normal::new(sign * mu, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut frames = Vec::with_capacity(seq.frames.len());
    let mut labels = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let mut f = frame.clone();
        let mut lab = Tensor::zeros(Dims::new(1, 1, layout.height, layout.width));
        for (p, &hit) in layout.pads.iter().zip(&chosen) {
            if !hit {
                continue;
            }
            let off = normal.sample(&mut rng);
            for y in p.row..p.row + p.h {
                for x in p.col..p.col + p.w {
                    f.set(0, 0, y, x, f.at(0, 0, y, x) + off);
                    lab.set(0, 0, y, x, sign);
                }
            }
        }
        frames.push(f);
        labels.push(lab);
    }
    SpiSequence {
        frames,
        labels: Some(labels),
        meta: SequenceMeta {
            seed,
            t_c: seq.meta.t_c,
            defect: None,
            f_trace: None,
        },
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Eq. 11 anomaly-score profiles; t is 1-based, `clamp_sign` resolves the
/// +/- branch of (e).
pub fn defect_profile(kind: DefectKind, t: usize, t_len: usize, clamp_sign: f64) -> f64 {
    let s = sigmoid(10.0 * t as f64 / t_len as f64 - 5.0);
    match kind {
        DefectKind::SqueegeeBlade => {
            if t % 2 == 1 {
                s
            } else {
                0.0
            }
        }
        DefectKind::Support => s,
        DefectKind::RemovedArea => -s,
        DefectKind::NoKneading => 1.0 - s,
        DefectKind::Clamp => clamp_sign * s,
    }
}

/// Pad indices covered by each defect's spatial pattern.
pub fn defect_mask(kind: DefectKind, layout: &BoardLayout, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        // A thin stripe along the print direction: one pad row.
        DefectKind::SqueegeeBlade => {
            let rows: Vec<usize> = {
                let mut r: Vec<usize> = layout.pads.iter().map(|p| p.row).collect();
                r.sort_unstable();
                r.dedup();
                r
            };
            let row = *rows.choose(&mut rng).expect("layout has pads");
            layout.pads.iter().map(|p| p.row == row).collect()
        }
        // Broad contiguous region, ~25% of the board: a full-width band so
        // the affected shape groups are saturated, not half-hit.
        DefectKind::Support => {
            let h4 = layout.height / 4;
            layout.pads.iter().map(|p| p.row < h4).collect()
        }
        // The trailing band of the print stroke.
        DefectKind::RemovedArea => {
            let band = layout.height * 3 / 4;
            layout.pads.iter().map(|p| p.row >= band).collect()
        }
        // Large area, ~half the board.
        DefectKind::NoKneading => {
            let h2 = layout.height / 2;
            layout.pads.iter().map(|p| p.row < h2).collect()
        }
        // Pads within 10% of the left/right edges.
        DefectKind::Clamp => {
            let edge = (layout.width as f64 * 0.1).ceil() as usize;
            layout
                .pads
                .iter()
                .map(|p| p.col < edge || p.col + p.w > layout.width - edge)
                .collect()
        }
    }
}

/// Eq. 10 defect injection: offset = amplitude * f(t) on masked pads. A pad
/// is labeled at t when the offset magnitude exceeds 3 sigma_g, with the
/// offset's sign.
pub fn inject_defect(
    seq: &SpiSequence,
    layout: &BoardLayout,
    kind: DefectKind,
    amplitude: f64,
    seed: u64,
) -> SpiSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clamp_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mask = defect_mask(kind, layout, seed.wrapping_add(1));
    let t_len = seq.frames.len();
    let mut frames = Vec::with_capacity(t_len);
    let mut labels = Vec::with_capacity(t_len);
    let mut trace = Vec::with_capacity(t_len);
    for (ti, frame) in seq.frames.iter().enumerate() {
        let t = ti + 1;
        let f_t = defect_profile(kind, t, t_len, clamp_sign);
        trace.push(f_t);
        let off = amplitude * f_t;
        let mut fr = frame.clone();
        let mut lab = Tensor::zeros(Dims::new(1, 1, layout.height, layout.width));
        for (p, &hit) in layout.pads.iter().zip(&mask) {
            if !hit || off == 0.0 {
                continue;
            }
            let labeled = off.abs() > 3.0 * layout.groups[p.group].sigma;
            for y in p.row..p.row + p.h {
                for x in p.col..p.col + p.w {
                    fr.set(0, 0, y, x, fr.at(0, 0, y, x) + off);
                    if labeled {
                        lab.set(0, 0, y, x, off.signum());
                    }
                }
            }
        }
        frames.push(fr);
        labels.push(lab);
    }
    SpiSequence {
        frames,
        labels: Some(labels),
        meta: SequenceMeta {
            seed,
            t_c: seq.meta.t_c,
            defect: Some(kind.name().to_string()),
            f_trace: Some(trace),
        },
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub layout: BoardLayout,
    pub sequences: Vec<SpiSequence>,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    config: GeneratorConfig,
    layout: BoardLayout,
    sequences: Vec<SequenceMeta>,
    labeled: Vec<bool>,
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        config: ds.config.clone(),
        layout: ds.layout.clone(),
        sequences: ds.sequences.iter().map(|s| s.meta.clone()).collect(),
        labeled: ds.sequences.iter().map(|s| s.labels.is_some()).collect(),
    };
    fs::write(
        dir.join("dataset.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    for (i, seq) in ds.sequences.iter().enumerate() {
        io::save_frames(&dir.join(format!("seq{i:04}.spt1")), &seq.frames)?;
        if let Some(labels) = &seq.labels {
            io::save_frames(&dir.join(format!("seq{i:04}.labels.spt1")), labels)?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("dataset.json");
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for (i, meta) in manifest.sequences.into_iter().enumerate() {
        let frames = io::load_frames(&dir.join(format!("seq{i:04}.spt1")))?;
        let labels = if manifest.labeled[i] {
            Some(io::load_frames(&dir.join(format!("seq{i:04}.labels.spt1")))?)
        } else {
            None
        };
        sequences.push(SpiSequence {
            frames,
            labels,
            meta,
        });
    }
    Ok(Dataset {
        config: manifest.config,
        layout: manifest.layout,
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_layout(seed: u64) -> BoardLayout {
        let c = GeneratorConfig::default();
        generate_layout(seed, c.height, c.width, c.n_groups, c.n_pads).unwrap()
    }

    #[test]
    fn layout_deterministic_and_overlap_free() {
        let a = default_layout(1);
        let b = default_layout(1);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        // brute-force pairwise overlap check
        for (i, p) in a.pads.iter().enumerate() {
            for q in &a.pads[i + 1..] {
                let sep = p.row + p.h <= q.row
                    || q.row + q.h <= p.row
                    || p.col + p.w <= q.col
                    || q.col + q.w <= p.col;
                assert!(sep, "pads overlap: {p:?} {q:?}");
            }
        }
        for p in &a.pads {
            assert!(p.row + p.h <= a.height && p.col + p.w <= a.width);
            assert!(p.group < a.groups.len());
        }
    }

    fn mean_profile(seq: &SpiSequence, layout: &BoardLayout) -> Vec<f64> {
        seq.frames
            .iter()
            .map(|f| {
                let mut acc = 0.0;
                for p in &layout.pads {
                    acc += f.at(0, 0, p.row, p.col);
                }
                acc / layout.pads.len() as f64
            })
            .collect()
    }

    #[test]
    fn normal_profile_alternates_and_peaks_at_tc() {
        let cfg = GeneratorConfig::default();
        let layout = default_layout(2);
        let seq = generate_normal(&layout, &cfg, 3);
        let m = mean_profile(&seq, &layout);
        // First differences alternate sign: up into even t, down into odd t.
        for t in 2..=cfg.t_len {
            let d = m[t - 1] - m[t - 2];
            if t % 2 == 0 {
                assert!(d > 0.0, "expected rise into even t={t}, got {d}");
            } else {
                assert!(d < 0.0, "expected fall into odd t={t}, got {d}");
            }
        }
        // Autocorrelation peaks at lag T_c among lags 1..=T_c+2.
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        let auto = |lag: usize| -> f64 {
            (0..m.len() - lag)
                .map(|i| (m[i] - mean) * (m[i + lag] - mean))
                .sum::<f64>()
                / (m.len() - lag) as f64
        };
        let peak = auto(cfg.t_c);
        for lag in 1..=cfg.t_c + 2 {
            if lag != cfg.t_c {
                assert!(
                    peak > auto(lag),
                    "lag {lag} autocorr {} >= lag T_c {}",
                    auto(lag),
                    peak
                );
            }
        }
    }

    #[test]
    fn constant_when_everything_disabled() {
        let mut cfg = GeneratorConfig::default();
        cfg.amp_clean = 0.0;
        cfg.amp_blade = 0.0;
        cfg.sigma_noise = 0.0;
        let mut layout = default_layout(4);
        for g in &mut layout.groups {
            g.sigma = 0.0;
        }
        let seq = generate_normal(&layout, &cfg, 5);
        for p in &layout.pads {
            let v0 = seq.frames[0].at(0, 0, p.row, p.col);
            for f in &seq.frames {
                assert_eq!(f.at(0, 0, p.row, p.col), v0);
            }
        }
    }

    #[test]
    fn random_injection_rate_and_offset() {
        let cfg = GeneratorConfig::default();
        let layout = default_layout(6);
        let mut labeled = 0usize;
        let mut total = 0usize;
        let mut offset_sum = 0.0;
        let mut offset_n = 0usize;
        for seed in 0..100 {
            let normal = generate_normal(&layout, &cfg, 1000 + seed);
            let inj = inject_random(&normal, &layout, 0.3, 5.0, 0.1, 2000 + seed);
            let labels = inj.labels.as_ref().unwrap();
            for p in &layout.pads {
                total += 1;
                if labels[0].at(0, 0, p.row, p.col) != 0.0 {
                    labeled += 1;
                    for t in 0..cfg.t_len {
                        let off = inj.frames[t].at(0, 0, p.row, p.col)
                            - normal.frames[t].at(0, 0, p.row, p.col);
                        offset_sum += off.abs();
                        offset_n += 1;
                    }
                }
            }
        }
        let frac = labeled as f64 / total as f64;
        assert!((0.28..=0.32).contains(&frac), "labeled fraction {frac}");
        let mean_abs = offset_sum / offset_n as f64;
        assert!((mean_abs - 5.0).abs() < 0.05, "mean |offset| {mean_abs}");
    }

    #[test]
    fn defect_profiles_match_branches() {
        let t_len = 20;
        // support at t = T/2 is exactly sigma(0) = 0.5
        assert!((defect_profile(DefectKind::Support, 10, t_len, 1.0) - 0.5).abs() < 1e-15);
        assert!(
            (defect_profile(DefectKind::NoKneading, 10, t_len, 1.0) - 0.5).abs() < 1e-15
        );
        let end = defect_profile(DefectKind::NoKneading, 20, t_len, 1.0);
        assert!((end - 1.0 / (1.0 + 5f64.exp())).abs() < 1e-12);
        for t in (2..=t_len).step_by(2) {
            assert_eq!(defect_profile(DefectKind::SqueegeeBlade, t, t_len, 1.0), 0.0);
        }
        for t in 1..=t_len {
            assert!(defect_profile(DefectKind::RemovedArea, t, t_len, 1.0) <= 0.0);
            let c = defect_profile(DefectKind::Clamp, t, t_len, -1.0);
            assert!(c <= 0.0);
            for k in DefectKind::ALL {
                let f = defect_profile(k, t, t_len, 1.0);
                assert!((-1.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn defect_masks_are_pad_subsets_with_expected_geometry() {
        let layout = default_layout(7);
        for kind in DefectKind::ALL {
            let m = defect_mask(kind, &layout, 11);
            assert_eq!(m.len(), layout.pads.len());
            assert!(m.iter().any(|&b| b), "{kind:?} selects no pads");
        }
        let edge = (layout.width as f64 * 0.1).ceil() as usize;
        for (p, &hit) in layout
            .pads
            .iter()
            .zip(&defect_mask(DefectKind::Clamp, &layout, 11))
        {
            if hit {
                assert!(p.col < edge || p.col + p.w > layout.width - edge);
            }
        }
        let blade = defect_mask(DefectKind::SqueegeeBlade, &layout, 11);
        let rows: std::collections::HashSet<usize> = layout
            .pads
            .iter()
            .zip(&blade)
            .filter(|(_, &b)| b)
            .map(|(p, _)| p.row)
            .collect();
        assert_eq!(rows.len(), 1, "blade stripe should be one pad row");
    }

    #[test]
    fn support_label_count_non_decreasing() {
        let cfg = GeneratorConfig::default();
        let layout = default_layout(8);
        let normal = generate_normal(&layout, &cfg, 9);
        let inj = inject_defect(&normal, &layout, DefectKind::Support, 5.0, 10);
        let labels = inj.labels.unwrap();
        let counts: Vec<usize> = labels
            .iter()
            .map(|l| l.data().iter().filter(|&&v| v != 0.0).count())
            .collect();
        for w in counts.windows(2) {
            assert!(w[1] >= w[0], "label counts {counts:?}");
        }
        assert!(*counts.last().unwrap() > 0);
    }

    #[test]
    fn blade_even_timesteps_unlabeled() {
        let cfg = GeneratorConfig::default();
        let layout = default_layout(12);
        let normal = generate_normal(&layout, &cfg, 13);
        let inj = inject_defect(&normal, &layout, DefectKind::SqueegeeBlade, 5.0, 14);
        let labels = inj.labels.unwrap();
        for t in (2..=cfg.t_len).step_by(2) {
            assert!(labels[t - 1].data().iter().all(|&v| v == 0.0));
        }
        // last odd timestep carries labels (sigmoid near 1 there)
        assert!(labels[cfg.t_len - 2].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let cfg = GeneratorConfig::default();
        let layout = default_layout(20);
        let seqs: Vec<SpiSequence> = (0..3)
            .map(|i| {
                let n = generate_normal(&layout, &cfg, 30 + i);
                if i == 2 {
                    inject_random(&n, &layout, 0.2, 5.0, 0.1, 40)
                } else {
                    n
                }
            })
            .collect();
        let ds = Dataset {
            config: cfg,
            layout,
            sequences: seqs,
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.sequences.len(), 3);
        for (a, b) in ds.sequences.iter().zip(&back.sequences) {
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                // stored as f32; compare at f32 precision
                for (&u, &v) in fa.data().iter().zip(fb.data()) {
                    assert_eq!(u as f32, v as f32);
                    assert_eq!((u as f32) as f64, v);
                }
            }
            assert_eq!(a.labels.is_some(), b.labels.is_some());
        }
    }
}
