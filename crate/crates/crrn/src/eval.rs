//! Detection scoring and evaluation: the per-shape-group statistical
//! baseline, PR/F1 machinery over signed pad scores, per-timestep recall
//! profiles, and pooled binarization of anomaly maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::BoardLayout;
use crate::tensor::{Dims, Tensor};

pub type T64 = Tensor<f64>;

/// One decision quantity per (pad, timestep). `score` is signed: positive
/// flags excessive solder, negative insufficient. `label` is the ground
/// truth sign (+1 excessive, -1 insufficient, 0 normal).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PadScore {
    pub pad: usize,
    pub t: usize,
    pub score: f64,
    pub label: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Excessive,
    Insufficient,
}

impl Polarity {
    fn label_sign(&self) -> i8 {
        match self {
            Polarity::Excessive => 1,
            Polarity::Insufficient => -1,
        }
    }

    fn predicted(&self, score: f64, theta: f64) -> bool {
        match self {
            Polarity::Excessive => score > theta,
            Polarity::Insufficient => score < -theta,
        }
    }
}

fn footprint_mean(map: &T64, p: &crate::synth::Pad) -> f64 {
    let mut acc = 0.0;
    for y in p.row..p.row + p.h {
        for x in p.col..p.col + p.w {
            acc += map.at(0, 0, y, x);
        }
    }
    acc / (p.h * p.w) as f64
}

fn pad_label(labels: Option<&[T64]>, layout: &BoardLayout, pad: usize, t: usize) -> i8 {
    let Some(labels) = labels else { return 0 };
    let p = &layout.pads[pad];
    let s = footprint_mean(&labels[t], p);
    if s > 0.0 {
        1
    } else if s < 0.0 {
        -1
    } else {
        0
    }
}

/// Per-shape-group z-score detector over the SPI volume channel. Group mean
/// and standard deviation are pooled over all member pads and all timesteps
/// of the evaluated window. Groups with fewer than two member pads cannot be
/// scored and get score 0 with a warning.
pub fn statistical_detect(
    frames: &[T64],
    layout: &BoardLayout,
    labels: Option<&[T64]>,
) -> Vec<PadScore> {
    let volumes: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| layout.pads.iter().map(|p| footprint_mean(f, p)).collect())
        .collect();
    let n_groups = layout.groups.len();
    let mut stats = vec![(0.0f64, 0.0f64, 0usize); n_groups]; // (mean, std, members)
    for g in 0..n_groups {
        let members: Vec<usize> = (0..layout.pads.len())
            .filter(|&i| layout.pads[i].group == g)
            .collect();
        if members.len() < 2 {
            eprintln!("warning: shape group {g} has {} pads; scored 0", members.len());
            continue;
        }
        let vals: Vec<f64> = volumes
            .iter()
            .flat_map(|row| members.iter().map(|&i| row[i]))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
        stats[g] = (mean, var.sqrt(), members.len());
    }
    let mut out = Vec::with_capacity(layout.pads.len() * frames.len());
    for (t, row) in volumes.iter().enumerate() {
        for (i, (&v, p)) in row.iter().zip(&layout.pads).enumerate() {
            let (mean, std, members) = stats[p.group];
            // a std at rounding-noise scale means the group is constant
            let degenerate = std <= mean.abs() * 1e-12;
            let score = if members < 2 || degenerate {
                0.0
            } else {
                (v - mean) / std
            };
            out.push(PadScore {
                pad: i,
                t,
                score,
                label: pad_label(labels, layout, i, t),
            });
        }
    }
    out
}

/// Pad scores from CRRN reconstruction-error maps: the mean of ε over the
/// pad footprint at each timestep.
pub fn crrn_scores(maps: &[T64], layout: &BoardLayout, labels: Option<&[T64]>) -> Vec<PadScore> {
    let mut out = Vec::with_capacity(layout.pads.len() * maps.len());
    for (t, map) in maps.iter().enumerate() {
        for (i, p) in layout.pads.iter().enumerate() {
            out.push(PadScore {
                pad: i,
                t,
                score: footprint_mean(map, p),
                label: pad_label(labels, layout, i, t),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// PR curve over `n_thresholds` strictly increasing thresholds spanning
/// [0, max|score|]. For the excessive polarity, score > θ is a predicted
/// positive against the excessive (+1) labels; insufficient uses score < -θ
/// against the -1 labels.
pub fn pr_curve(scores: &[PadScore], polarity: Polarity, n_thresholds: usize) -> Result<Vec<PrPoint>> {
    let sign = polarity.label_sign();
    let n_pos = scores.iter().filter(|s| s.label == sign).count();
    if n_pos == 0 || n_pos == scores.len() {
        return Err(Error::DegenerateLabels);
    }
    let max_abs = scores
        .iter()
        .map(|s| s.score.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut curve = Vec::with_capacity(n_thresholds);
    for i in 0..n_thresholds {
        let theta = max_abs * i as f64 / n_thresholds as f64;
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for s in scores {
            let pred = polarity.predicted(s.score, theta);
            let pos = s.label == sign;
            match (pred, pos) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / (tp + fne) as f64;
        curve.push(PrPoint {
            threshold: theta,
            precision,
            recall,
        });
    }
    Ok(curve)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Highest F1 on the curve and the threshold achieving it.
pub fn best_f1(curve: &[PrPoint]) -> (f64, f64) {
    curve
        .iter()
        .map(|p| (f1(p.precision, p.recall), p.threshold))
        .fold((0.0, 0.0), |acc, c| if c.0 > acc.0 { c } else { acc })
}

/// Recall per timestep at a fixed threshold, over labeled pads only; a pad
/// counts as detected when its score crosses θ* on the side its label
/// demands. Timesteps without labels yield None.
pub fn recall_profile(scores: &[PadScore], theta: f64, t_len: usize) -> Vec<Option<f64>> {
    let mut detected = vec![0usize; t_len];
    let mut labeled = vec![0usize; t_len];
    for s in scores {
        if s.label == 0 {
            continue;
        }
        labeled[s.t] += 1;
        let pol = if s.label > 0 {
            Polarity::Excessive
        } else {
            Polarity::Insufficient
        };
        if pol.predicted(s.score, theta) {
            detected[s.t] += 1;
        }
    }
    (0..t_len)
        .map(|t| {
            if labeled[t] == 0 {
                None
            } else {
                Some(detected[t] as f64 / labeled[t] as f64)
            }
        })
        .collect()
}

fn pool(map: &T64, pool_k: usize, max: bool) -> T64 {
    let d = map.dims();
    let (oh, ow) = (d.h + 1 - pool_k, d.w + 1 - pool_k);
    let mut out = Tensor::zeros(Dims::new(1, 1, oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut v = map.at(0, 0, y, x);
            for dy in 0..pool_k {
                for dx in 0..pool_k {
                    let u = map.at(0, 0, y + dy, x + dx);
                    v = if max { v.max(u) } else { v.min(u) };
                }
            }
            out.set(0, 0, y, x, v);
        }
    }
    out
}

/// Two-channel binarization of an anomaly map: excessive = stride-1 max
/// pool of ε over pool_k windows exceeding θ*, insufficient = min pool
/// falling below -θ*. Output values are 0/1 on a (h-k+1, w-k+1) grid.
pub fn binarize_channels(map: &T64, theta: f64, pool_k: usize) -> (T64, T64) {
    assert!(pool_k >= 1 && pool_k <= map.dims().h && pool_k <= map.dims().w);
    let mx = pool(map, pool_k, true);
    let mn = pool(map, pool_k, false);
    let exc = mx.map(|v| if v > theta { 1.0 } else { 0.0 });
    let ins = mn.map(|v| if v < -theta { 1.0 } else { 0.0 });
    (exc, ins)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolarityReport {
    pub curve: Vec<PrPoint>,
    pub best_f1: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub excessive: PolarityReport,
    pub insufficient: PolarityReport,
    pub recall_by_timestep: Vec<Option<f64>>,
}

pub fn make_report(
    scores: &[PadScore],
    n_thresholds: usize,
    t_len: usize,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let polarity_report = |pol: Polarity| -> Result<PolarityReport> {
        let curve = pr_curve(scores, pol, n_thresholds)?;
        let (best, theta) = best_f1(&curve);
        Ok(PolarityReport {
            curve,
            best_f1: best,
            threshold: theta,
        })
    };
    let excessive = polarity_report(Polarity::Excessive)?;
    let insufficient = polarity_report(Polarity::Insufficient)?;
    let theta = if excessive.best_f1 >= insufficient.best_f1 {
        excessive.threshold
    } else {
        insufficient.threshold
    };
    let recall_by_timestep = recall_profile(scores, theta, t_len);
    Ok(EvalReport {
        config,
        excessive,
        insufficient,
        recall_by_timestep,
    })
}

/// Abramowitz & Stegun 7.1.26, |error| < 1.5e-7 — ample for KS p-values.
fn erf(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    s * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + erf((x - mu) / (sigma * std::f64::consts::SQRT_2)))
}

/// One-sample Kolmogorov-Smirnov test against N(mu, sigma^2); returns the
/// asymptotic p-value (Stephens' small-sample correction on λ).
pub fn ks_test_normal(samples: &[f64], mu: f64, sigma: f64) -> f64 {
    assert!(!samples.is_empty());
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = normal_cdf(x, mu, sigma);
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0f64;
    for j in 1..=100 {
        let j = j as f64;
        p += 2.0 * (-1.0f64).powi(j as i32 - 1) * (-2.0 * j * j * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_layout, generate_normal, GeneratorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn layout() -> BoardLayout {
        let c = GeneratorConfig::default();
        generate_layout(100, c.height, c.width, c.n_groups, c.n_pads).unwrap()
    }

    #[test]
    fn identical_volumes_score_zero() {
        let l = layout();
        let cfg = GeneratorConfig {
            amp_clean: 0.0,
            amp_blade: 0.0,
            sigma_noise: 0.0,
            ..GeneratorConfig::default()
        };
        let mut l0 = l.clone();
        for g in &mut l0.groups {
            g.sigma = 0.0;
        }
        let seq = generate_normal(&l0, &cfg, 1);
        let scores = statistical_detect(&seq.frames, &l0, None);
        assert!(scores.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn outlier_pad_scores_near_three_sigma() {
        // one group, 200 pads x 1 t: 199 at mu with tiny spread sigma, one at mu+3sigma
        let pads: Vec<crate::synth::Pad> = (0..200)
            .map(|i| crate::synth::Pad {
                row: (i / 20) * 3,
                col: (i % 20) * 3,
                h: 1,
                w: 1,
                group: 0,
            })
            .collect();
        let l = BoardLayout {
            height: 32,
            width: 64,
            pads,
            groups: vec![crate::synth::ShapeGroup { mu: 1.0, sigma: 0.05 }],
        };
        let mut frame = Tensor::zeros(Dims::new(1, 2, 32, 64));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dist = Normal::new(1.0, 0.05).unwrap();
        for p in &l.pads[..199] {
            frame.set(0, 0, p.row, p.col, dist.sample(&mut rng));
        }
        let outlier = &l.pads[199];
        frame.set(0, 0, outlier.row, outlier.col, 1.0 + 3.0 * 0.05);
        let scores = statistical_detect(&[frame], &l, None);
        let s = scores.iter().find(|s| s.pad == 199).unwrap().score;
        assert!((s - 3.0).abs() < 0.5, "z-score {s}");
    }

    #[test]
    fn baseline_invariant_to_group_constant_shift() {
        let l = layout();
        let cfg = GeneratorConfig::default();
        let seq = generate_normal(&l, &cfg, 3);
        let base = statistical_detect(&seq.frames, &l, None);
        let shifted: Vec<T64> = seq
            .frames
            .iter()
            .map(|f| {
                let mut f = f.clone();
                for p in &l.pads {
                    if p.group == 4 {
                        for y in p.row..p.row + p.h {
                            for x in p.col..p.col + p.w {
                                f.set(0, 0, y, x, f.at(0, 0, y, x) + 7.5);
                            }
                        }
                    }
                }
                f
            })
            .collect();
        let after = statistical_detect(&shifted, &l, None);
        for (a, b) in base.iter().zip(&after) {
            assert!((a.score - b.score).abs() < 1e-9);
        }
    }

    #[test]
    fn small_group_scores_zero() {
        let l = BoardLayout {
            height: 8,
            width: 8,
            pads: vec![crate::synth::Pad { row: 0, col: 0, h: 1, w: 1, group: 0 }],
            groups: vec![crate::synth::ShapeGroup { mu: 1.0, sigma: 0.05 }],
        };
        let mut frame = Tensor::zeros(Dims::new(1, 2, 8, 8));
        frame.set(0, 0, 0, 0, 42.0);
        let scores = statistical_detect(&[frame], &l, None);
        assert_eq!(scores[0].score, 0.0);
    }

    #[test]
    fn crrn_scores_match_enumeration_oracle() {
        let l = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<T64> = (0..4)
            .map(|_| {
                let mut m = Tensor::zeros(Dims::new(1, 1, l.height, l.width));
                for v in m.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                m
            })
            .collect();
        let scores = crrn_scores(&maps, &l, None);
        for s in &scores {
            let p = &l.pads[s.pad];
            let mut acc = 0.0;
            let mut n = 0;
            for y in p.row..p.row + p.h {
                for x in p.col..p.col + p.w {
                    acc += maps[s.t].at(0, 0, y, x);
                    n += 1;
                }
            }
            assert!((s.score - acc / n as f64).abs() < 1e-12);
        }
        assert_eq!(scores.len(), l.pads.len() * 4);
    }

    fn synthetic_scores(seed: u64, n: usize, separation: f64) -> Vec<PadScore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label: i8 = match rng.gen_range(0..4) {
                    0 => 1,
                    1 => -1,
                    _ => 0,
                };
                let base: f64 = rng.gen_range(-1.0..1.0);
                PadScore {
                    pad: i,
                    t: 0,
                    score: base + label as f64 * separation,
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn pr_curve_matches_brute_force_counts() {
        let scores = synthetic_scores(7, 100, 1.5);
        for pol in [Polarity::Excessive, Polarity::Insufficient] {
            let curve = pr_curve(&scores, pol, 50).unwrap();
            assert_eq!(curve.len(), 50);
            for w in curve.windows(2) {
                assert!(w[1].threshold > w[0].threshold);
            }
            for pt in &curve {
                let (mut tp, mut fp, mut fne) = (0, 0, 0);
                for s in &scores {
                    let pred = match pol {
                        Polarity::Excessive => s.score > pt.threshold,
                        Polarity::Insufficient => s.score < -pt.threshold,
                    };
                    let pos = s.label == pol.label_sign();
                    if pred && pos {
                        tp += 1;
                    } else if pred {
                        fp += 1;
                    } else if pos {
                        fne += 1;
                    }
                }
                let prec = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
                let rec = tp as f64 / (tp + fne) as f64;
                assert_eq!(pt.precision, prec);
                assert_eq!(pt.recall, rec);
                assert!((0.0..=1.0).contains(&pt.precision));
                assert!((0.0..=1.0).contains(&pt.recall));
            }
        }
    }

    #[test]
    fn perfect_separation_reaches_unit_f1() {
        let scores = synthetic_scores(9, 200, 10.0);
        let curve = pr_curve(&scores, Polarity::Excessive, 200).unwrap();
        let (best, theta) = best_f1(&curve);
        assert!((best - 1.0).abs() < 1e-12, "best F1 {best} at {theta}");
    }

    #[test]
    fn random_scores_precision_near_prevalence() {
        let scores = synthetic_scores(11, 4000, 0.0);
        let prevalence = scores.iter().filter(|s| s.label == 1).count() as f64
            / scores.len() as f64;
        let curve = pr_curve(&scores, Polarity::Excessive, 200).unwrap();
        // at low thresholds nearly everything above 0 is predicted; precision
        // should sit near the positive-class rate among score>0 items
        let low = &curve[1];
        assert!(
            (low.precision - prevalence).abs() < 0.05,
            "precision {} vs prevalence {prevalence}",
            low.precision
        );
    }

    #[test]
    fn degenerate_labels_error() {
        let mut scores = synthetic_scores(13, 50, 1.0);
        for s in &mut scores {
            s.label = 0;
        }
        assert!(matches!(
            pr_curve(&scores, Polarity::Excessive, 10),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn f1_values_and_best_scan() {
        assert!((f1(0.8, 0.8) - 0.8).abs() < 1e-15);
        assert!((f1(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(0.0, 0.0), 0.0);
        let curve = vec![
            PrPoint { threshold: 0.0, precision: 0.5, recall: 1.0 },
            PrPoint { threshold: 0.5, precision: 0.9, recall: 0.8 },
            PrPoint { threshold: 1.0, precision: 1.0, recall: 0.2 },
        ];
        let (best, theta) = best_f1(&curve);
        let exhaustive = curve
            .iter()
            .map(|p| f1(p.precision, p.recall))
            .fold(0.0f64, f64::max);
        assert_eq!(best, exhaustive);
        assert_eq!(theta, 0.5);
    }

    #[test]
    fn recall_profile_nulls_and_perfect() {
        let scores = vec![
            PadScore { pad: 0, t: 0, score: 2.0, label: 1 },
            PadScore { pad: 1, t: 0, score: -2.0, label: -1 },
            PadScore { pad: 0, t: 1, score: 0.0, label: 0 },
            PadScore { pad: 1, t: 1, score: 0.0, label: 0 },
            PadScore { pad: 0, t: 2, score: 0.1, label: 1 },
        ];
        let prof = recall_profile(&scores, 1.0, 3);
        assert_eq!(prof[0], Some(1.0));
        assert_eq!(prof[1], None);
        assert_eq!(prof[2], Some(0.0));
    }

    #[test]
    fn binarize_geometry_and_disjointness() {
        let mut map = Tensor::zeros(Dims::new(1, 1, 8, 8));
        let (exc, ins) = binarize_channels(&map, 0.5, 2);
        assert!(exc.data().iter().all(|&v| v == 0.0));
        assert!(ins.data().iter().all(|&v| v == 0.0));
        map.set(0, 0, 3, 4, 5.0);
        map.set(0, 0, 6, 1, -5.0);
        let (exc, ins) = binarize_channels(&map, 0.5, 2);
        // +5 at (3,4): windows with y in {2,3}, x in {3,4} see it
        for y in 0..7 {
            for x in 0..7 {
                let expect = (2..=3).contains(&y) && (3..=4).contains(&x);
                assert_eq!(exc.at(0, 0, y, x) == 1.0, expect, "exc at ({y},{x})");
                let expect_ins = (5..=6).contains(&y) && (0..=1).contains(&x);
                assert_eq!(ins.at(0, 0, y, x) == 1.0, expect_ins, "ins at ({y},{x})");
                assert!(exc.at(0, 0, y, x) * ins.at(0, 0, y, x) == 0.0);
            }
        }
    }

    #[test]
    fn ks_accepts_matching_normal_rejects_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dist = Normal::new(5.0, 0.1).unwrap();
        let samples: Vec<f64> = (0..2000).map(|_| dist.sample(&mut rng)).collect();
        let p_ok = ks_test_normal(&samples, 5.0, 0.1);
        assert!(p_ok > 0.01, "p={p_ok}");
        let p_shift = ks_test_normal(&samples, 5.05, 0.1);
        assert!(p_shift < 0.01, "p={p_shift}");
        // erf sanity: Phi(0)=0.5, Phi(1.96)~0.975
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96, 0.0, 1.0) - 0.975).abs() < 1e-3);
    }
}
