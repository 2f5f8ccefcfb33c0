//! CRRN command-line entry point: generate / train / detect / evaluate /
//! baseline / gradcheck.
//!
//! Exit codes: 0 success, 2 missing file, 3 config or data schema violation,
//! 4 NaN training loss, 1 anything else. Errors print one line to stderr.

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crrn::checkpoint;
use crrn::error::{Error, Result};
use crrn::eval;
use crrn::io;
use crrn::model::{CellKind, CrrnConfig, CrrnModel, FeedPolicy};
use crrn::synth::{self, Dataset, DefectKind, GeneratorConfig, SpiSequence};
use crrn::tape::{BnMode, BnStats, ParamStore, Tape};
use crrn::tensor::{Dims, Tensor};
use crrn::train::TrainConfig;

type T64 = Tensor<f64>;

#[derive(Parser)]
#[command(name = "crrn", about = "Convolutional recurrent reconstructive network for SPI anomaly detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic SPI dataset directory.
    Generate {
        /// JSON file with generator parameters (all fields optional).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sequence kind: normal | random | defect.
        #[arg(long, default_value = "normal")]
        kind: String,
        /// Defect name for --kind defect: squeegee_blade | support |
        /// removed_area | no_kneading | clamp.
        #[arg(long)]
        defect: Option<String>,
        /// Anomaly ratio P_a for --kind random.
        #[arg(long, default_value_t = 0.3)]
        pa: f64,
        /// Number of sequences.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset; writes a checkpoint, a loss CSV, and the
    /// resolved config.
    Train {
        /// JSON file: {"model": CrrnConfig, "train": TrainConfig}, all
        /// fields optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path (e.g. model.ckpt).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the train-config seed and the init seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train the CRRN\a ablation (no ST-Attention).
        #[arg(long)]
        no_attention: bool,
        /// Recurrent cell: cstm | convlstm.
        #[arg(long)]
        cell: Option<String>,
    },
    /// Run a trained model over a dataset and export anomaly maps.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export ST-Attention maps as SPT1 tensors.
        #[arg(long)]
        attention_maps: bool,
        #[arg(long)]
        no_attention: bool,
    },
    /// Score a labeled dataset with a trained model and write an EvalReport.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Optional PR-curve CSV path.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Optional directory for anomaly maps (SPT1 + PGM).
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        thresholds: usize,
        #[arg(long)]
        no_attention: bool,
    },
    /// Score a labeled dataset with the per-shape-group statistical
    /// baseline and write an EvalReport.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        thresholds: usize,
    },
    /// Finite-difference gradient checks on primitives, one CSTM step, and
    /// a reduced full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Config(_) | Error::Invalid(_) | Error::Format(_) | Error::ShapeMismatch { .. } => 3,
            Error::NanLoss { .. } => 4,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate { config, kind, defect, pa, n, seed, out } => {
            cmd_generate(config.as_deref(), &kind, defect.as_deref(), pa, n, seed, &out)
        }
        Cmd::Train { config, data, out, seed, no_attention, cell } => {
            cmd_train(config.as_deref(), &data, &out, seed, no_attention, cell.as_deref())
        }
        Cmd::Detect { model, data, out, attention_maps, no_attention } => {
            cmd_detect(&model, &data, &out, attention_maps, no_attention)
        }
        Cmd::Evaluate { model, data, out, curves, maps, thresholds, no_attention } => {
            cmd_evaluate(&model, &data, &out, curves.as_deref(), maps.as_deref(), thresholds, no_attention)
        }
        Cmd::Baseline { data, out, thresholds } => cmd_baseline(&data, &out, thresholds),
        Cmd::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Deterministic per-sequence seed stream.
fn derived_seed(seed: u64, i: u64, salt: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i.wrapping_add(1).wrapping_mul(salt)))
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct GenerateFile {
    generator: GeneratorConfig,
    anomaly_mu: Option<f64>,
    anomaly_sigma: Option<f64>,
    defect_amplitude: Option<f64>,
}

fn cmd_generate(
    config: Option<&Path>,
    kind: &str,
    defect: Option<&str>,
    pa: f64,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let file: GenerateFile = match config {
        Some(p) => read_json(p)?,
        None => GenerateFile::default(),
    };
    let gen = file.generator.clone();
    let mu = file.anomaly_mu.unwrap_or(5.0);
    let sigma = file.anomaly_sigma.unwrap_or(0.1);
    let amplitude = file.defect_amplitude.unwrap_or(5.0);
    if !(0.0..=1.0).contains(&pa) {
        return Err(Error::invalid(format!("--pa must be in [0,1], got {pa}")));
    }
    let defect_kind = match (kind, defect) {
        ("defect", Some(name)) => Some(DefectKind::parse(name)?),
        ("defect", None) => return Err(Error::invalid("--kind defect requires --defect <name>")),
        ("normal", _) | ("random", _) => None,
        _ => return Err(Error::invalid(format!("unknown --kind '{kind}'"))),
    };

    let layout = synth::generate_layout(seed, gen.height, gen.width, gen.n_groups, gen.n_pads)?;
    let sequences: Vec<SpiSequence> = (0..n)
        .map(|i| {
            let normal = synth::generate_normal(&layout, &gen, derived_seed(seed, i as u64, 3));
            match (kind, defect_kind) {
                ("random", _) => synth::inject_random(
                    &normal, &layout, pa, mu, sigma, derived_seed(seed, i as u64, 5),
                ),
                ("defect", Some(k)) => synth::inject_defect(
                    &normal, &layout, k, amplitude, derived_seed(seed, i as u64, 7),
                ),
                _ => normal,
            }
        })
        .collect();
    let ds = Dataset { config: gen.clone(), layout, sequences };
    synth::save_dataset(out, &ds)?;
    let echo = serde_json::json!({
        "generator": gen,
        "kind": kind,
        "defect": defect,
        "pa": pa,
        "anomaly_mu": mu,
        "anomaly_sigma": sigma,
        "defect_amplitude": amplitude,
        "n_sequences": n,
        "seed": seed,
    });
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&echo)?)?;
    println!("generated {n} {kind} sequences in {}", out.display());
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct TrainFile {
    model: CrrnConfig,
    train: TrainConfig,
}

fn parse_cell(s: &str) -> Result<CellKind> {
    match s {
        "cstm" => Ok(CellKind::Cstm),
        "convlstm" => Ok(CellKind::Convlstm),
        _ => Err(Error::invalid(format!("--cell must be cstm or convlstm, got '{s}'"))),
    }
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    no_attention: bool,
    cell: Option<&str>,
) -> Result<()> {
    let mut file: TrainFile = match config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    if let Some(s) = seed {
        file.train.seed = s;
    }
    if no_attention {
        file.model.attention = false;
    }
    if let Some(c) = cell {
        file.model.cell = parse_cell(c)?;
    }
    let ds = synth::load_dataset(data)?;
    // the dataset dictates geometry
    file.model.in_channels = 2;
    file.model.height = ds.config.height;
    file.model.width = ds.config.width;
    file.model.seq_len = ds.config.t_len;

    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(file.train.seed);
    let model = CrrnModel::init(file.model.clone(), &mut store, &mut rng)?;
    let mut bn = model.new_bn_state::<f64>();
    let sequences: Vec<Vec<T64>> = ds.sequences.iter().map(|s| s.frames.clone()).collect();
    let pad_mask = ds.layout.pad_mask();
    let history = crrn::train::train(&model, &mut store, &mut bn, &sequences, &pad_mask, &file.train)?;

    checkpoint::save(out, &model, &store, &bn)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let dir = out.parent().unwrap_or_else(|| Path::new("."));
    let mut csv = String::from("epoch,epsilon,loss\n");
    for r in &history {
        csv.push_str(&format!("{},{},{}\n", r.epoch, r.epsilon, r.loss));
    }
    fs::write(dir.join(format!("{stem}.loss.csv")), csv)?;
    fs::write(
        dir.join(format!("{stem}.config.json")),
        serde_json::to_string_pretty(&serde_json::json!({
            "model": file.model,
            "train": file.train,
            "data": data.display().to_string(),
        }))?,
    )?;
    let last = history.last().expect("at least one epoch");
    println!("trained {} epochs, final loss {:.6e}, checkpoint {}", history.len(), last.loss, out.display());
    Ok(())
}

// ------------------------------------------------------------- detect/eval

fn load_model(path: &Path, no_attention: bool) -> Result<(CrrnModel, ParamStore<f64>, Vec<BnStats<f64>>)> {
    let (model, store, bn) = checkpoint::load::<f64>(path)?;
    let model = if no_attention { model.without_attention() } else { model };
    Ok((model, store, bn))
}

struct SequenceRun {
    /// Signed ε map per timestep, (1, 1, h, w).
    eps: Vec<T64>,
    /// Attention maps per layer per timestep (None where absent).
    attn: Vec<Vec<Option<T64>>>,
}

fn run_model(
    model: &CrrnModel,
    store: &ParamStore<f64>,
    bn: &mut [BnStats<f64>],
    frames: &[T64],
) -> Result<SequenceRun> {
    let mut tape = Tape::new();
    let enc = model.encode_sequence(&mut tape, store, bn, BnMode::Eval, frames)?;
    let attn = enc
        .maps
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|m| m.map(|id| tape.value(id).clone()))
                .collect()
        })
        .collect();
    let outs = model.decode_sequence(&mut tape, store, bn, BnMode::Eval, &enc, frames, &FeedPolicy::Free)?;
    let eps = frames
        .iter()
        .zip(&outs)
        .map(|(x, &id)| crrn::model::reconstruction_error(x, tape.value(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceRun { eps, attn })
}

fn write_pgm(path: &Path, map: &T64, max_abs: f64) -> Result<()> {
    let d = map.dims();
    let mut buf = Vec::with_capacity(d.h * d.w + 32);
    buf.extend_from_slice(format!("P5\n{} {}\n255\n", d.w, d.h).as_bytes());
    for y in 0..d.h {
        for x in 0..d.w {
            let v = if max_abs > 0.0 {
                128.0 + 127.0 * map.at(0, 0, y, x) / max_abs
            } else {
                128.0
            };
            buf.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn export_maps(dir: &Path, i: usize, run: &SequenceRun, attention_maps: bool) -> Result<()> {
    io::save_frames(&dir.join(format!("eps{i:04}.spt1")), &run.eps)?;
    let max_abs = run
        .eps
        .iter()
        .flat_map(|m| m.data().iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max);
    for (t, m) in run.eps.iter().enumerate() {
        write_pgm(&dir.join(format!("eps{i:04}_t{:02}.pgm", t + 1)), m, max_abs)?;
    }
    if attention_maps {
        for (l, layer) in run.attn.iter().enumerate() {
            for (t, m) in layer.iter().enumerate() {
                if let Some(m) = m {
                    io::save_tensor(&dir.join(format!("att{i:04}_l{l}_t{:02}.spt1", t + 1)), m)?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_detect(model_path: &Path, data: &Path, out: &Path, attention_maps: bool, no_attention: bool) -> Result<()> {
    let (model, store, mut bn) = load_model(model_path, no_attention)?;
    let ds = synth::load_dataset(data)?;
    fs::create_dir_all(out)?;
    for (i, seq) in ds.sequences.iter().enumerate() {
        let run = run_model(&model, &store, &mut bn, &seq.frames)?;
        export_maps(out, i, &run, attention_maps)?;
    }
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "model": model.cfg,
            "data": data.display().to_string(),
            "attention_maps": attention_maps,
            "no_attention": no_attention,
        }))?,
    )?;
    println!("wrote anomaly maps for {} sequences to {}", ds.sequences.len(), out.display());
    Ok(())
}

fn write_report(path: &Path, report: &eval::EvalReport) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

fn write_curves(path: &Path, report: &eval::EvalReport) -> Result<()> {
    let mut csv = String::from("polarity,threshold,precision,recall\n");
    for (name, rep) in [("excessive", &report.excessive), ("insufficient", &report.insufficient)] {
        for p in &rep.curve {
            csv.push_str(&format!("{name},{},{},{}\n", p.threshold, p.precision, p.recall));
        }
    }
    fs::write(path, csv)?;
    Ok(())
}

fn cmd_evaluate(
    model_path: &Path,
    data: &Path,
    out: &Path,
    curves: Option<&Path>,
    maps_dir: Option<&Path>,
    thresholds: usize,
    no_attention: bool,
) -> Result<()> {
    let (model, store, mut bn) = load_model(model_path, no_attention)?;
    let ds = synth::load_dataset(data)?;
    if let Some(d) = maps_dir {
        fs::create_dir_all(d)?;
    }
    let mut scores = Vec::new();
    for (i, seq) in ds.sequences.iter().enumerate() {
        let run = run_model(&model, &store, &mut bn, &seq.frames)?;
        scores.extend(eval::crrn_scores(&run.eps, &ds.layout, seq.labels.as_deref()));
        if let Some(d) = maps_dir {
            export_maps(d, i, &run, false)?;
        }
    }
    let report = eval::make_report(
        &scores,
        thresholds,
        ds.config.t_len,
        serde_json::json!({
            "method": "crrn",
            "model": model.cfg,
            "data": data.display().to_string(),
            "thresholds": thresholds,
            "no_attention": no_attention,
        }),
    )?;
    write_report(out, &report)?;
    if let Some(c) = curves {
        write_curves(c, &report)?;
    }
    println!(
        "best F1: excessive {:.4} @ {:.4e}, insufficient {:.4} @ {:.4e}",
        report.excessive.best_f1, report.excessive.threshold,
        report.insufficient.best_f1, report.insufficient.threshold
    );
    Ok(())
}

fn cmd_baseline(data: &Path, out: &Path, thresholds: usize) -> Result<()> {
    let ds = synth::load_dataset(data)?;
    let mut scores = Vec::new();
    for seq in &ds.sequences {
        scores.extend(eval::statistical_detect(&seq.frames, &ds.layout, seq.labels.as_deref()));
    }
    let report = eval::make_report(
        &scores,
        thresholds,
        ds.config.t_len,
        serde_json::json!({
            "method": "statistical_baseline",
            "data": data.display().to_string(),
            "thresholds": thresholds,
        }),
    )?;
    write_report(out, &report)?;
    println!(
        "best F1: excessive {:.4} @ {:.4}, insufficient {:.4} @ {:.4}",
        report.excessive.best_f1, report.excessive.threshold,
        report.insufficient.best_f1, report.insufficient.threshold
    );
    Ok(())
}

// --------------------------------------------------------------- gradcheck

fn cmd_gradcheck(seed: u64) -> Result<()> {
    use crrn::tape::grad_check;

    fn rand_tensor(rng: &mut ChaCha8Rng, d: Dims) -> T64 {
        let mut t = Tensor::<f64>::zeros(d);
        for v in t.data_mut() {
            *v = rand::Rng::gen_range(rng, -0.5..0.5);
        }
        t
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rows: Vec<(&str, f64)> = Vec::new();

    // conv2d + bias, stride 2
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, Dims::new(1, 2, 8, 8)));
    let w = store.add("w", rand_tensor(&mut rng, Dims::new(3, 2, 3, 3)));
    let b = store.add("b", rand_tensor(&mut rng, Dims::new(1, 3, 1, 1)));
    let err = grad_check(
        &mut store,
        |tape, s| {
            let (x, w, b) = (tape.param(s, x), tape.param(s, w), tape.param(s, b));
            let y = tape.conv2d(x, w, Some(b), 2, 1).unwrap();
            tape.sum_all(y)
        },
        1e-6,
        8,
        seed,
    );
    rows.push(("conv2d", err));

    // conv_transpose2d with output padding
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, Dims::new(1, 3, 4, 4)));
    let w = store.add("w", rand_tensor(&mut rng, Dims::new(3, 2, 5, 5)));
    let err = grad_check(
        &mut store,
        |tape, s| {
            let (x, w) = (tape.param(s, x), tape.param(s, w));
            let y = tape.conv_transpose2d(x, w, None, 2, 2, 1).unwrap();
            tape.sum_all(y)
        },
        1e-6,
        8,
        seed,
    );
    rows.push(("conv_transpose2d", err));

    // batch norm (train mode) + sigmoid/tanh/hadamard
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, Dims::new(2, 3, 4, 4)));
    let g = store.add("gamma", rand_tensor(&mut rng, Dims::new(1, 3, 1, 1)));
    let be = store.add("beta", rand_tensor(&mut rng, Dims::new(1, 3, 1, 1)));
    let err = grad_check(
        &mut store,
        |tape, s| {
            let (x, g, be) = (tape.param(s, x), tape.param(s, g), tape.param(s, be));
            let mut bn = BnStats::new(3);
            let y = tape.batch_norm(x, g, be, &mut bn, BnMode::Train).unwrap();
            let a = tape.sigmoid(y);
            let b = tape.tanh(y);
            let h = tape.hadamard(a, b).unwrap();
            tape.sum_all(h)
        },
        1e-6,
        8,
        seed,
    );
    rows.push(("batch_norm+gates", err));

    // one CSTM step
    let mut store = ParamStore::new();
    let (hh, ww, c) = (6, 6, 4);
    let params = crrn::cells::CstmParams::init(&mut store, "cstm", 2, c, 3, hh, ww, &mut rng);
    let x0 = store.add("x0", rand_tensor(&mut rng, Dims::new(1, 2, hh, ww)));
    let h0 = store.add("h0", rand_tensor(&mut rng, Dims::new(1, c, hh, ww)));
    let c0 = store.add("c0", rand_tensor(&mut rng, Dims::new(1, c, hh, ww)));
    let cb = store.add("cb", rand_tensor(&mut rng, Dims::new(1, c, hh, ww)));
    let err = grad_check(
        &mut store,
        |tape, s| {
            let x = tape.param(s, x0);
            let prev = crrn::cells::CellState { h: tape.param(s, h0), c: tape.param(s, c0) };
            let below = tape.param(s, cb);
            let st = crrn::cells::cstm_step(tape, s, &params, x, &prev, below).unwrap();
            let sum_h = tape.sum_all(st.h);
            let sum_c = tape.sum_all(st.c);
            tape.add(sum_h, sum_c).unwrap()
        },
        1e-6,
        6,
        seed,
    );
    rows.push(("cstm_step", err));

    // reduced full model: c=8, 8x8, T=3, L=2
    let cfg = CrrnConfig {
        in_channels: 2,
        hidden_channels: 8,
        kernel: 3,
        spatial_depth: 2,
        st_layers: 2,
        height: 8,
        width: 8,
        seq_len: 3,
        cell: CellKind::Cstm,
        attention: true,
    };
    let mut store = ParamStore::new();
    let model = CrrnModel::init(cfg.clone(), &mut store, &mut rng)?;
    let frames: Vec<T64> = (0..cfg.seq_len).map(|_| rand_tensor(&mut rng, cfg.frame_dims())).collect();
    let err = grad_check(
        &mut store,
        |tape, s| {
            let mut bn = model.new_bn_state();
            let outs = model
                .forward(tape, s, &mut bn, BnMode::Train, &frames, &FeedPolicy::Teacher)
                .unwrap();
            let sums: Vec<_> = outs.iter().map(|&o| tape.sum_all(o)).collect();
            sums.into_iter()
                .reduce(|a, b| tape.add(a, b).unwrap())
                .unwrap()
        },
        // smaller step than the primitives: the composed network's curvature
        // dominates the central-difference error above ~1e-4 steps
        3e-5,
        4,
        seed,
    );
    rows.push(("full_crrn", err));

    println!("{:<20} max rel. error", "check");
    let mut worst = 0.0f64;
    for (name, err) in &rows {
        println!("{name:<20} {err:.3e}");
        worst = worst.max(*err);
    }
    if worst < 1e-4 {
        println!("OK: max rel. error {worst:.3e} < 1e-4");
        Ok(())
    } else {
        Err(Error::invalid(format!("gradient check failed: max rel. error {worst:.3e} >= 1e-4")))
    }
}
