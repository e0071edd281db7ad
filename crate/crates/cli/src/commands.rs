use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use darkir_core::degrade::{procedural_image, read_ppm, stream_seed, synth_dataset, write_ppm};
use darkir_core::loss::LossWeights;
use darkir_core::metrics::{psnr, ssim};
use darkir_core::model::{self, check_extent, DarkIr, DarkIrConfig, SkipMode};
use darkir_core::nn::{Attention, BlockKind};
use darkir_core::train::{self, evaluate, load_pairs, Pair, RunDir};
use darkir_core::{Error, Result, Tensor};

use crate::config::RunConfig;

fn io_err(msg: String) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, msg))
}

/// Sorted `.ppm` files of `dir`. A missing or image-free directory is an
/// I/O error.
fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display())))
    })?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "ppm") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(io_err(format!("no .ppm images in {}", dir.display())));
    }
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes `text` to `path` and echoes it to stdout.
fn report(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    print!("{text}");
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth;
    let clean: Vec<Tensor<f32>> = if s.procedural > 0 {
        let sz = s.procedural_size;
        (0..s.procedural)
            .map(|i| procedural_image(sz.h, sz.w, stream_seed(cfg.seed, i as u64)))
            .collect()
    } else {
        ppm_files(&cfg.paths.clean_dir)?
            .iter()
            .map(read_ppm)
            .collect::<Result<_>>()?
    };
    let out = &cfg.paths.data_dir;
    let entries = synth_dataset(&clean, &s.ranges, s.count, out, cfg.seed)?;
    cfg.emit(out, "synth")?;
    println!("synth: {} pairs from {} clean images in {}", entries.len(), clean.len(), out.display());
    Ok(())
}

fn scores_csv(scores: &[train::PairScore]) -> String {
    let mut s = String::from("name,psnr_db,ssim\n");
    for p in scores {
        let _ = writeln!(s, "{},{:.4},{:.6}", p.name, p.psnr, p.ssim);
    }
    if !scores.is_empty() {
        let n = scores.len() as f64;
        let mp = scores.iter().map(|p| p.psnr).sum::<f64>() / n;
        let ms = scores.iter().map(|p| p.ssim).sum::<f64>() / n;
        let _ = writeln!(s, "mean,{mp:.4},{ms:.6}");
    }
    s
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = load_pairs(&cfg.paths.data_dir)?;
    let tc = cfg.train_config();
    let mut net = DarkIr::build(&cfg.model, cfg.seed)?;
    let run = RunDir(cfg.paths.run_dir.clone());
    cfg.emit(&run.0, "train")?;
    let every = (tc.total_steps / 20).max(1);
    train::train(&mut net, &data, &tc, Some(&run), &mut |r| {
        if r.step % every == 0 || r.step == tc.total_steps {
            eprintln!(
                "step {:>6}/{} lr {:.3e} loss {:.6} (pixel {:.6} edge {:.6} lol {:.6})",
                r.step, tc.total_steps, r.lr, r.total, r.pixel, r.edge, r.lol
            );
        }
    })?;
    let scores = evaluate(&net, &data)?;
    report(&run.0.join("summary.csv"), &scores_csv(&scores))
}

pub fn infer(cfg: &RunConfig) -> Result<()> {
    let net = model::load_as(&cfg.paths.checkpoint, &cfg.model)?;
    let out = &cfg.paths.output_dir;
    fs::create_dir_all(out)?;
    let files = ppm_files(&cfg.paths.input_dir)?;
    for f in &files {
        let y: Tensor<f32> = read_ppm(f)?;
        let (xhat, low) = net.restore(&y)?;
        write_ppm(out.join(file_name(f)), &xhat)?;
        if cfg.emit_intermediate {
            let stem = f.file_stem().unwrap_or_default().to_string_lossy();
            write_ppm(out.join(format!("{stem}_low.ppm")), &low)?;
        }
    }
    cfg.emit(out, "infer")?;
    println!("infer: restored {} images into {}", files.len(), out.display());
    Ok(())
}

/// Scores every reference image against the prediction of the same name.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    let mut scores = Vec::new();
    for r in ppm_files(&cfg.paths.reference_dir)? {
        let name = file_name(&r);
        let pred = cfg.paths.pred_dir.join(&name);
        if !pred.is_file() {
            return Err(io_err(format!("no prediction {} for reference {}", pred.display(), r.display())));
        }
        let x: Tensor<f32> = read_ppm(&r)?;
        let xhat: Tensor<f32> = read_ppm(&pred)?;
        scores.push(train::PairScore {
            psnr: psnr(&x, &xhat, 1.0)?,
            ssim: ssim(&x, &xhat)?,
            name,
        });
    }
    cfg.emit(&cfg.paths.report_dir, "eval")?;
    report(&cfg.paths.report_dir.join("eval.csv"), &scores_csv(&scores))
}

/// Params (M) and MACs (G) of `model` plus each width in `profile.widths`.
pub fn profile_table(cfg: &RunConfig) -> Result<String> {
    let sz = cfg.profile_size;
    check_extent(sz.h, sz.w)?;
    let mut rows = vec![("model".to_string(), cfg.model.clone())];
    for &w in &cfg.profile_widths {
        rows.push((format!("width{w}"), DarkIrConfig { width: w, ..cfg.model.clone() }));
    }
    let mut s = format!("# size {sz}, fft {}\nname,width,params_m,macs_g\n", cfg.profile_include_fft);
    for (name, mc) in rows {
        let net = DarkIr::<f32>::build(&mc, 0)?;
        let macs = net.macs(sz.h, sz.w).total(cfg.profile_include_fft);
        let _ = writeln!(
            s,
            "{name},{},{:.4},{:.4}",
            mc.width,
            net.param_count() as f64 / 1e6,
            macs as f64 / 1e9
        );
    }
    Ok(s)
}

pub fn profile(cfg: &RunConfig) -> Result<()> {
    let table = profile_table(cfg)?;
    cfg.emit(&cfg.paths.report_dir, "profile")?;
    report(&cfg.paths.report_dir.join("profile.csv"), &table)
}

/// One row of an ablation: a network and the loss it is trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: DarkIrConfig,
    pub loss: LossWeights,
}

pub const SUITES: [&str; 4] = ["blocks", "attention", "loss", "skip"];

/// The rows of `suite`, each a change to the configured model and loss.
pub fn suite(name: &str, cfg: &RunConfig) -> Result<Vec<Variant>> {
    let base = &cfg.model;
    let loss = cfg.train.loss;
    let v = |name: &str, f: &dyn Fn(&mut DarkIrConfig)| {
        let mut model = base.clone();
        f(&mut model);
        Variant { name: name.into(), model, loss }
    };
    use BlockKind::*;
    Ok(match name {
        "blocks" => vec![
            v("EBlock is NAFBlock", &|m| m.enc_block = NafBlock),
            v("EBlock has also Phase Transform", &|m| m.enc_block = EBlockPhase),
            v("All DBlock", &|m| (m.enc_block, m.dec_block) = (DBlock, DBlock)),
            v("All EBlock", &|m| (m.enc_block, m.dec_block) = (EBlock, EBlock)),
            v("All NAFBlock", &|m| (m.enc_block, m.dec_block) = (NafBlock, NafBlock)),
            v("DBlock is NAFBlock", &|m| m.dec_block = NafBlock),
            v("DBlock w/o Extra Depthwise", &|m| m.extra_dw = false),
            v("DarkIR", &|_| {}),
        ],
        "attention" => vec![
            v("LKA", &|m| m.attention = Attention::Lka),
            v("Di-SpAM", &|m| m.attention = Attention::DiSpam),
        ],
        "loss" => {
            let with = |name: &str, edge: f64, lol: bool| Variant {
                loss: LossWeights { edge, lol, ..loss },
                ..v(name, &|_| {})
            };
            vec![
                with("L_pixel", 0.0, false),
                with("L_pixel + L_lol", 0.0, true),
                with("L_pixel + L_lol + L_edge", LossWeights::default().edge, true),
            ]
        }
        "skip" => vec![
            v("1DLUT", &|m| m.skip_mode = SkipMode::Lut1d),
            v("1DLUT-double", &|m| m.skip_mode = SkipMode::Lut1dDouble),
            v("Single Addition", &|m| m.skip_mode = SkipMode::Add),
        ],
        _ => {
            return Err(Error::Config(format!(
                "unknown ablation suite {name:?} (expected one of: {})",
                SUITES.join(", ")
            )))
        }
    })
}

/// Params, MACs at `profile.size`, and mean PSNR/SSIM on `eval` after
/// training on `data` from the run seed.
pub fn run_variant(v: &Variant, cfg: &RunConfig, data: &[Pair], eval: &[Pair]) -> Result<String> {
    let sz = cfg.profile_size;
    let mut net = DarkIr::build(&v.model, cfg.seed)?;
    let tc = train::TrainConfig { loss: v.loss, ..cfg.train_config() };
    train::train(&mut net, data, &tc, None, &mut |_| {})?;
    let scores = evaluate(&net, eval)?;
    let n = scores.len() as f64;
    Ok(format!(
        "{},{:.4},{:.4},{:.4},{:.6}",
        v.name,
        net.param_count() as f64 / 1e6,
        net.macs(sz.h, sz.w).total(cfg.profile_include_fft) as f64 / 1e9,
        scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        scores.iter().map(|s| s.ssim).sum::<f64>() / n,
    ))
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let variants = suite(&cfg.ablate_suite, cfg)?;
    check_extent(cfg.profile_size.h, cfg.profile_size.w)?;
    let data = load_pairs(&cfg.paths.data_dir)?;
    let holdout = match &cfg.paths.holdout_dir {
        Some(d) => load_pairs(d)?,
        None => data.clone(),
    };
    let mut s = String::from("variant,params_m,macs_g,psnr_db,ssim\n");
    for v in &variants {
        eprintln!("ablate {}: {}", cfg.ablate_suite, v.name);
        s.push_str(&run_variant(v, cfg, &data, &holdout)?);
        s.push('\n');
    }
    cfg.emit(&cfg.paths.report_dir, "ablate")?;
    report(&cfg.paths.report_dir.join(format!("ablate_{}.csv", cfg.ablate_suite)), &s)
}
