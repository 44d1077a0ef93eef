use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use msseg_core::data::{
    generate_phantom, load_mask, load_volume, make_folds, preprocess as run_preprocess, read_manifest, save_mask,
    save_volume, write_atomic, write_manifest, Dims, FoldVolume, ManifestEntry, PhantomSpec,
};
use msseg_core::model::{build_model, calibrate as run_calibrate, ModelConfig, SegNet, PAPER_PARAM_COUNT};
use msseg_core::overlay::{encode_ppm, render_overlay};
use msseg_core::train::{
    evaluate, load_checkpoint, predict as run_predict, read_config, run_ablation, save_checkpoint, train as run_train,
    Checkpoint, FoldData, LabeledVolume, TrainConfig,
};

use crate::Outcome;

/// A bad flag value or config that clap could not catch; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Sizes the global worker pool from `MSSEG_THREADS` (default: all cores).
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MSSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("MSSEG_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load_configs(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig)> {
    let (m, t) = (ModelConfig::default(), TrainConfig::default());
    match path {
        None => Ok((m, t)),
        Some(p) => read_config(p, &m, &t).with_context(|| format!("reading config {}", p.display())),
    }
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("expected SxHxW, got `{s}`"))?;
    match parts[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok(Dims::new(a, b, c)),
        _ => Err(format!("expected three positive extents SxHxW, got `{s}`")),
    }
}

fn parse_range<T: std::str::FromStr + PartialOrd + Copy>(s: &str) -> std::result::Result<(T, T), String> {
    let bad = || format!("expected LO-HI or a single value, got `{s}`");
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?),
        None => {
            let v = s.parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[derive(Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    count: usize,
    /// Volume extents as SLICESxHEIGHTxWIDTH.
    #[arg(long, default_value = "24x181x217", value_parser = parse_dims)]
    dims: Dims,
    /// Lesions per volume, LO-HI.
    #[arg(long, default_value = "3-8", value_parser = parse_range::<usize>)]
    lesions: (usize, usize),
    /// Lesion radius in voxels, LO-HI.
    #[arg(long, default_value = "2-6", value_parser = parse_range::<f64>)]
    radius: (f64, f64),
    #[arg(long, default_value_t = 0.1)]
    texture: f64,
    /// All-black slices at each end of the volume.
    #[arg(long, default_value_t = 2)]
    blank: usize,
    /// Volumes are assigned to patients round-robin; time points count up per patient.
    #[arg(long, default_value_t = 5)]
    patients: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn phantom(a: PhantomArgs) -> Result<Outcome> {
    if a.patients == 0 {
        return Err(usage("--patients must be at least 1"));
    }
    create_out_dir(&a.out)?;
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let spec = PhantomSpec {
            seed: a.seed.wrapping_add(i as u64),
            dims: a.dims,
            n_lesions: a.lesions,
            lesion_radius: a.radius,
            texture_amplitude: a.texture,
            blank_slices: a.blank,
        };
        // an infeasible spec comes from the flags, so it is a usage error
        let (mut v, m) = generate_phantom(&spec).map_err(|e| match e {
            msseg_core::Error::InvalidArgument { .. } => usage(format!("phantom {i}: {e}")),
            other => anyhow::Error::new(other).context(format!("phantom {i}")),
        })?;
        let id = format!("phantom{i:03}");
        let (patient, timepoint) = (format!("P{:02}", i % a.patients + 1), (i / a.patients + 1) as u32);
        v.meta.insert("patient".into(), patient.clone());
        let (img, msk) = (format!("{id}.msvol"), format!("{id}.msmsk"));
        save_volume(&v, a.out.join(&img))?;
        save_mask(&m, a.out.join(&msk))?;
        entries.push(ManifestEntry {
            id,
            patient,
            timepoint,
            image_path: img.into(),
            mask_path: msk.into(),
        });
    }
    write_manifest(a.out.join("manifest.tsv"), &entries)?;
    println!("wrote {} phantom pairs to {}", a.count, a.out.display());
    Ok(Outcome::Ok)
}

/// Manifest path written relative to its own directory when possible.
fn relative_entry(e: &ManifestEntry, dir: &Path) -> ManifestEntry {
    let rel = |p: &Path| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    ManifestEntry {
        image_path: rel(&e.image_path),
        mask_path: rel(&e.mask_path),
        ..e.clone()
    }
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Crop side length.
    #[arg(long, default_value_t = 160)]
    target: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn preprocess(a: PreprocessArgs) -> Result<Outcome> {
    let entries = read_manifest(&a.manifest)?;
    create_out_dir(&a.out)?;
    let mut kept = Vec::new();
    let mut summary = String::from("id\tslices_in\tslices_out\tdropped\tstatus\n");
    let mut failures = 0;
    for e in &entries {
        let result = (|| -> Result<_> {
            let v = load_volume(&e.image_path)?;
            let m = load_mask(&e.mask_path)?;
            let (v, m, s) = run_preprocess(&v, &m, (a.target, a.target))?;
            let (img, msk) = (a.out.join(format!("{}.msvol", e.id)), a.out.join(format!("{}.msmsk", e.id)));
            save_volume(&v, &img)?;
            save_mask(&m, &msk)?;
            Ok((s, img, msk))
        })();
        match result {
            Ok((s, img, msk)) => {
                let _ = writeln!(
                    summary,
                    "{}\t{}\t{}\t{}\tok",
                    e.id,
                    s.slices_in,
                    s.slices_out,
                    s.slices_in - s.slices_out
                );
                kept.push(relative_entry(
                    &ManifestEntry {
                        image_path: img,
                        mask_path: msk,
                        ..e.clone()
                    },
                    &a.out,
                ));
            }
            Err(err) => {
                failures += 1;
                eprintln!("{}: {err:#}", e.id);
                let _ = writeln!(summary, "{}\t-\t-\t-\terror: {}", e.id, format!("{err:#}").replace(['\t', '\n'], " "));
            }
        }
    }
    write_manifest(a.out.join("manifest.tsv"), &kept)?;
    write_atomic(&a.out.join("summary.tsv"), summary.as_bytes())?;
    print!("{summary}");
    Ok(if failures == 0 { Outcome::Ok } else { Outcome::ItemFailures(failures) })
}

fn load_labeled(entries: &[ManifestEntry]) -> Result<Vec<LabeledVolume>> {
    entries
        .iter()
        .map(|e| {
            let v = load_volume(&e.image_path)?;
            let m = load_mask(&e.mask_path)?;
            LabeledVolume::new(e.id.clone(), v, m).with_context(|| format!("volume `{}`", e.id))
        })
        .collect()
}

/// Loads every manifest volume and splits them into the selected folds.
fn fold_data(manifest: &Path, fold_ids: &[usize]) -> Result<Vec<(usize, FoldData)>> {
    let entries = read_manifest(manifest)?;
    let vols = load_labeled(&entries)?;
    let tags: Vec<FoldVolume> = entries
        .iter()
        .zip(&vols)
        .map(|(e, v)| FoldVolume {
            id: e.id.clone(),
            patient: e.patient.clone(),
            timepoint: e.timepoint,
            slices: v.image.dims().slices,
        })
        .collect();
    let folds = make_folds(&tags)?;
    let pick = |ids: &[String]| -> Vec<LabeledVolume> {
        ids.iter()
            .map(|id| vols.iter().find(|v| &v.id == id).expect("fold ids come from the manifest").clone())
            .collect()
    };
    fold_ids
        .iter()
        .map(|&k| {
            let f = folds
                .iter()
                .find(|f| f.fold_id == k)
                .ok_or_else(|| usage(format!("fold {k} does not exist (manifest yields {} folds)", folds.len())))?;
            Ok((
                k,
                FoldData {
                    train: pick(&f.train),
                    val: pick(&f.val),
                    test: pick(&f.test),
                },
            ))
        })
        .collect()
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    fold: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides `train.max_steps`.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<Outcome> {
    let (mcfg, mut tcfg) = load_configs(a.config.as_deref())?;
    tcfg.epochs = a.epochs.unwrap_or(tcfg.epochs);
    tcfg.max_steps = a.max_steps.or(tcfg.max_steps);
    let (_, data) = fold_data(&a.manifest, &[a.fold])?.pop().expect("one fold requested");
    create_out_dir(&a.out)?;
    let mut csv = String::from("epoch,train_loss,val_dice\n");
    let out = run_train(&data, &mcfg, &tcfg, &mut |r| {
        let _ = writeln!(csv, "{},{},{}", r.epoch, r.train_loss, r.val_dice);
        eprintln!("epoch {:>4}  loss {:.6}  val dice {:.4}", r.epoch, r.train_loss, r.val_dice);
    })?;
    save_checkpoint(&out.best, a.out.join("best.ckpt"))?;
    write_atomic(&a.out.join("epochs.csv"), csv.as_bytes())?;
    println!(
        "fold {} epochs {} steps {} best_val_dice {} at epoch {}",
        a.fold,
        out.history.len(),
        out.step_losses.len(),
        out.best.best_val_dice,
        out.best.cursor.epoch
    );
    Ok(Outcome::Ok)
}

fn check_config(ckpt: &Checkpoint, config: Option<&Path>) -> Result<()> {
    if let Some(p) = config {
        let (m, _) = load_configs(Some(p))?;
        if let Some(field) = m.first_difference(&ckpt.model) {
            return Err(usage(format!("checkpoint model config differs from {} in `{field}`", p.display())));
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// If given, its model keys must match the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn eval(a: EvalArgs) -> Result<Outcome> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    check_config(&ckpt, a.config.as_deref())?;
    let vols = load_labeled(&read_manifest(&a.manifest)?)?;
    let ev = evaluate(&ckpt, &vols)?;
    create_out_dir(&a.out)?;
    for (v, p) in vols.iter().zip(&ev.predictions) {
        save_mask(p, a.out.join(format!("{}.pred.msmsk", v.id)))?;
    }
    let text = ev.report.to_text();
    write_atomic(&a.out.join("report.txt"), text.as_bytes())?;
    write_atomic(&a.out.join("report.kv"), ev.report.to_kv().as_bytes())?;
    print!("{text}");
    Ok(Outcome::Ok)
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    volume: PathBuf,
    /// Reference mask; enables per-slice overlays.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn predict(a: PredictArgs) -> Result<Outcome> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    check_config(&ckpt, a.config.as_deref())?;
    let v = load_volume(&a.volume)?;
    let pred = run_predict(&ckpt, &v)?;
    create_out_dir(&a.out)?;
    let stem = a.volume.file_stem().map_or("volume".into(), |s| s.to_string_lossy().into_owned());
    save_mask(&pred, a.out.join(format!("{stem}.pred.msmsk")))?;
    println!("{} lesion voxels predicted", pred.positives());
    match &a.mask {
        Some(mp) => {
            let gt = load_mask(mp)?;
            if gt.dims() != v.dims() {
                return Err(usage(format!("mask dims {:?} do not match volume dims {:?}", gt.dims(), v.dims())));
            }
            let d = v.dims();
            for s in 0..d.slices {
                let rgb = render_overlay(v.slice(s), pred.slice(s), gt.slice(s))?;
                write_atomic(&a.out.join(format!("{stem}_slice{s:03}.ppm")), &encode_ppm(d.width, d.height, &rgb)?)?;
            }
            println!("wrote {} overlays", d.slices);
        }
        None => println!("no --mask given; overlays skipped"),
    }
    Ok(Outcome::Ok)
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated fold ids.
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    folds: Vec<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

pub fn ablate(a: AblateArgs) -> Result<Outcome> {
    let (mcfg, mut tcfg) = load_configs(a.config.as_deref())?;
    tcfg.epochs = a.epochs.unwrap_or(tcfg.epochs);
    tcfg.max_steps = a.max_steps.or(tcfg.max_steps);
    let folds = fold_data(&a.manifest, &a.folds)?;
    create_out_dir(&a.out)?;
    let grid = run_ablation(&folds, &mcfg, &tcfg, &mut |variant, fold, r| {
        eprintln!("{variant} fold {fold} epoch {} loss {:.6} val dice {:.4}", r.epoch, r.train_loss, r.val_dice);
    })?;
    let mut tsv = String::from("variant");
    for f in &grid.fold_ids {
        let _ = write!(tsv, "\tfold{f}");
    }
    tsv.push_str("\tmean\n");
    for (r, name) in grid.variants.iter().enumerate() {
        let _ = write!(tsv, "{name}");
        for d in &grid.dice[r] {
            let _ = write!(tsv, "\t{d}");
        }
        let _ = writeln!(tsv, "\t{}", grid.mean[r]);
    }
    let text = grid.to_text();
    write_atomic(&a.out.join("ablation.txt"), text.as_bytes())?;
    write_atomic(&a.out.join("ablation.tsv"), tsv.as_bytes())?;
    print!("{text}");
    Ok(Outcome::Ok)
}

pub fn param_count(config: Option<PathBuf>) -> Result<Outcome> {
    let (mcfg, _) = load_configs(config.as_deref())?;
    let net = SegNet::new(&mcfg)?;
    let rows = net.breakdown();
    println!("{:<14} {:<24} {:>12}", "Position", "Layer", "Parameters");
    for r in &rows {
        println!("{:<14} {:<24} {:>12}", r.position, r.layer, r.count);
    }
    let (_, params) = build_model(&mcfg)?;
    println!("Total parameters = {}", params.param_count());
    Ok(Outcome::Ok)
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = PAPER_PARAM_COUNT)]
    target: usize,
    /// Base config; its growth, stem and hidden widths are searched over.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    max_growth: usize,
    #[arg(long, default_value_t = 256)]
    max_stem: usize,
    #[arg(long, default_value_t = 1024)]
    max_hidden: usize,
}

pub fn calibrate(a: CalibrateArgs) -> Result<Outcome> {
    let (base, _) = load_configs(a.config.as_deref())?;
    let r = run_calibrate(&base, a.target, a.max_growth, a.max_stem, a.max_hidden);
    println!("target {}  searched {} configurations", r.target, r.searched);
    println!("{:>7} {:>10} {:>7} {:>12} {:>9}", "growth", "first_conv", "hidden", "count", "residual");
    for c in &r.best {
        println!(
            "{:>7} {:>10} {:>7} {:>12} {:>9}",
            c.growth_rate,
            c.first_conv_filters,
            c.convlstm_hidden,
            c.count,
            c.residual(r.target)
        );
    }
    let c = r.chosen();
    println!(
        "chosen: growth_rate = {}, first_conv_filters = {}, convlstm_hidden = {} -> {} ({})",
        c.growth_rate,
        c.first_conv_filters,
        c.convlstm_hidden,
        c.count,
        if r.exact() { "exact" } else { "closest" }
    );
    Ok(Outcome::Ok)
}
