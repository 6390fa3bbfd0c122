//! One function per subcommand. Each reads its inputs, writes its artifacts
//! into a directory under the output root and leaves a provenance record.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use firecast_core::contour::contours_to_geojson;
use firecast_core::dataset::{build_dataset, load_tuple, Manifest, ManifestEntry, Split};
use firecast_core::ensemble::{burned_by, perimeter_at, sample_ensemble};
use firecast_core::eval::{
    evaluate_fire, evaluate_masks, parse_polygons, terrain_ablation, AblationInput, AblationReport, FireEvaluation,
    Histogram,
};
use firecast_core::ingest::{estimate_ignition, grid_viirs, load_records, DomainSpec};
use firecast_core::raster::{self, normalize_arrival, normalize_terrain};
use firecast_core::{FieldKind, GeoPoint, Raster, BACKGROUND_HOURS};
use firecast_gan::{load_generator, DataSource, GanError, Generator, TrainSample, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::{EvalFire, RunConfig};
use crate::plot;
use crate::provenance::Provenance;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    ensure!(path.exists(), "missing {what}: {} does not exist", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_raster(r: &Raster, path: &Path) -> Result<()> {
    raster::save(r, path).with_context(|| format!("writing {}", path.display()))
}

fn load_raster(path: &Path, what: &str) -> Result<Raster> {
    require(path, what)?;
    raster::load(path).with_context(|| format!("reading {what} {}", path.display()))
}

pub fn dataset_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("dataset")
}

pub fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("train")
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    train_dir(cfg).join("checkpoint.bin")
}

pub fn synth(cfg: &RunConfig) -> Result<PathBuf> {
    let dcfg = cfg.dataset_config();
    dcfg.validate()?;
    let dir = dataset_dir(cfg);
    let (manifest, report) = build_dataset(&dcfg, &dir)?;
    Provenance::new("synth", cfg, &[])?.write(&dir)?;
    println!(
        "{} tuples in {} ({} fires simulated, {} reused)",
        manifest.entries.len(),
        dir.display(),
        report.fires_built,
        report.fires_reused
    );
    Ok(dir)
}

/// Tuples of one split read from a dataset directory on demand.
pub struct ManifestSource {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ManifestSource {
    pub fn new(root: &Path, manifest: &Manifest, split: Split) -> Self {
        Self {
            root: root.to_path_buf(),
            entries: manifest.split(split).cloned().collect(),
        }
    }
}

impl DataSource for ManifestSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, i: usize) -> firecast_gan::Result<TrainSample> {
        let t = load_tuple(&self.root, &self.entries[i])?;
        Ok(TrainSample::from(&t.normalized()?))
    }
}

fn open_dataset(cfg: &RunConfig, dataset: &Path) -> Result<Manifest> {
    require(&dataset.join("manifest.json"), "dataset manifest (run `firecast synth` first)")?;
    let manifest = Manifest::load(dataset)?;
    ensure!(
        manifest.config.resolution == cfg.resolution,
        "dataset {} is at resolution {}, configuration asks for {}",
        dataset.display(),
        manifest.config.resolution,
        cfg.resolution
    );
    Ok(manifest)
}

pub fn train(cfg: &RunConfig, dataset: &Path, fresh: bool) -> Result<PathBuf> {
    let manifest = open_dataset(cfg, dataset)?;
    let train_set = ManifestSource::new(dataset, &manifest, Split::Train);
    let val_set = ManifestSource::new(dataset, &manifest, Split::Validation);
    ensure!(!train_set.is_empty(), "dataset {} has no training tuples", dataset.display());
    let dir = train_dir(cfg);
    let ckpt = checkpoint_path(cfg);
    let (gcfg, ccfg, tcfg) = (cfg.generator_config()?, cfg.critic_config()?, cfg.train_config());
    let mut trainer = if ckpt.exists() && !fresh {
        let mut t = Trainer::load(&ckpt)?;
        let mut stored = t.config.clone();
        stored.epochs = tcfg.epochs;
        ensure!(
            t.generator.config == gcfg && t.critic.config == ccfg && stored == tcfg,
            "{} was trained with a different configuration; pass --fresh to start over",
            ckpt.display()
        );
        t.config.epochs = tcfg.epochs;
        log::info!("resuming from epoch {}", t.epoch);
        t
    } else {
        if dir.exists() {
            for f in ["checkpoint.bin", "metrics.jsonl"] {
                let p = dir.join(f);
                if p.exists() {
                    fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
                }
            }
        }
        Trainer::new(gcfg, ccfg, tcfg)?
    };
    create_dir(&dir)?;
    Provenance::new("train", cfg, &[&dataset.join("manifest.json")])?.write(&dir)?;
    println!(
        "training on {} tuples ({} validation), epochs {}..{}",
        train_set.len(),
        val_set.len(),
        trainer.epoch + 1,
        trainer.config.epochs
    );
    let metrics = trainer.run(&train_set, &val_set, Some(&dir), |m| {
        println!(
            "epoch {:>4}  critic {:>9.4}  generator {:>9.4}  penalty {:>8.4}  grad norm {:.3}  mismatch {:.4}",
            m.epoch, m.critic_loss, m.generator_loss, m.penalty, m.grad_norm, m.validation_mismatch
        );
    });
    match metrics {
        Ok(_) => {}
        Err(e @ GanError::Diverged { .. }) => return Err(anyhow!(e).context("training aborted")),
        Err(e) => return Err(e.into()),
    }
    if !ckpt.exists() {
        trainer.save(&ckpt)?;
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(dir)
}

fn load_model(path: &Path) -> Result<Generator> {
    require(path, "checkpoint (run `firecast train` first)")?;
    load_generator(path).with_context(|| format!("loading {}", path.display()))
}

/// Normalizes an hours-valued measurement and a meters-valued terrain for
/// a generator at `resolution`.
fn model_inputs(measurement: &Raster, terrain: &Raster, resolution: usize) -> Result<(Raster, Raster)> {
    ensure!(
        matches!(measurement.kind, FieldKind::Measurement | FieldKind::Arrival),
        "measurement raster holds {:?}, expected hours",
        measurement.kind
    );
    ensure!(terrain.kind == FieldKind::Terrain, "terrain raster holds {:?}, expected meters", terrain.kind);
    measurement.check_same_grid(terrain)?;
    ensure!(
        measurement.rows() == resolution && measurement.cols() == resolution,
        "inputs are {}x{}, model expects {resolution}x{resolution}",
        measurement.rows(),
        measurement.cols()
    );
    Ok((normalize_arrival(measurement)?, normalize_terrain(terrain)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InferSummary {
    pub k: usize,
    pub seed: u64,
    pub contour_times_h: Vec<f64>,
    /// Mean standard deviation over pixels burned in the mean map.
    pub mean_std_burned_h: f64,
}

pub fn infer(cfg: &RunConfig, checkpoint: &Path, measurement: &Path, terrain: &Path, name: &str) -> Result<PathBuf> {
    let g = load_model(checkpoint)?;
    let meas = load_raster(measurement, "measurement raster")?;
    let terr = load_raster(terrain, "terrain raster")?;
    let (m, h) = model_inputs(&meas, &terr, g.config.resolution)?;
    let opts = cfg.sampling();
    let ens = sample_ensemble(&g, &m, &h, &opts)?;
    let dir = cfg.output.join("infer").join(name);
    create_dir(&dir)?;
    save_raster(&ens.mean, &dir.join("mean.fcr"))?;
    save_raster(&ens.std, &dir.join("std.fcr"))?;
    let step = cfg.infer.contour_interval_h;
    let times: Vec<f64> = (1..)
        .map(|i| i as f64 * step)
        .take_while(|&t| t < BACKGROUND_HOURS as f64)
        .collect();
    let contours = times
        .iter()
        .map(|&t| perimeter_at(&ens.mean, t).map(|p| p.contour))
        .collect::<firecast_core::Result<Vec<_>>>()?;
    write_json(&dir.join("contours.geojson"), &contours_to_geojson(&contours, &ens.mean.grid))?;
    let burned: Vec<f64> = ens
        .mean
        .data
        .iter()
        .zip(&ens.std.data)
        .filter(|(m, _)| burned_by(**m, BACKGROUND_HOURS as f64))
        .map(|(_, s)| *s as f64)
        .collect();
    let summary = InferSummary {
        k: ens.k,
        seed: ens.seed,
        contour_times_h: times,
        mean_std_burned_h: if burned.is_empty() { 0.0 } else { burned.iter().sum::<f64>() / burned.len() as f64 },
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Provenance::new("infer", cfg, &[checkpoint, measurement, terrain])?.write(&dir)?;
    println!(
        "{} samples: mean.fcr, std.fcr, contours.geojson ({} levels) in {}",
        ens.k,
        summary.contour_times_h.len(),
        dir.display()
    );
    Ok(dir)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ignition: String,
    pub center: GeoPoint,
    pub records: usize,
    pub measured_pixels: usize,
}

pub fn ingest(cfg: &RunConfig, records: &Path, center: GeoPoint, start_hint: &str, name: &str) -> Result<PathBuf> {
    require(records, "detection record file")?;
    let recs = load_records(records)?;
    let hint = firecast_core::ingest::parse_time(start_hint)?;
    let domain = DomainSpec::new(center, cfg.resolution);
    let ignition = estimate_ignition(&recs, &domain, hint, &cfg.ingest.search)?;
    let meas = grid_viirs(&recs, ignition, &domain)?;
    let dir = cfg.output.join("ingest").join(name);
    create_dir(&dir)?;
    save_raster(&meas, &dir.join("measurement.fcr"))?;
    let summary = IngestSummary {
        ignition: ignition.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        center,
        records: recs.len(),
        measured_pixels: meas.data.iter().filter(|&&v| v < BACKGROUND_HOURS).count(),
    };
    write_json(&dir.join("ignition.json"), &summary)?;
    Provenance::new("ingest", cfg, &[records])?.write(&dir)?;
    println!("ignition {} ; measurement.fcr in {}", summary.ignition, dir.display());
    Ok(dir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub fire: String,
    pub time_h: f64,
    pub sc: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub agreement_px: u64,
    pub false_negative_px: u64,
    pub false_positive_px: u64,
}

fn evaluate_one(f: &EvalFire) -> Result<FireEvaluation> {
    let mean = load_raster(&f.mean, "mean raster")?;
    ensure!(mean.kind == FieldKind::Arrival, "{} is not an arrival-time raster", f.mean.display());
    match (&f.perimeter, &f.truth) {
        (Some(p), None) => {
            require(p, "reference perimeter")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(evaluate_fire(&mean, &parse_polygons(&text)?, f.time_h)?)
        }
        (None, Some(t)) => {
            let truth = load_raster(t, "reference arrival raster")?;
            let mask = truth.map(FieldKind::Mask, |v| burned_by(v, f.time_h) as u8 as f32);
            Ok(evaluate_masks(&mean, &mask, f.time_h)?)
        }
        _ => bail!("fire {:?} needs exactly one of a perimeter file or a truth raster", f.name),
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn eval(cfg: &RunConfig, fires: &[EvalFire]) -> Result<PathBuf> {
    ensure!(!fires.is_empty(), "no fires to evaluate: pass --mean with --perimeter or --truth, or list [[eval.fires]]");
    let dir = cfg.output.join("eval");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    let mut inputs: Vec<&Path> = Vec::new();
    for f in fires {
        let ev = evaluate_one(f).with_context(|| format!("evaluating {}", f.name))?;
        save_raster(&ev.agreement, &dir.join(format!("agreement_{}.fcr", safe_name(&f.name))))?;
        inputs.push(&f.mean);
        inputs.extend(f.perimeter.as_deref().into_iter().chain(f.truth.as_deref()));
        rows.push(ReportRow {
            fire: f.name.clone(),
            time_h: f.time_h,
            sc: ev.scores.sc,
            pod: ev.scores.pod,
            far: ev.scores.far,
            agreement_px: ev.areas.a,
            false_negative_px: ev.areas.b,
            false_positive_px: ev.areas.c,
        });
    }
    let mut md = String::from("| Fire | Time (h) | SC | POD | FAR | A (px) | B (px) | C (px) |\n");
    md.push_str("|---|---:|---:|---:|---:|---:|---:|---:|\n");
    let mut csv = csv::Writer::from_path(dir.join("report.csv"))?;
    for r in &rows {
        md.push_str(&format!(
            "| {} | {:.1} | {} | {} | {} | {} | {} | {} |\n",
            r.fire,
            r.time_h,
            fmt_metric(r.sc),
            fmt_metric(r.pod),
            fmt_metric(r.far),
            r.agreement_px,
            r.false_negative_px,
            r.false_positive_px
        ));
        csv.serialize(r)?;
    }
    csv.flush()?;
    let avg = |f: fn(&ReportRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    md.push_str(&format!(
        "| Average | | {} | {} | {} | | | |\n",
        fmt_metric(avg(|r| r.sc)),
        fmt_metric(avg(|r| r.pod)),
        fmt_metric(avg(|r| r.far))
    ));
    fs::write(dir.join("report.md"), &md)?;
    write_json(&dir.join("report.json"), &rows)?;
    Provenance::new("eval", cfg, &inputs)?.write(&dir)?;
    print!("{md}");
    Ok(dir)
}

pub fn ablate(cfg: &RunConfig, checkpoint: &Path, dataset: &Path) -> Result<PathBuf> {
    let g = load_model(checkpoint)?;
    let manifest = open_dataset(cfg, dataset)?;
    let mut entries: Vec<&ManifestEntry> = manifest.split(Split::Validation).collect();
    ensure!(!entries.is_empty(), "dataset {} has no validation tuples", dataset.display());
    if entries.len() < cfg.ablate.cases {
        log::warn!("only {} validation tuples available, {} requested", entries.len(), cfg.ablate.cases);
    }
    entries.truncate(cfg.ablate.cases);
    let cases = entries
        .iter()
        .map(|e| {
            let u = load_tuple(dataset, e)?.normalized()?;
            Ok(AblationInput {
                measurement: u.measurement,
                terrain: u.terrain,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = firecast_core::ensemble::SamplingOptions {
        k: cfg.ablate.k,
        ..cfg.sampling()
    };
    let report = terrain_ablation(&g, &cases, &opts, cfg.ablate.bins, cfg.ablate.range_h)?;
    let dir = cfg.output.join("ablate");
    create_dir(&dir)?;
    write_json(&dir.join("ablation.json"), &report)?;
    write_histogram_csv(&report.histogram, &dir.join("histogram.csv"))?;
    Provenance::new("ablate", cfg, &[checkpoint, &dataset.join("manifest.json")])?.write(&dir)?;
    println!(
        "{} cases, {} pixels pooled ({} excluded): {:.1}% within 30 min, mean difference {:.2} min",
        cases.len(),
        report.pixels_total - report.pixels_excluded,
        report.pixels_excluded,
        100.0 * report.frac_within_half_hour,
        60.0 * report.mean_diff_h
    );
    Ok(dir)
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramRow {
    lo_h: f64,
    hi_h: f64,
    count: u64,
}

pub fn write_histogram_csv(h: &Histogram, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for (i, &count) in h.counts.iter().enumerate() {
        w.serialize(HistogramRow {
            lo_h: h.edges[i],
            hi_h: h.edges[i + 1],
            count,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    match ext {
        "json" => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let report: AblationReport = serde_json::from_str(&text).context("not an ablation report")?;
            Ok(report.histogram)
        }
        "csv" => {
            let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
            let rows = r.deserialize().collect::<std::result::Result<Vec<HistogramRow>, _>>()?;
            ensure!(!rows.is_empty(), "{} has no histogram rows", path.display());
            let mut edges: Vec<f64> = rows.iter().map(|r| r.lo_h).collect();
            edges.push(rows[rows.len() - 1].hi_h);
            Ok(Histogram {
                edges,
                counts: rows.iter().map(|r| r.count).collect(),
            })
        }
        _ => bail!("unknown histogram format {}", path.display()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Decide from the file type.
    Auto,
    /// Every raster argument in one figure, side by side.
    Panels,
    Histogram,
}

fn title_for(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("raster")
        .replace('_', " ")
        .to_uppercase()
}

pub fn plot(paths: &[PathBuf], kind: PlotKind, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    ensure!(!paths.is_empty(), "no artifacts to plot");
    for p in paths {
        require(p, "artifact")?;
    }
    let ext = |p: &Path| p.extension().and_then(|e| e.to_str()).unwrap_or_default().to_string();
    let target = |p: &Path| -> PathBuf {
        match out {
            Some(o) if paths.len() == 1 || kind == PlotKind::Panels => o.to_path_buf(),
            Some(o) => o.join(p.with_extension("png").file_name().unwrap()),
            None => p.with_extension("png"),
        }
    };
    let mut written = Vec::new();
    match kind {
        PlotKind::Panels => {
            let panels = paths
                .iter()
                .map(|p| Ok((title_for(p), load_raster(p, "raster")?)))
                .collect::<Result<Vec<_>>>()?;
            let dst = target(&paths[0]);
            plot::save_png(&plot::render_panels(&panels)?, &dst)?;
            written.push(dst);
        }
        PlotKind::Histogram => {
            for p in paths {
                let dst = target(p);
                plot::save_png(&plot::render_histogram(&read_histogram(p)?, "PIXELWISE DIFFERENCE")?, &dst)?;
                written.push(dst);
            }
        }
        PlotKind::Auto => {
            for p in paths {
                let img = match ext(p).as_str() {
                    "fcr" => plot::render_panels(&[(title_for(p), load_raster(p, "raster")?)])?,
                    "csv" | "json" => plot::render_histogram(&read_histogram(p)?, "PIXELWISE DIFFERENCE")?,
                    other => bail!("unknown artifact kind {:?} for {}", other, p.display()),
                };
                let dst = target(p);
                plot::save_png(&img, &dst)?;
                written.push(dst);
            }
        }
    }
    for w in &written {
        println!("{}", w.display());
    }
    Ok(written)
}
