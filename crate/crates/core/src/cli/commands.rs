use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::RunConfig;
use super::ppm::heatmap;
use crate::error::{Error, Result};
use crate::field::{read_container, read_tensor, write_container, write_tensor, GridSpec, Mat3, TensorField};
use crate::fno::{load_checkpoint, save_checkpoint, FnoConfig, FnoModel, ModelInput, STRESS_SLOTS};
use crate::manifest::{fmt_f64, sha256_file, Manifest};
use crate::mechanics::{
    draw_microstructure, equilibrium_residual, generate_dataset, read_material, solve_equilibrium,
    write_material, DatasetSpec, LoadCase, MaterialField, Sample, SampleInfo, POISSON_RANGE, YOUNGS_RANGE,
};
use crate::training::{evaluate, train, weight_matrix, write_metrics_csv, TrainingSet};

pub const MICRO_MANIFEST: &str = "micro.manifest";
pub const DATASET_MANIFEST: &str = "dataset.manifest";
pub const TRAIN_MANIFEST: &str = "train.manifest";
pub const EVAL_MANIFEST: &str = "eval.manifest";
pub const PLOTS_MANIFEST: &str = "plots.manifest";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// The model keeps `modes` Fourier modes per axis, which the grid must hold.
fn check_grid(fno: &FnoConfig, grid: &GridSpec, what: &Path) -> Result<()> {
    if fno.modes > grid.n1() / 2 || fno.modes > grid.n2() / 2 {
        return Err(Error::Config(format!(
            "{}: {}x{} grid cannot hold {} modes per axis",
            what.display(),
            grid.n1(),
            grid.n2(),
            fno.modes
        )));
    }
    Ok(())
}

pub fn sample_name(i: usize) -> String {
    format!("sample_{i:04}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::file(dir))
}

/// Manifest header shared by every command: command name, version and the
/// full effective configuration.
fn base_manifest(command: &str, cfg: &RunConfig) -> Manifest {
    let mut m = Manifest::new();
    m.set("command", command);
    m.set("version", env!("CARGO_PKG_VERSION"));
    for (k, v) in cfg.resolved.entries() {
        m.set(format!("config.{k}"), v);
    }
    m
}

fn record_hash(m: &mut Manifest, dir: &Path, file: &str) -> Result<()> {
    m.set(format!("sha256.{file}"), sha256_file(&dir.join(file))?);
    Ok(())
}

fn check_hashes(m: &Manifest, dir: &Path) -> Result<usize> {
    let mut n = 0;
    for (k, v) in m.entries() {
        if let Some(file) = k.strip_prefix("sha256.") {
            let got = sha256_file(&dir.join(file))?;
            if &got != v {
                return Err(Error::Validation(format!(
                    "{}: checksum mismatch (manifest {v}, file {got})",
                    dir.join(file).display()
                )));
            }
            n += 1;
        }
    }
    Ok(n)
}

fn record_info(m: &mut Manifest, name: &str, info: &SampleInfo) {
    m.set(format!("{name}.seed"), info.seed);
    m.set(format!("{name}.grains"), info.grains);
    m.set(format!("{name}.rejected"), info.rejected);
}

pub fn gen_micro(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.micro_dir;
    create_dir(dir)?;
    let drawn: Vec<(MaterialField, SampleInfo)> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| draw_microstructure(&cfg.grid, cfg.grains, cfg.seed, i, 0))
        .collect::<Result<_>>()?;
    let mut m = base_manifest("gen-micro", cfg);
    m.set("count", cfg.n_samples);
    for (i, (material, info)) in drawn.iter().enumerate() {
        let name = sample_name(i);
        let file = format!("{name}.material");
        write_material(&dir.join(&file), material)?;
        record_info(&mut m, &name, info);
        record_hash(&mut m, dir, &file)?;
    }
    m.write(&dir.join(MICRO_MANIFEST))?;
    println!("wrote {} microstructures to {}", cfg.n_samples, dir.display());
    Ok(())
}

fn solve_from_micro(cfg: &RunConfig) -> Result<(Vec<Sample>, Manifest)> {
    let micro = Manifest::read(&cfg.micro_dir.join(MICRO_MANIFEST))?;
    let count: usize = micro.require("count")?;
    let l: f64 = micro.require("config.grid.l")?;
    if count < cfg.n_samples {
        return Err(Error::Config(format!(
            "{} holds {count} microstructures, data.n asks for {}",
            cfg.micro_dir.display(),
            cfg.n_samples
        )));
    }
    let materials = (0..cfg.n_samples)
        .map(|i| read_material(&cfg.micro_dir.join(format!("{}.material", sample_name(i))), l))
        .collect::<Result<Vec<_>>>()?;
    check_hashes(&micro, &cfg.micro_dir)?;
    let samples = materials
        .par_iter()
        .map(|m| solve_equilibrium(m, &cfg.load, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, micro))
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.data_dir;
    let mut m = base_manifest("gen-data", cfg);
    let samples = if cfg.from_micro {
        let (samples, micro) = solve_from_micro(cfg)?;
        m.set("source", "micro");
        m.set("source.sha256", sha256_file(&cfg.micro_dir.join(MICRO_MANIFEST))?);
        for i in 0..samples.len() {
            let name = sample_name(i);
            for key in ["seed", "grains"] {
                let k = format!("{name}.{key}");
                if let Some(v) = micro.get(&k) {
                    m.set(k, v);
                }
            }
        }
        samples
    } else {
        let spec = DatasetSpec {
            n_dat: cfg.n_samples,
            grid: cfg.grid,
            load: cfg.load,
            grains: cfg.grains,
            seed: cfg.seed,
            solver: cfg.solver,
            redraw_budget: cfg.redraw,
        };
        let data = generate_dataset(&spec)?;
        m.set("source", "inline");
        for (i, info) in data.info.iter().enumerate() {
            record_info(&mut m, &sample_name(i), info);
        }
        data.samples
    };
    create_dir(dir)?;
    m.set("count", samples.len());
    let mut worst: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let name = sample_name(i);
        m.set(format!("{name}.residual"), fmt_f64(s.residual));
        m.set(format!("{name}.iterations"), s.iterations);
        worst = worst.max(s.residual);
        let (fm, fs) = (format!("{name}.material"), format!("{name}.stress"));
        write_material(&dir.join(&fm), &s.material)?;
        write_tensor(&dir.join(&fs), &s.stress)?;
        record_hash(&mut m, dir, &fm)?;
        record_hash(&mut m, dir, &fs)?;
    }
    m.write(&dir.join(DATASET_MANIFEST))?;
    println!(
        "wrote {} samples to {} (max residual {})",
        samples.len(),
        dir.display(),
        fmt_f64(worst)
    );
    Ok(())
}

/// Dataset read back from a `gen-data` directory.
pub struct StoredDataset {
    pub manifest: Manifest,
    pub materials: Vec<MaterialField>,
    pub stresses: Vec<TensorField>,
    pub load: LoadCase,
}

fn stored_load(m: &Manifest) -> Result<LoadCase> {
    let f = |k: &str| m.require::<f64>(&format!("config.load.{k}"));
    LoadCase::new([[f("F11")?, f("F12")?, 0.0], [f("F21")?, f("F22")?, 0.0], [0.0, 0.0, 1.0]])
}

fn dataset_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(DATASET_MANIFEST);
    if !path.is_file() {
        return Err(Error::Validation(format!("{}: no dataset here (missing {DATASET_MANIFEST})", dir.display())));
    }
    Manifest::read(&path)
}

pub fn read_sample(dir: &Path, m: &Manifest, i: usize) -> Result<(MaterialField, TensorField)> {
    let l: f64 = m.require("config.grid.l")?;
    let name = sample_name(i);
    let material = read_material(&dir.join(format!("{name}.material")), l)?;
    let stress_path = dir.join(format!("{name}.stress"));
    let stress = read_tensor(&stress_path, l)?;
    if !stress.grid().same_shape(material.grid()) || !stress.is_plane_layout() {
        return Err(Error::Format {
            path: stress_path,
            field: "payload",
            detail: "stress does not match its material grid or plane layout".into(),
        });
    }
    Ok((material, stress))
}

pub fn read_dataset(dir: &Path, limit: Option<usize>) -> Result<StoredDataset> {
    let manifest = dataset_manifest(dir)?;
    let count: usize = manifest.require("count")?;
    let n = limit.map_or(count, |k| k.min(count));
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| read_sample(dir, &manifest, i))
        .collect::<Result<Vec<_>>>()?;
    let (materials, stresses) = pairs.into_iter().unzip();
    let load = stored_load(&manifest)?;
    Ok(StoredDataset {
        manifest,
        materials,
        stresses,
        load,
    })
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let stored = read_dataset(&cfg.data_dir, Some(cfg.n_samples))?;
    check_grid(&cfg.fno, stored.materials[0].grid(), &cfg.data_dir)?;
    let data = TrainingSet::new(&stored.materials, stored.stresses, stored.load.fbar(), cfg.fno.fbar_input)?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    let mut extra = Manifest::new();
    extra.set("init_seed", cfg.seed);
    extra.set("train_seed", cfg.train.seed);
    extra.set("data.count", data.len());
    extra.set("data.sha256", sha256_file(&cfg.data_dir.join(DATASET_MANIFEST))?);
    let mut model = FnoModel::new(cfg.fno, cfg.seed)?;
    let metrics = out.join(METRICS_FILE);
    let checkpoint = out.join(CHECKPOINT_DIR);
    let mut rows = Vec::new();
    let result = train(&mut model, &data, &cfg.train, |model, row| {
        rows.push(*row);
        write_metrics_csv(&metrics, &rows)?;
        let mut e = extra.clone();
        e.set("epoch", row.epoch);
        save_checkpoint(&checkpoint, model, &e)?;
        log::info!("epoch {}: L_dat {} L_div {}", row.epoch, fmt_f64(row.l_dat), fmt_f64(row.l_div));
        Ok(())
    });
    if let Err(Error::NonFiniteLoss { epoch, parameters, .. }) = &result {
        let snapshot = FnoModel::from_params(*model.config(), parameters.clone(), model.out_scale())
            .unwrap_or_else(|_| model.clone());
        let mut e = extra.clone();
        e.set("epoch", epoch);
        e.set("non_finite", true);
        save_checkpoint(&out.join("nonfinite"), &snapshot, &e)?;
    }
    let rows = result?;
    let mut m = base_manifest("train", cfg);
    for (k, v) in extra.entries() {
        m.set(k.clone(), v);
    }
    m.set("out_scale", fmt_f64(model.out_scale()));
    record_hash(&mut m, out, METRICS_FILE)?;
    record_hash(&mut m, out, &format!("{CHECKPOINT_DIR}/model.manifest"))?;
    m.write(&out.join(TRAIN_MANIFEST))?;
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    println!(
        "trained {} epochs: L_dat {} -> {}, L_div {} -> {}",
        cfg.train.epochs,
        fmt_f64(first.l_dat),
        fmt_f64(last.l_dat),
        fmt_f64(first.l_div),
        fmt_f64(last.l_div)
    );
    Ok(())
}

pub const EVAL_SUMMARY: &str = "summary.txt";

pub fn eval_cmd(cfg: &RunConfig, index: usize) -> Result<()> {
    let (model, _) = load_checkpoint(&cfg.checkpoint)?;
    let manifest = dataset_manifest(&cfg.data_dir)?;
    let count: usize = manifest.require("count")?;
    if index >= count {
        return Err(Error::Config(format!("sample {index} out of range (dataset holds {count})")));
    }
    let (material, p_dat) = read_sample(&cfg.data_dir, &manifest, index)?;
    check_grid(model.config(), material.grid(), &cfg.data_dir)?;
    let load = stored_load(&manifest)?;
    let fbar: Option<&Mat3> = model.config().fbar_input.then(|| load.fbar());
    let input = ModelInput::new(&material, fbar);
    let w = weight_matrix(&p_dat)?;
    let e = evaluate(&model, &input, &p_dat, &w)?;

    let dir = &cfg.eval_dir;
    create_dir(dir)?;
    let g = *e.stress.grid();
    write_tensor(&dir.join("prediction.stress"), &e.stress)?;
    let err: Vec<&[f64]> = e.error.iter().map(Vec::as_slice).collect();
    write_container(&dir.join("error.field"), g.n1(), g.n2(), &err)?;
    let div: Vec<&[f64]> = e.divergence.iter().map(Vec::as_slice).collect();
    write_container(&dir.join("divergence.field"), g.n1(), g.n2(), &div)?;

    let mut s = Manifest::new();
    s.set("sample", index);
    s.set("L_dat", fmt_f64(e.l_dat));
    s.set("L_div", fmt_f64(e.l_div));
    for (k, (r, c)) in STRESS_SLOTS.iter().enumerate() {
        s.set(format!("mae_{}{}", r + 1, c + 1), fmt_f64(e.mae[k]));
    }
    s.set("max_div", fmt_f64(e.max_div));
    s.write(&dir.join(EVAL_SUMMARY))?;
    print!("{}", s.render());

    let mut m = base_manifest("eval", cfg);
    m.set("checkpoint.sha256", sha256_file(&cfg.checkpoint.join("model.manifest"))?);
    for f in ["prediction.stress", "error.field", "divergence.field", EVAL_SUMMARY] {
        record_hash(&mut m, dir, f)?;
    }
    m.write(&dir.join(EVAL_MANIFEST))
}

fn channel_names(path: &Path, count: usize) -> Vec<String> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match (ext, count) {
        ("material", 2) => vec!["E".into(), "nu".into()],
        (_, 9) => (0..9).map(|k| format!("P{}{}", k / 3 + 1, k % 3 + 1)).collect(),
        (_, 5) => STRESS_SLOTS.iter().map(|(r, c)| format!("{}{}", r + 1, c + 1)).collect(),
        _ => (0..count).map(|k| format!("c{k}")).collect(),
    }
}

pub fn export_plots(cfg: &RunConfig, files: &[PathBuf]) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config("export-plots needs at least one field file".into()));
    }
    let dir = &cfg.plots_dir;
    create_dir(dir)?;
    let mut m = base_manifest("export-plots", cfg);
    for path in files {
        let c = read_container(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
        for (data, name) in c.channels.iter().zip(channel_names(path, c.channels.len())) {
            let (img, lo, hi) = heatmap(c.n1, c.n2, data)?;
            let file = format!("{stem}_{name}.ppm");
            let out = dir.join(&file);
            fs::write(&out, img).map_err(Error::file(&out))?;
            record_hash(&mut m, dir, &file)?;
            println!("{} min={} max={}", out.display(), fmt_f64(lo), fmt_f64(hi));
        }
    }
    m.write(&dir.join(PLOTS_MANIFEST))
}

fn check_material_ranges(path: &Path, m: &MaterialField) -> Result<()> {
    let inside = |v: &[f64], (lo, hi): (f64, f64)| v.iter().all(|x| (lo..=hi).contains(x));
    if !inside(m.youngs(), YOUNGS_RANGE) || !inside(m.poisson(), POISSON_RANGE) {
        return Err(Error::Validation(format!("{}: properties outside the sampling ranges", path.display())));
    }
    Ok(())
}

/// Checks a microstructure, dataset or checkpoint directory.
pub fn verify(dir: &Path) -> Result<()> {
    if dir.join(DATASET_MANIFEST).is_file() {
        let m = dataset_manifest(dir)?;
        let hashed = check_hashes(&m, dir)?;
        let count: usize = m.require("count")?;
        let tol: f64 = m.require("config.solver.tol")?;
        let residuals = (0..count)
            .into_par_iter()
            .map(|i| {
                let (material, stress) = read_sample(dir, &m, i)?;
                check_material_ranges(&dir.join(format!("{}.material", sample_name(i))), &material)?;
                let r = equilibrium_residual(&stress);
                if r > tol {
                    return Err(Error::Validation(format!(
                        "{}: residual {} exceeds tolerance {}",
                        dir.join(format!("{}.stress", sample_name(i))).display(),
                        fmt_f64(r),
                        fmt_f64(tol)
                    )));
                }
                Ok(r)
            })
            .collect::<Result<Vec<f64>>>()?;
        let worst = residuals.iter().fold(0.0f64, |a, &b| a.max(b));
        println!("ok: {count} samples, {hashed} checksums, max residual {}", fmt_f64(worst));
    } else if dir.join(MICRO_MANIFEST).is_file() {
        let m = Manifest::read(&dir.join(MICRO_MANIFEST))?;
        let hashed = check_hashes(&m, dir)?;
        let count: usize = m.require("count")?;
        let l: f64 = m.require("config.grid.l")?;
        for i in 0..count {
            let path = dir.join(format!("{}.material", sample_name(i)));
            check_material_ranges(&path, &read_material(&path, l)?)?;
        }
        println!("ok: {count} microstructures, {hashed} checksums");
    } else if dir.join("model.manifest").is_file() {
        let m = Manifest::read(&dir.join("model.manifest"))?;
        let hashed = check_hashes(&m, dir)?;
        let (model, _) = load_checkpoint(dir)?;
        println!("ok: checkpoint with {} parameters, {hashed} checksums", model.params().len());
    } else {
        return Err(Error::Validation(format!("{}: no manifest to verify", dir.display())));
    }
    Ok(())
}
