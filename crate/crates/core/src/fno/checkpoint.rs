//! Model checkpoints: one `PEFNO1` container per parameter tensor plus a
//! `model.manifest` holding the configuration, output scale and file hashes.

use std::fs;
use std::path::Path;

use super::{FnoConfig, FnoModel};
use crate::error::{Error, Result};
use crate::field::{read_container, write_container};
use crate::manifest::{fmt_f64, sha256_file, Manifest};

pub const MODEL_MANIFEST: &str = "model.manifest";

/// Writes `model` into `dir`. Entries of `extra` (seeds, provenance) are
/// appended to the manifest.
pub fn save_checkpoint(dir: &Path, model: &FnoModel, extra: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let c = model.config();
    let mut m = Manifest::new();
    m.set("fno.layers", c.n_layers);
    m.set("fno.width", c.width);
    m.set("fno.modes", c.modes);
    m.set("fno.head", c.head);
    m.set("fno.activation", c.activation);
    m.set("fno.fbar_input", c.fbar_input);
    m.set("out_scale", fmt_f64(model.out_scale()));
    for (name, range) in c.layout().named() {
        let file = format!("{name}.pefno");
        let path = dir.join(&file);
        let data = &model.params()[range];
        write_container(&path, 1, data.len(), &[data])?;
        m.set(format!("sha256.{file}"), sha256_file(&path)?);
    }
    for (k, v) in extra.entries() {
        m.set(k.clone(), v);
    }
    m.write(&dir.join(MODEL_MANIFEST))
}

pub fn load_checkpoint(dir: &Path) -> Result<(FnoModel, Manifest)> {
    let m = Manifest::read(&dir.join(MODEL_MANIFEST))?;
    let config = FnoConfig {
        n_layers: m.require("fno.layers")?,
        width: m.require("fno.width")?,
        modes: m.require("fno.modes")?,
        head: m.require::<String>("fno.head")?.parse()?,
        activation: m.require::<String>("fno.activation")?.parse()?,
        fbar_input: m.require("fno.fbar_input")?,
    };
    config.validate()?;
    let out_scale: f64 = m.require("out_scale")?;
    let layout = config.layout();
    let mut params = vec![0.0; layout.len];
    for (name, range) in layout.named() {
        let path = dir.join(format!("{name}.pefno"));
        let c = read_container(&path)?;
        if c.channels.len() != 1 || c.n1 != 1 || c.n2 != range.len() {
            return Err(Error::Format {
                path,
                field: "n2",
                detail: format!("expected one channel of {} values", range.len()),
            });
        }
        params[range].copy_from_slice(&c.channels[0]);
    }
    Ok((FnoModel::from_params(config, params, out_scale)?, m))
}
