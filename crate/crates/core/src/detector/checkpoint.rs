//! Checkpoint directories: one FFTN file per parameter plus `manifest.txt`.
//!
//! ```text
//! ffavod-checkpoint 1
//! config {"height":64,...}
//! fusion tag=learned n=2 mode=shared bias=0 layout=symmetric
//! param backbone.conv1.weight backbone.conv1.weight.fftn 16,3,3,3
//! ...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::tensor::io;

pub const MANIFEST: &str = "manifest.txt";
const MAGIC: &str = "ffavod-checkpoint 1";

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn save(det: &Detector, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = format!(
        "{}\nconfig {}\nfusion {}\n",
        MAGIC,
        serde_json::to_string(&det.cfg)?,
        det.fusion.header()
    );
    for (name, t) in det.params() {
        let file = format!("{}.fftn", name);
        io::save(dir.join(&file), t)?;
        manifest.push_str(&format!(
            "param {} {} {}\n",
            name,
            file,
            shape_str(t.shape())
        ));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Detector> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format(format!(
            "{} is not a checkpoint manifest",
            dir.display()
        )));
    }
    let field = |line: Option<&str>, key: &str| -> Result<String> {
        line.and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("manifest lacks '{}' line", key)))
    };
    let cfg: DetectorConfig = serde_json::from_str(&field(lines.next(), "config")?)?;
    let fusion = FusionStrategy::from_header(&field(lines.next(), "fusion")?, cfg.channels)?;
    let mut files = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["param", name, file, shape] => {
                files.insert(name.to_string(), (file.to_string(), shape.to_string()));
            }
            _ => return Err(Error::Format(format!("bad manifest line '{}'", line))),
        }
    }
    let mut det = Detector::new(cfg, 0)?.with_fusion(fusion)?;
    let expected = det.params().len();
    if files.len() != expected {
        return Err(Error::Format(format!(
            "manifest lists {} parameters, model has {}",
            files.len(),
            expected
        )));
    }
    for (name, p) in det.params_mut() {
        let (file, shape) = files
            .get(&name)
            .ok_or_else(|| Error::Format(format!("manifest lacks parameter '{}'", name)))?;
        let t = io::load(dir.join(file))?;
        if t.shape() != p.shape() || *shape != shape_str(p.shape()) {
            return Err(Error::Format(format!(
                "parameter '{}' has shape {:?}, model expects {:?}",
                name,
                t.shape(),
                p.shape()
            )));
        }
        *p = t;
    }
    Ok(det)
}
