//! Artifact IO: CSV/JSON writers stamped with the config hash and seed, the
//! panel CSV schema, and cleanup of partial outputs on failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use invdp_core::types::PanelRow;

/// Tracks files written by one command so a failure can remove partial
/// output.
pub struct ArtifactSet {
    pub dir: PathBuf,
    pub stamp: String,
    written: Vec<PathBuf>,
}

impl ArtifactSet {
    pub fn new(dir: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(ArtifactSet {
            dir: dir.to_path_buf(),
            stamp: format!("# config_hash={config_hash} seed={seed}"),
            written: Vec::new(),
        })
    }

    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut out = String::with_capacity(rows.len() * 64 + 128);
        out.push_str(&self.stamp);
        out.push('\n');
        out.push_str(header);
        out.push('\n');
        for r in rows {
            out.push_str(r);
            out.push('\n');
        }
        fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, value)?;
        file.write_all(b"\n")?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Removes everything written so far (failure path).
    pub fn remove_partial(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

pub const PANEL_HEADER: &str =
    "store_id,product_id,day,inventory,order,demand,sales,price,trailing7,weekend,holiday";

pub fn panel_row_to_csv(r: &PanelRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.store_id,
        r.product_id,
        r.day,
        r.inventory,
        r.order,
        r.demand.map(|d| d.to_string()).unwrap_or_default(),
        r.sales,
        r.price,
        r.trailing7,
        r.weekend as u8,
        r.holiday as u8,
    )
}

pub fn read_panels(path: &Path) -> Result<Vec<PanelRow>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading panel file {}", path.display()))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != PANEL_HEADER {
                bail!(
                    "unexpected panel header at line {}: {line}",
                    lineno + 1
                );
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            bail!("line {}: expected 11 fields, got {}", lineno + 1, f.len());
        }
        rows.push(PanelRow {
            store_id: f[0].parse().context("store_id")?,
            product_id: f[1].parse().context("product_id")?,
            day: f[2].parse().context("day")?,
            inventory: f[3].parse().context("inventory")?,
            order: f[4].parse().context("order")?,
            demand: if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse().context("demand")?)
            },
            sales: f[6].parse().context("sales")?,
            price: f[7].parse().context("price")?,
            trailing7: f[8].parse().context("trailing7")?,
            weekend: f[9] == "1",
            holiday: f[10] == "1",
        });
    }
    if rows.is_empty() {
        bail!("no panel rows in {}", path.display());
    }
    Ok(rows)
}

/// Groups panel rows by (store, product), preserving day order.
pub fn group_by_unit(rows: Vec<PanelRow>) -> Vec<((u32, u32), Vec<PanelRow>)> {
    use std::collections::BTreeMap;
    let mut map: BTreeMap<(u32, u32), Vec<PanelRow>> = BTreeMap::new();
    for r in rows {
        map.entry((r.store_id, r.product_id)).or_default().push(r);
    }
    map.into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|r| r.day);
            (k, v)
        })
        .collect()
}
