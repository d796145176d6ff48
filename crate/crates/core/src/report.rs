//! CSV run reports with a fixed schema, plus the helpers used to compare
//! runs for determinism (wall time is measurement noise and is stripped
//! before hashing).

use crate::error::Result;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CSV_HEADER: &str =
    "run_id,arch,K,k,seed,epoch,accuracy,trainable_params,synapse_writes,wall_time_s";

/// One report row; `epoch` is a 1-based number or the literal `final` for
/// the summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub arch: String,
    pub kernels: String,
    pub kernel_sizes: String,
    pub seed: u64,
    pub epoch: String,
    pub accuracy: f64,
    pub trainable_params: usize,
    pub synapse_writes: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvReport {
    pub rows: Vec<CsvRow>,
}

impl CsvReport {
    pub fn push(&mut self, row: CsvRow) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{:.3}\n",
                r.run_id,
                r.arch,
                r.kernels,
                r.kernel_sizes,
                r.seed,
                r.epoch,
                r.accuracy,
                r.trainable_params,
                r.synapse_writes,
                r.wall_time_s
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Join per-conv-layer values for the K and k columns ("16" or "8;12");
/// semicolons keep the CSV comma structure intact.
pub fn join_arch_list(values: &[usize]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// Stable run identifier: digest of the effective configuration.
pub fn derive_run_id(effective_config: &str) -> String {
    let mut h = Sha256::new();
    h.update(effective_config.as_bytes());
    let digest = h.finalize();
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// Drop the wall_time_s column (the last one) from rendered CSV text.
pub fn strip_wall_time(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|line| match line.rfind(',') {
            Some(pos) => &line[..pos],
            None => line,
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn sha256_hex_of(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: &str, acc: f64, wall: f64) -> CsvRow {
        CsvRow {
            run_id: "abc123".into(),
            arch: "1C-1S-FC".into(),
            kernels: "16".into(),
            kernel_sizes: "5".into(),
            seed: 7,
            epoch: epoch.into(),
            accuracy: acc,
            trainable_params: 23_440,
            synapse_writes: 999,
            wall_time_s: wall,
        }
    }

    #[test]
    fn header_and_shape_are_fixed() {
        let mut rep = CsvReport::default();
        rep.push(row("1", 0.5, 1.25));
        rep.push(row("final", 0.625, 2.5));
        let text = rep.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("abc123,1C-1S-FC,16,5,7,1,0.5,23440,999,"));
        assert!(lines[2].contains(",final,"));
        assert_eq!(lines[1].split(',').count(), 10);
    }

    #[test]
    fn wall_time_strips_cleanly() {
        let mut a = CsvReport::default();
        a.push(row("1", 0.5, 1.0));
        let mut b = CsvReport::default();
        b.push(row("1", 0.5, 99.0));
        assert_ne!(a.render(), b.render());
        assert_eq!(strip_wall_time(&a.render()), strip_wall_time(&b.render()));
        assert!(strip_wall_time(&a.render()).lines().next().unwrap().ends_with("synapse_writes"));
    }

    #[test]
    fn run_ids_are_stable_and_sensitive() {
        let a = derive_run_id("train.seed = 1\n");
        let b = derive_run_id("train.seed = 1\n");
        let c = derive_run_id("train.seed = 2\n");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn arch_lists_join_with_semicolons() {
        assert_eq!(join_arch_list(&[16]), "16");
        assert_eq!(join_arch_list(&[8, 12]), "8;12");
    }
}
