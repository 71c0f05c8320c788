//! One CSV per run: a fixed header, one row per optimizer step, and
//! per-epoch validation rows flagged by the `phase` column. Rows are
//! flushed as they are written so a diverging run leaves partial metrics
//! behind.

use crate::analysis::DiagnosticsRecord;
use crate::error::Result;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const HEADER: &str = "phase,epoch,iteration,loss,accuracy,con1_ratio,con2_ratio,angle_mn_deg,angle_gn_deg,angle_bp_deg,angle_ssa_deg,max_real_eig_api,max_real_eig_jq";

pub struct MetricsWriter {
    out: BufWriter<File>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write_row(
        &mut self,
        phase: &str,
        epoch: usize,
        iteration: usize,
        loss: f64,
        accuracy: Option<f64>,
        diag: Option<&DiagnosticsRecord>,
    ) -> Result<()> {
        let (con1, con2, mn, gn, bp, ssa, api, jq) = match diag {
            Some(d) => (
                Some(d.con1_ratio),
                Some(d.con2_ratio),
                d.angle_mn_deg,
                d.angle_gn_deg,
                d.angle_bp_deg,
                d.angle_ssa_deg,
                Some(d.max_real_eig_api),
                Some(d.max_real_eig_jq),
            ),
            None => (None, None, None, None, None, None, None, None),
        };
        writeln!(
            self.out,
            "{phase},{epoch},{iteration},{loss},{},{},{},{},{},{},{},{},{}",
            fmt_opt(accuracy),
            fmt_opt(con1),
            fmt_opt(con2),
            fmt_opt(mn),
            fmt_opt(gn),
            fmt_opt(bp),
            fmt_opt(ssa),
            fmt_opt(api),
            fmt_opt(jq),
        )?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn rows_have_fixed_width_and_empty_optionals() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.write_row("train", 0, 1, 0.5, None, None).unwrap();
        let diag = DiagnosticsRecord {
            iteration: 2,
            con1_ratio: 0.1,
            con2_ratio: 0.9,
            angle_mn_deg: Some(10.0),
            angle_gn_deg: None,
            angle_bp_deg: Some(20.0),
            angle_ssa_deg: Some(0.5),
            max_real_eig_api: -0.3,
            max_real_eig_jq: 0.8,
            train_loss: 0.4,
        };
        w.write_row("train", 0, 2, 0.4, Some(0.75), Some(&diag)).unwrap();
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HEADER);
        let cols = HEADER.split(',').count();
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), cols, "row '{line}'");
        }
        assert!(lines[1].contains("train,0,1,0.5,,,,,,,,,"));
        assert!(lines[2].contains("0.75"));
        assert!(lines[2].contains(",,"), "empty angle_gn field: {}", lines[2]);
    }
}
